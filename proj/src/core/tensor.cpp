#include "tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "errors.hpp"

namespace ldit {

namespace {

std::size_t shape_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 1) throw_dimension("tensor dimension must be >= 1");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape != b.shape)
        throw_dimension(std::string(op) + ": shape mismatch");
}

void require_2d(const Tensor& t, const char* op) {
    if (t.shape.size() != 2)
        throw_dimension(std::string(op) + ": expected a 2-D tensor");
}

}  // namespace

Tensor::Tensor(std::vector<int> shape_, double fill)
    : shape(std::move(shape_)), data(shape_numel(shape), fill) {}

Tensor::Tensor(std::vector<int> shape_, std::vector<double> data_)
    : shape(std::move(shape_)), data(std::move(data_)) {
    if (shape_numel(shape) != data.size())
        throw_dimension("tensor: data size does not match shape");
}

std::size_t Tensor::numel() const { return data.size(); }

int Tensor::rows() const {
    if (shape.size() != 2) throw_dimension("rows(): not a 2-D tensor");
    return shape[0];
}

int Tensor::cols() const {
    if (shape.size() != 2) throw_dimension("cols(): not a 2-D tensor");
    return shape[1];
}

double& Tensor::at(int r, int c) { return data[static_cast<std::size_t>(r) * cols() + c]; }
double Tensor::at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols() + c]; }

bool Tensor::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

void Tensor::check_finite(const char* where) const {
    if (!all_finite())
        throw_numeric(std::string(where) + ": non-finite value");
}

Tensor Tensor::zeros(std::vector<int> shape) { return Tensor(std::move(shape), 0.0); }

Tensor Tensor::full(std::vector<int> shape, double v) { return Tensor(std::move(shape), v); }

Tensor Tensor::identity(int n) {
    Tensor t({n, n}, 0.0);
    for (int i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
}

Tensor Tensor::randn(std::vector<int> shape, std::mt19937_64& rng, double stddev) {
    Tensor t(std::move(shape), 0.0);
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& v : t.data) v = dist(rng);
    return t;
}

Tensor Tensor::rand_uniform(std::vector<int> shape, std::mt19937_64& rng, double lo, double hi) {
    Tensor t(std::move(shape), 0.0);
    std::uniform_real_distribution<double> dist(lo, hi);
    for (double& v : t.data) v = dist(rng);
    return t;
}

void Node::ensure_grad() {
    if (grad.size() != numel()) grad.assign(numel(), 0.0);
}

Var Tape::record(Node n) {
    n.ensure_grad();
    auto var = std::make_shared<Node>(std::move(n));
    nodes_.push_back(var);
    return var;
}

Var Tape::leaf(const Tensor& t) {
    Node n;
    n.value = t;
    n.needs_grad = t.requires_grad;
    return record(std::move(n));
}

Var Tape::constant(const Tensor& t) {
    Node n;
    n.value = t;
    n.value.requires_grad = false;
    n.needs_grad = false;
    return record(std::move(n));
}

Var Tape::matmul(Var a, Var b) {
    require_2d(a->value, "matmul");
    require_2d(b->value, "matmul");
    const int m = a->value.rows(), k = a->value.cols();
    const int k2 = b->value.rows(), n = b->value.cols();
    if (k != k2) throw_dimension("matmul: inner dimensions differ");

    Node out;
    out.value = Tensor({m, n});
    const double* ad = a->value.data.data();
    const double* bd = b->value.data.data();
    double* od = out.value.data.data();
    for (int i = 0; i < m; ++i) {
        for (int p = 0; p < k; ++p) {
            const double av = ad[static_cast<std::size_t>(i) * k + p];
            if (av == 0.0) continue;
            const double* brow = bd + static_cast<std::size_t>(p) * n;
            double* orow = od + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    out.parents = {a, b};
    out.needs_grad = a->needs_grad || b->needs_grad;
    out.backward = [m, k, n](Node& self) {
        Var a = self.parents[0], b = self.parents[1];
        const double* g = self.grad.data();
        if (a->needs_grad) {
            // dA = G * B^T
            const double* bd = b->value.data.data();
            for (int i = 0; i < m; ++i)
                for (int p = 0; p < k; ++p) {
                    double acc = 0.0;
                    const double* grow = g + static_cast<std::size_t>(i) * n;
                    const double* brow = bd + static_cast<std::size_t>(p) * n;
                    for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
                    a->grad[static_cast<std::size_t>(i) * k + p] += acc;
                }
        }
        if (b->needs_grad) {
            // dB = A^T * G
            const double* ad = a->value.data.data();
            for (int i = 0; i < m; ++i) {
                const double* grow = g + static_cast<std::size_t>(i) * n;
                for (int p = 0; p < k; ++p) {
                    const double av = ad[static_cast<std::size_t>(i) * k + p];
                    if (av == 0.0) continue;
                    double* brow = b->grad.data() + static_cast<std::size_t>(p) * n;
                    for (int j = 0; j < n; ++j) brow[j] += av * grow[j];
                }
            }
        }
    };
    return record(std::move(out));
}

Var Tape::transpose(Var a) {
    require_2d(a->value, "transpose");
    const int m = a->value.rows(), n = a->value.cols();
    Node out;
    out.value = Tensor({n, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.value.at(j, i) = a->value.at(i, j);
    out.parents = {a};
    out.needs_grad = a->needs_grad;
    out.backward = [m, n](Node& self) {
        Var a = self.parents[0];
        if (!a->needs_grad) return;
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
                a->grad[static_cast<std::size_t>(i) * n + j] +=
                    self.grad[static_cast<std::size_t>(j) * m + i];
    };
    return record(std::move(out));
}

Var Tape::add(Var a, Var b) {
    require_same_shape(a->value, b->value, "add");
    Node out;
    out.value = a->value;
    for (std::size_t i = 0; i < out.value.numel(); ++i) out.value.data[i] += b->value.data[i];
    out.parents = {a, b};
    out.needs_grad = a->needs_grad || b->needs_grad;
    out.backward = [](Node& self) {
        for (Var& p : self.parents) {
            if (!p->needs_grad) continue;
            for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
        }
    };
    return record(std::move(out));
}

Var Tape::sub(Var a, Var b) {
    require_same_shape(a->value, b->value, "sub");
    Node out;
    out.value = a->value;
    for (std::size_t i = 0; i < out.value.numel(); ++i) out.value.data[i] -= b->value.data[i];
    out.parents = {a, b};
    out.needs_grad = a->needs_grad || b->needs_grad;
    out.backward = [](Node& self) {
        Var a = self.parents[0], b = self.parents[1];
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            if (a->needs_grad) a->grad[i] += self.grad[i];
            if (b->needs_grad) b->grad[i] -= self.grad[i];
        }
    };
    return record(std::move(out));
}

Var Tape::mul(Var a, Var b) {
    require_same_shape(a->value, b->value, "mul");
    Node out;
    out.value = a->value;
    for (std::size_t i = 0; i < out.value.numel(); ++i) out.value.data[i] *= b->value.data[i];
    out.parents = {a, b};
    out.needs_grad = a->needs_grad || b->needs_grad;
    out.backward = [](Node& self) {
        Var a = self.parents[0], b = self.parents[1];
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            if (a->needs_grad) a->grad[i] += self.grad[i] * b->value.data[i];
            if (b->needs_grad) b->grad[i] += self.grad[i] * a->value.data[i];
        }
    };
    return record(std::move(out));
}

Var Tape::add_rowvec(Var a, Var v) {
    require_2d(a->value, "add_rowvec");
    const int m = a->value.rows(), n = a->value.cols();
    if (static_cast<int>(v->value.numel()) != n)
        throw_dimension("add_rowvec: vector length does not match columns");
    Node out;
    out.value = a->value;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out.value.data[static_cast<std::size_t>(i) * n + j] += v->value.data[j];
    out.parents = {a, v};
    out.needs_grad = a->needs_grad || v->needs_grad;
    out.backward = [m, n](Node& self) {
        Var a = self.parents[0], v = self.parents[1];
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) {
                const double g = self.grad[static_cast<std::size_t>(i) * n + j];
                if (a->needs_grad) a->grad[static_cast<std::size_t>(i) * n + j] += g;
                if (v->needs_grad) v->grad[j] += g;
            }
    };
    return record(std::move(out));
}

Var Tape::scale(Var a, double c) {
    Node out;
    out.value = a->value;
    for (double& x : out.value.data) x *= c;
    out.parents = {a};
    out.needs_grad = a->needs_grad;
    out.backward = [c](Node& self) {
        Var a = self.parents[0];
        if (!a->needs_grad) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i) a->grad[i] += c * self.grad[i];
    };
    return record(std::move(out));
}

Var Tape::add_const(Var a, const Tensor& c) {
    require_same_shape(a->value, c, "add_const");
    Node out;
    out.value = a->value;
    for (std::size_t i = 0; i < out.value.numel(); ++i) out.value.data[i] += c.data[i];
    out.parents = {a};
    out.needs_grad = a->needs_grad;
    out.backward = [](Node& self) {
        Var a = self.parents[0];
        if (!a->needs_grad) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i) a->grad[i] += self.grad[i];
    };
    return record(std::move(out));
}

Var Tape::relu(Var a) {
    Node out;
    out.value = a->value;
    for (double& x : out.value.data) x = x > 0.0 ? x : 0.0;
    out.parents = {a};
    out.needs_grad = a->needs_grad;
    out.backward = [](Node& self) {
        Var a = self.parents[0];
        if (!a->needs_grad) return;
        // subgradient at 0 taken as 0
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            if (a->value.data[i] > 0.0) a->grad[i] += self.grad[i];
    };
    return record(std::move(out));
}

Var Tape::silu(Var a) {
    Node out;
    out.value = a->value;
    for (double& x : out.value.data) x = x / (1.0 + std::exp(-x));
    out.parents = {a};
    out.needs_grad = a->needs_grad;
    out.backward = [](Node& self) {
        Var a = self.parents[0];
        if (!a->needs_grad) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double x = a->value.data[i];
            const double s = 1.0 / (1.0 + std::exp(-x));
            a->grad[i] += self.grad[i] * (s + x * s * (1.0 - s));
        }
    };
    return record(std::move(out));
}

Var Tape::softmax_lastdim(Var a) {
    if (a->value.shape.empty()) throw_dimension("softmax: empty shape");
    const int n = a->value.shape.back();
    const std::size_t rows = a->value.numel() / n;
    Node out;
    out.value = a->value;
    for (std::size_t r = 0; r < rows; ++r) {
        double* row = out.value.data.data() + r * n;
        double mx = row[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int j = 0; j < n; ++j) {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
        }
        for (int j = 0; j < n; ++j) row[j] /= sum;
    }
    out.parents = {a};
    out.needs_grad = a->needs_grad;
    out.backward = [n, rows](Node& self) {
        Var a = self.parents[0];
        if (!a->needs_grad) return;
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = self.value.data.data() + r * n;
            const double* g = self.grad.data() + r * n;
            double dot = 0.0;
            for (int j = 0; j < n; ++j) dot += y[j] * g[j];
            for (int j = 0; j < n; ++j) a->grad[r * n + j] += y[j] * (g[j] - dot);
        }
    };
    return record(std::move(out));
}

Var Tape::layernorm(Var a, Var gamma, Var beta, double eps) {
    require_2d(a->value, "layernorm");
    const int m = a->value.rows(), n = a->value.cols();
    if (static_cast<int>(gamma->value.numel()) != n || static_cast<int>(beta->value.numel()) != n)
        throw_dimension("layernorm: affine parameter length mismatch");

    Node out;
    out.value = Tensor({m, n});
    std::vector<double> inv_std(m), xhat(static_cast<std::size_t>(m) * n);
    for (int i = 0; i < m; ++i) {
        const double* row = a->value.data.data() + static_cast<std::size_t>(i) * n;
        double mean = 0.0;
        for (int j = 0; j < n; ++j) mean += row[j];
        mean /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= n;
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[i] = is;
        for (int j = 0; j < n; ++j) {
            const double xh = (row[j] - mean) * is;
            xhat[static_cast<std::size_t>(i) * n + j] = xh;
            out.value.at(i, j) = xh * gamma->value.data[j] + beta->value.data[j];
        }
    }
    out.parents = {a, gamma, beta};
    out.needs_grad = a->needs_grad || gamma->needs_grad || beta->needs_grad;
    out.backward = [m, n, inv_std = std::move(inv_std), xhat = std::move(xhat)](Node& self) {
        Var a = self.parents[0], gamma = self.parents[1], beta = self.parents[2];
        for (int i = 0; i < m; ++i) {
            const double* g = self.grad.data() + static_cast<std::size_t>(i) * n;
            const double* xh = xhat.data() + static_cast<std::size_t>(i) * n;
            if (gamma->needs_grad || beta->needs_grad) {
                for (int j = 0; j < n; ++j) {
                    if (gamma->needs_grad) gamma->grad[j] += g[j] * xh[j];
                    if (beta->needs_grad) beta->grad[j] += g[j];
                }
            }
            if (a->needs_grad) {
                double sum_gy = 0.0, sum_gyx = 0.0;
                for (int j = 0; j < n; ++j) {
                    const double gy = g[j] * gamma->value.data[j];
                    sum_gy += gy;
                    sum_gyx += gy * xh[j];
                }
                for (int j = 0; j < n; ++j) {
                    const double gy = g[j] * gamma->value.data[j];
                    a->grad[static_cast<std::size_t>(i) * n + j] +=
                        inv_std[i] * (gy - sum_gy / n - xh[j] * sum_gyx / n);
                }
            }
        }
    };
    return record(std::move(out));
}

Var Tape::slice_rows(Var a, int r0, int r1) {
    require_2d(a->value, "slice_rows");
    const int m = a->value.rows(), n = a->value.cols();
    if (r0 < 0 || r1 > m || r0 >= r1) throw_dimension("slice_rows: bad range");
    Node out;
    out.value = Tensor({r1 - r0, n});
    std::copy(a->value.data.begin() + static_cast<std::size_t>(r0) * n,
              a->value.data.begin() + static_cast<std::size_t>(r1) * n, out.value.data.begin());
    out.parents = {a};
    out.needs_grad = a->needs_grad;
    out.backward = [r0, n](Node& self) {
        Var a = self.parents[0];
        if (!a->needs_grad) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            a->grad[static_cast<std::size_t>(r0) * n + i] += self.grad[i];
    };
    return record(std::move(out));
}

Var Tape::slice_cols(Var a, int c0, int c1) {
    require_2d(a->value, "slice_cols");
    const int m = a->value.rows(), n = a->value.cols();
    if (c0 < 0 || c1 > n || c0 >= c1) throw_dimension("slice_cols: bad range");
    const int w = c1 - c0;
    Node out;
    out.value = Tensor({m, w});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < w; ++j) out.value.at(i, j) = a->value.at(i, c0 + j);
    out.parents = {a};
    out.needs_grad = a->needs_grad;
    out.backward = [m, n, c0, w](Node& self) {
        Var a = self.parents[0];
        if (!a->needs_grad) return;
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < w; ++j)
                a->grad[static_cast<std::size_t>(i) * n + c0 + j] +=
                    self.grad[static_cast<std::size_t>(i) * w + j];
    };
    return record(std::move(out));
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw_dimension("concat_rows: no parts");
    const int n = parts[0]->value.cols();
    int m = 0;
    for (const Var& p : parts) {
        require_2d(p->value, "concat_rows");
        if (p->value.cols() != n) throw_dimension("concat_rows: column mismatch");
        m += p->value.rows();
    }
    Node out;
    out.value = Tensor({m, n});
    std::size_t off = 0;
    for (const Var& p : parts) {
        std::copy(p->value.data.begin(), p->value.data.end(), out.value.data.begin() + off);
        off += p->value.numel();
    }
    out.parents = parts;
    bool any = false;
    for (const Var& p : parts) any = any || p->needs_grad;
    out.needs_grad = any;
    out.backward = [](Node& self) {
        std::size_t off = 0;
        for (Var& p : self.parents) {
            if (p->needs_grad)
                for (std::size_t i = 0; i < p->numel(); ++i) p->grad[i] += self.grad[off + i];
            off += p->numel();
        }
    };
    return record(std::move(out));
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw_dimension("concat_cols: no parts");
    const int m = parts[0]->value.rows();
    int n = 0;
    std::vector<int> widths;
    for (const Var& p : parts) {
        require_2d(p->value, "concat_cols");
        if (p->value.rows() != m) throw_dimension("concat_cols: row mismatch");
        widths.push_back(p->value.cols());
        n += p->value.cols();
    }
    Node out;
    out.value = Tensor({m, n});
    int c0 = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < widths[k]; ++j)
                out.value.at(i, c0 + j) = parts[k]->value.at(i, j);
        c0 += widths[k];
    }
    out.parents = parts;
    bool any = false;
    for (const Var& p : parts) any = any || p->needs_grad;
    out.needs_grad = any;
    out.backward = [m, n, widths](Node& self) {
        int c0 = 0;
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
            Var& p = self.parents[k];
            if (p->needs_grad)
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < widths[k]; ++j)
                        p->grad[static_cast<std::size_t>(i) * widths[k] + j] +=
                            self.grad[static_cast<std::size_t>(i) * n + c0 + j];
            c0 += widths[k];
        }
    };
    return record(std::move(out));
}

Var Tape::gather_rows(Var table, const std::vector<int>& ids) {
    require_2d(table->value, "gather_rows");
    const int m = table->value.rows(), n = table->value.cols();
    for (int id : ids)
        if (id < 0 || id >= m) throw_validation("gather_rows: id out of range");
    Node out;
    out.value = Tensor({static_cast<int>(ids.size()), n});
    for (std::size_t i = 0; i < ids.size(); ++i)
        std::copy(table->value.data.begin() + static_cast<std::size_t>(ids[i]) * n,
                  table->value.data.begin() + static_cast<std::size_t>(ids[i] + 1) * n,
                  out.value.data.begin() + i * n);
    out.parents = {table};
    out.needs_grad = table->needs_grad;
    out.backward = [ids, n](Node& self) {
        Var t = self.parents[0];
        if (!t->needs_grad) return;
        for (std::size_t i = 0; i < ids.size(); ++i)
            for (int j = 0; j < n; ++j)
                t->grad[static_cast<std::size_t>(ids[i]) * n + j] += self.grad[i * n + j];
    };
    return record(std::move(out));
}

Var Tape::mean_over_rows(Var a) {
    require_2d(a->value, "mean_over_rows");
    const int m = a->value.rows(), n = a->value.cols();
    Node out;
    out.value = Tensor({1, n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.value.data[j] += a->value.at(i, j) / m;
    out.parents = {a};
    out.needs_grad = a->needs_grad;
    out.backward = [m, n](Node& self) {
        Var a = self.parents[0];
        if (!a->needs_grad) return;
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
                a->grad[static_cast<std::size_t>(i) * n + j] += self.grad[j] / m;
    };
    return record(std::move(out));
}

Var Tape::mean_all(Var a) {
    const std::size_t n = a->value.numel();
    Node out;
    out.value = Tensor({1});
    double acc = 0.0;
    for (double v : a->value.data) acc += v;
    out.value.data[0] = acc / static_cast<double>(n);
    out.parents = {a};
    out.needs_grad = a->needs_grad;
    out.backward = [n](Node& self) {
        Var a = self.parents[0];
        if (!a->needs_grad) return;
        const double g = self.grad[0] / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) a->grad[i] += g;
    };
    return record(std::move(out));
}

Var Tape::sum_all(Var a) {
    const std::size_t n = a->value.numel();
    Node out;
    out.value = Tensor({1});
    double acc = 0.0;
    for (double v : a->value.data) acc += v;
    out.value.data[0] = acc;
    out.parents = {a};
    out.needs_grad = a->needs_grad;
    out.backward = [n](Node& self) {
        Var a = self.parents[0];
        if (!a->needs_grad) return;
        for (std::size_t i = 0; i < n; ++i) a->grad[i] += self.grad[0];
    };
    return record(std::move(out));
}

Var Tape::minmax_normalize(Var a) {
    const std::size_t n = a->value.numel();
    std::size_t imin = 0, imax = 0;
    for (std::size_t i = 1; i < n; ++i) {
        if (a->value.data[i] < a->value.data[imin]) imin = i;
        if (a->value.data[i] > a->value.data[imax]) imax = i;
    }
    const double lo = a->value.data[imin], hi = a->value.data[imax];
    Node out;
    out.value = a->value;
    const bool constant = (hi == lo);
    if (constant) {
        std::fill(out.value.data.begin(), out.value.data.end(), 0.0);
    } else {
        const double inv = 1.0 / (hi - lo);
        for (double& v : out.value.data) v = (v - lo) * inv;
    }
    out.parents = {a};
    out.needs_grad = a->needs_grad;
    out.backward = [n, imin, imax, lo, hi, constant](Node& self) {
        Var a = self.parents[0];
        if (!a->needs_grad || constant) return;
        // y_i = (x_i - x_min) / (x_max - x_min), min/max as fixed selections
        const double inv = 1.0 / (hi - lo);
        double dmin = 0.0, dmax = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double g = self.grad[i];
            a->grad[i] += g * inv;
            dmin += g * (-inv + (a->value.data[i] - lo) * inv * inv);
            dmax += g * (-(a->value.data[i] - lo) * inv * inv);
        }
        a->grad[imin] += dmin;
        a->grad[imax] += dmax;
    };
    return record(std::move(out));
}

Var Tape::rope_rotate(Var a, const Tensor& angles) {
    require_2d(a->value, "rope_rotate");
    const int m = a->value.rows(), d = a->value.cols();
    if (d % 2 != 0) throw_dimension("rope_rotate: last dim must be even");
    if (angles.shape != std::vector<int>{m, d / 2})
        throw_dimension("rope_rotate: angle shape must be rows x dim/2");
    Node out;
    out.value = Tensor({m, d});
    for (int i = 0; i < m; ++i)
        for (int k = 0; k < d / 2; ++k) {
            const double c = std::cos(angles.at(i, k));
            const double s = std::sin(angles.at(i, k));
            const double x0 = a->value.at(i, 2 * k);
            const double x1 = a->value.at(i, 2 * k + 1);
            out.value.at(i, 2 * k) = c * x0 - s * x1;
            out.value.at(i, 2 * k + 1) = s * x0 + c * x1;
        }
    out.parents = {a};
    out.needs_grad = a->needs_grad;
    out.backward = [m, d, angles](Node& self) {
        Var a = self.parents[0];
        if (!a->needs_grad) return;
        // inverse rotation applied to the output gradient
        for (int i = 0; i < m; ++i)
            for (int k = 0; k < d / 2; ++k) {
                const double c = std::cos(angles.at(i, k));
                const double s = std::sin(angles.at(i, k));
                const double g0 = self.grad[static_cast<std::size_t>(i) * d + 2 * k];
                const double g1 = self.grad[static_cast<std::size_t>(i) * d + 2 * k + 1];
                a->grad[static_cast<std::size_t>(i) * d + 2 * k] += c * g0 + s * g1;
                a->grad[static_cast<std::size_t>(i) * d + 2 * k + 1] += -s * g0 + c * g1;
            }
    };
    return record(std::move(out));
}

void Tape::backward(Var out) {
    if (out->numel() != 1) throw_dimension("backward: output must be scalar");
    for (Var& n : nodes_) {
        n->ensure_grad();
    }
    out->grad[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        Node& n = **it;
        if (n.backward && n.needs_grad) n.backward(n);
    }
}

Tensor& ParamStore::add(const std::string& name, Tensor t) {
    if (params_.count(name)) throw_validation("param already declared: " + name);
    t.requires_grad = true;
    order_.push_back(name);
    return params_.emplace(name, std::move(t)).first->second;
}

Tensor& ParamStore::get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw_validation("unknown param: " + name);
    return it->second;
}

const Tensor& ParamStore::get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw_validation("unknown param: " + name);
    return it->second;
}

bool ParamStore::has(const std::string& name) const { return params_.count(name) != 0; }

std::size_t ParamStore::total_elems() const {
    std::size_t n = 0;
    for (const auto& [k, v] : params_) n += v.numel();
    return n;
}

void AdamW::step(ParamStore& params, const std::map<std::string, Tensor>& grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (const std::string& name : params.names()) {
        Tensor& p = params.get(name);
        auto git = grads.find(name);
        if (git == grads.end()) continue;  // unused parameter this step
        const Tensor& g = git->second;
        if (g.shape != p.shape) throw_dimension("adamw: grad shape mismatch for " + name);
        Tensor& m = m_.emplace(name, Tensor::zeros(p.shape)).first->second;
        Tensor& v = v_.emplace(name, Tensor::zeros(p.shape)).first->second;
        if (m.shape != p.shape || v.shape != p.shape)
            throw_dimension("adamw: state shape mismatch for " + name);
        for (std::size_t i = 0; i < p.numel(); ++i) {
            // decoupled decay before the moment update
            p.data[i] *= (1.0 - cfg_.lr * cfg_.weight_decay);
            m.data[i] = cfg_.beta1 * m.data[i] + (1.0 - cfg_.beta1) * g.data[i];
            v.data[i] = cfg_.beta2 * v.data[i] + (1.0 - cfg_.beta2) * g.data[i] * g.data[i];
            const double mhat = m.data[i] / bc1;
            const double vhat = v.data[i] / bc2;
            p.data[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

std::map<std::string, double> finite_difference_check(
    const std::function<double(const ParamStore&)>& f,
    const std::function<std::map<std::string, Tensor>(const ParamStore&)>& analytic_grads,
    ParamStore& params, double h) {
    if (h <= 0.0) throw_validation("finite_difference_check: h must be positive");
    std::map<std::string, Tensor> grads = analytic_grads(params);
    std::map<std::string, double> result;
    for (const std::string& name : params.names()) {
        Tensor& p = params.get(name);
        const Tensor& g = grads.count(name) ? grads.at(name) : Tensor::zeros(p.shape);
        // relative to the parameter's gradient magnitude: tiny individual
        // entries would otherwise amplify the O(h^2) truncation noise
        double scale = 1e-8;
        for (std::size_t i = 0; i < p.numel(); ++i)
            scale = std::max(scale, std::abs(g.data[i]));
        double worst_abs = 0.0;
        for (std::size_t i = 0; i < p.numel(); ++i) {
            const double saved = p.data[i];
            p.data[i] = saved + h;
            const double fp = f(params);
            p.data[i] = saved - h;
            const double fm = f(params);
            p.data[i] = saved;
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw_numeric("finite_difference_check: non-finite objective");
            const double central = (fp - fm) / (2.0 * h);
            worst_abs = std::max(worst_abs, std::abs(g.data[i] - central));
        }
        result[name] = worst_abs / scale;
    }
    return result;
}

}  // namespace ldit
