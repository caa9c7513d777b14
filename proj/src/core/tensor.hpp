#ifndef LDIT_TENSOR_HPP
#define LDIT_TENSOR_HPP

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace ldit {

// Dense row-major tensor of 64-bit floats.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;
    bool requires_grad = false;

    Tensor() = default;
    Tensor(std::vector<int> shape_, double fill = 0.0);
    Tensor(std::vector<int> shape_, std::vector<double> data_);

    std::size_t numel() const;
    int rows() const;  // 2-D accessors
    int cols() const;
    double& at(int r, int c);
    double at(int r, int c) const;

    bool all_finite() const;
    void check_finite(const char* where) const;

    static Tensor zeros(std::vector<int> shape);
    static Tensor full(std::vector<int> shape, double v);
    static Tensor identity(int n);
    static Tensor randn(std::vector<int> shape, std::mt19937_64& rng, double stddev = 1.0);
    static Tensor rand_uniform(std::vector<int> shape, std::mt19937_64& rng, double lo, double hi);
};

// A node in the gradient tape: value, accumulated gradient, and the
// backward function that scatters into parents.
struct Node {
    Tensor value;
    std::vector<double> grad;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;
    bool needs_grad = false;

    std::size_t numel() const { return value.numel(); }
    void ensure_grad();
};

using Var = std::shared_ptr<Node>;

// Records the executed primitives of one forward pass; backward() walks
// the record in reverse, visiting each node exactly once.
class Tape {
public:
    // Leaves. `leaf` participates in backward when t.requires_grad is set;
    // `constant` never does.
    Var leaf(const Tensor& t);
    Var constant(const Tensor& t);

    // Primitive ops (shapes validated, gradients defined for every input
    // that requires them).
    Var matmul(Var a, Var b);
    Var transpose(Var a);
    Var add(Var a, Var b);            // same shape
    Var sub(Var a, Var b);            // same shape
    Var mul(Var a, Var b);            // hadamard, same shape
    Var add_rowvec(Var a, Var v);     // a[m×n] + v[1×n]
    Var scale(Var a, double c);
    Var add_const(Var a, const Tensor& c);  // c is a plain constant offset
    Var relu(Var a);
    Var silu(Var a);
    Var softmax_lastdim(Var a);
    Var layernorm(Var a, Var gamma, Var beta, double eps = 1e-6);  // a[m×n]
    Var slice_rows(Var a, int r0, int r1);
    Var slice_cols(Var a, int c0, int c1);
    Var concat_rows(const std::vector<Var>& parts);
    Var concat_cols(const std::vector<Var>& parts);
    Var gather_rows(Var table, const std::vector<int>& ids);
    Var mean_over_rows(Var a);        // a[m×n] -> [1×n]
    Var mean_all(Var a);              // -> [1]
    Var sum_all(Var a);               // -> [1]
    // (x - min) / (max - min) over all elements; a constant input maps to
    // all zeros with zero gradient.
    Var minmax_normalize(Var a);
    // Pairwise rotation of the last dim by per-element angles (same shape
    // layout as `a` halved: angles[r][k] rotates columns (2k, 2k+1)).
    Var rope_rotate(Var a, const Tensor& angles);

    // Seeds d(out)/d(out) = 1 and accumulates gradients into every
    // recorded node. `out` must be a scalar (numel == 1).
    void backward(Var out);

    std::size_t size() const { return nodes_.size(); }

private:
    Var record(Node n);
    std::vector<Var> nodes_;
};

// Named parameter set with a fixed declared order (insertion order).
class ParamStore {
public:
    Tensor& add(const std::string& name, Tensor t);
    Tensor& get(const std::string& name);
    const Tensor& get(const std::string& name) const;
    bool has(const std::string& name) const;
    const std::vector<std::string>& names() const { return order_; }
    std::size_t total_elems() const;

private:
    std::vector<std::string> order_;
    std::map<std::string, Tensor> params_;
};

// Decoupled-weight-decay Adam. Moments are kept per parameter name.
struct AdamWConfig {
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

class AdamW {
public:
    explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

    // Applies one update: p *= (1 - lr*wd), then the bias-corrected
    // moment step. Shapes of params and grads must agree.
    void step(ParamStore& params, const std::map<std::string, Tensor>& grads);

    std::int64_t step_count() const { return t_; }
    const AdamWConfig& config() const { return cfg_; }

    // State access for checkpointing (deterministic order follows the
    // param store's declared order at save time).
    std::map<std::string, Tensor>& first_moments() { return m_; }
    std::map<std::string, Tensor>& second_moments() { return v_; }
    void set_step_count(std::int64_t t) { t_ = t; }

private:
    AdamWConfig cfg_;
    std::int64_t t_ = 0;
    std::map<std::string, Tensor> m_;
    std::map<std::string, Tensor> v_;
};

// Central finite-difference check of a scalar-valued function against
// analytic gradients. Per parameter name, returns
// max_i |analytic_i - central_i| / max(max_i |analytic_i|, 1e-8).
std::map<std::string, double> finite_difference_check(
    const std::function<double(const ParamStore&)>& f,
    const std::function<std::map<std::string, Tensor>(const ParamStore&)>& analytic_grads,
    ParamStore& params, double h = 1e-5);

}  // namespace ldit

#endif  // LDIT_TENSOR_HPP
