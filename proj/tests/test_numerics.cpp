#include <doctest.h>

#include <cmath>
#include <random>

#include "core/errors.hpp"
#include "core/tensor.hpp"

using namespace ldit;

namespace {

// Max relative error between tape gradients and central differences for a
// scalar built as sum(op(x)); x is the single differentiable leaf.
double fd_check_unary(const std::function<Var(Tape&, Var)>& op, const Tensor& x0,
                      double h = 1e-5) {
    ParamStore params;
    Tensor x = x0;
    x.requires_grad = true;
    params.add("x", x);

    auto value = [&](const ParamStore& p) {
        Tape tape;
        Var leaf = tape.leaf(p.get("x"));
        Var out = tape.sum_all(op(tape, leaf));
        return out->value.data[0];
    };
    auto grads = [&](const ParamStore& p) {
        Tape tape;
        Var leaf = tape.leaf(p.get("x"));
        Var out = tape.sum_all(op(tape, leaf));
        tape.backward(out);
        std::map<std::string, Tensor> g;
        g["x"] = Tensor(p.get("x").shape, leaf->grad);
        return g;
    };
    auto errs = finite_difference_check(value, grads, params, h);
    return errs.at("x");
}

Tensor randn(std::vector<int> shape, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return Tensor::randn(shape, rng);
}

}  // namespace

TEST_CASE("matmul hand examples") {
    Tape tape;
    Var a = tape.constant(Tensor({2, 2}, {1, 2, 3, 4}));
    Var b = tape.constant(Tensor({2, 2}, {5, 6, 7, 8}));
    Var c = tape.matmul(a, b);
    CHECK(c->value.data == std::vector<double>{19, 22, 43, 50});

    Var id = tape.constant(Tensor::identity(2));
    Var v = tape.constant(Tensor({2, 1}, {3, 4}));
    CHECK(tape.matmul(id, v)->value.data == std::vector<double>{3, 4});

    Var row = tape.constant(Tensor({1, 2}, {1, 2}));
    CHECK(tape.matmul(row, v)->value.data == std::vector<double>{11});

    Var z = tape.constant(Tensor::zeros({2, 3}));
    Var any = tape.constant(randn({3, 2}, 7));
    for (double d : tape.matmul(z, any)->value.data) CHECK(d == 0.0);
}

TEST_CASE("matmul shape mismatch") {
    Tape tape;
    Var a = tape.constant(Tensor::zeros({2, 3}));
    Var b = tape.constant(Tensor::zeros({2, 3}));
    CHECK_THROWS_AS(tape.matmul(a, b), LditError);
}

TEST_CASE("softmax closed forms and invariances") {
    Tape tape;
    Var s = tape.softmax_lastdim(tape.constant(Tensor({1, 2}, {0, 0})));
    CHECK(s->value.data[0] == doctest::Approx(0.5).epsilon(1e-12));

    Var s2 = tape.softmax_lastdim(tape.constant(Tensor({1, 2}, {0, std::log(2.0)})));
    CHECK(s2->value.data[0] == doctest::Approx(1.0 / 3).epsilon(1e-12));
    CHECK(s2->value.data[1] == doctest::Approx(2.0 / 3).epsilon(1e-12));

    std::mt19937_64 rng(3);
    Tensor x = Tensor::randn({4, 5}, rng);
    Tensor shifted = x;
    for (double& v : shifted.data) v += 17.25;
    Tape t2;
    Var a = t2.softmax_lastdim(t2.constant(x));
    Var b = t2.softmax_lastdim(t2.constant(shifted));
    for (std::size_t k = 0; k < a->numel(); ++k)
        CHECK(a->value.data[k] == doctest::Approx(b->value.data[k]).epsilon(1e-12));
    for (int r = 0; r < 4; ++r) {
        double sum = 0;
        for (int c = 0; c < 5; ++c) sum += a->value.at(r, c);
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("primitive gradients match central differences at 1e-6") {
    // randomized shapes <= 8x8
    std::mt19937_64 shape_rng(99);
    auto dim = [&] { return 2 + static_cast<int>(shape_rng() % 7); };
    const double tol = 1e-6;

    for (int trial = 0; trial < 3; ++trial) {
        int m = dim(), n = dim();
        Tensor x = randn({m, n}, 1000 + trial);
        CHECK(fd_check_unary([](Tape& t, Var a) { return t.scale(a, 1.7); }, x) < tol);
        CHECK(fd_check_unary([](Tape& t, Var a) { return t.mul(a, a); }, x) < tol);
        CHECK(fd_check_unary([](Tape& t, Var a) { return t.add(a, a); }, x) < tol);
        CHECK(fd_check_unary([](Tape& t, Var a) { return t.sub(t.mul(a, a), a); }, x) < tol);
        CHECK(fd_check_unary([](Tape& t, Var a) { return t.silu(a); }, x) < tol);
        // weight the rows so the scalar is not constant (softmax rows sum to 1)
        Tensor w = randn({m, n}, 2000 + trial);
        CHECK(fd_check_unary(
                  [&](Tape& t, Var a) {
                      return t.mul(t.softmax_lastdim(a), t.constant(w));
                  },
                  x) < tol);
        CHECK(fd_check_unary([](Tape& t, Var a) { return t.mean_over_rows(t.mul(a, a)); },
                             x) < tol);
        CHECK(fd_check_unary([](Tape& t, Var a) { return t.mean_all(t.mul(a, a)); }, x) < tol);
        CHECK(fd_check_unary(
                  [](Tape& t, Var a) { return t.matmul(a, t.transpose(a)); }, x) < tol);
        CHECK(fd_check_unary(
                  [n](Tape& t, Var a) {
                      return t.concat_cols({t.slice_cols(a, 0, n / 2 + 1),
                                            t.slice_cols(a, n / 2 + 1, n)});
                  },
                  x) < tol);
        CHECK(fd_check_unary(
                  [m](Tape& t, Var a) {
                      return t.concat_rows({t.slice_rows(a, m / 2, m),
                                            t.slice_rows(a, 0, m / 2)});
                  },
                  x) < tol);
        // relu away from the kink
        Tensor far = x;
        for (double& v : far.data) v += (v >= 0 ? 0.5 : -0.5);
        CHECK(fd_check_unary([](Tape& t, Var a) { return t.relu(a); }, far) < tol);
        CHECK(fd_check_unary([](Tape& t, Var a) { return t.minmax_normalize(a); }, x) < tol);
    }

    // layernorm with its own gamma/beta leaves
    {
        ParamStore params;
        Tensor x = randn({4, 6}, 5);
        x.requires_grad = true;
        Tensor g = randn({1, 6}, 6);
        g.requires_grad = true;
        Tensor b = randn({1, 6}, 7);
        b.requires_grad = true;
        params.add("x", x);
        params.add("g", g);
        params.add("b", b);
        auto build = [](Tape& tape, const ParamStore& p, std::map<std::string, Var>* leaves) {
            Var lx = tape.leaf(p.get("x"));
            Var lg = tape.leaf(p.get("g"));
            Var lb = tape.leaf(p.get("b"));
            if (leaves) (*leaves) = {{"x", lx}, {"g", lg}, {"b", lb}};
            return tape.sum_all(tape.mul(tape.layernorm(lx, lg, lb),
                                         tape.layernorm(lx, lg, lb)));
        };
        auto value = [&](const ParamStore& p) {
            Tape tape;
            return build(tape, p, nullptr)->value.data[0];
        };
        auto grads = [&](const ParamStore& p) {
            Tape tape;
            std::map<std::string, Var> leaves;
            Var out = build(tape, p, &leaves);
            tape.backward(out);
            std::map<std::string, Tensor> out_g;
            for (auto& [name, leaf] : leaves)
                out_g[name] = Tensor(p.get(name).shape, leaf->grad);
            return out_g;
        };
        auto errs = finite_difference_check(value, grads, params);
        for (auto& [name, err] : errs) CHECK(err < 1e-6);
    }

    // rope_rotate with fixed fractional angles
    {
        Tensor angles(std::vector<int>{3, 2}, {0.3, 1.2, -0.7, 2.5, 0.0, 4.2});
        Tensor x = randn({3, 4}, 11);
        CHECK(fd_check_unary(
                  [&](Tape& t, Var a) { return t.mul(t.rope_rotate(a, angles), a); }, x) <
              1e-6);
    }

    // gather_rows
    {
        Tensor table = randn({5, 3}, 12);
        CHECK(fd_check_unary(
                  [](Tape& t, Var a) {
                      Var g = t.gather_rows(a, {4, 0, 0, 2});
                      return t.mul(g, g);
                  },
                  table) < 1e-6);
    }
}

TEST_CASE("minmax_normalize maps constant input to zeros") {
    Tape tape;
    Tensor c = Tensor::full({2, 3}, 4.2);
    c.requires_grad = true;
    Var leaf = tape.leaf(c);
    Var out = tape.minmax_normalize(leaf);
    for (double v : out->value.data) CHECK(v == 0.0);
    tape.backward(tape.sum_all(out));
    for (double g : leaf->grad) CHECK(g == 0.0);
}

TEST_CASE("minmax_normalize endpoints") {
    Tape tape;
    Var out = tape.minmax_normalize(tape.constant(Tensor({1, 4}, {0, 1, 2, 3})));
    CHECK(out->value.data[0] == 0.0);
    CHECK(out->value.data[1] == doctest::Approx(1.0 / 3).epsilon(1e-12));
    CHECK(out->value.data[2] == doctest::Approx(2.0 / 3).epsilon(1e-12));
    CHECK(out->value.data[3] == 1.0);
}

TEST_CASE("adamw closed forms") {
    // pure decoupled decay: grad = 0 leaves the moment step at zero
    {
        AdamW opt({.lr = 0.1, .weight_decay = 0.01});
        ParamStore params;
        params.add("p", Tensor({1, 1}, {1.0}));
        std::map<std::string, Tensor> grads{{"p", Tensor({1, 1}, {0.0})}};
        opt.step(params, grads);
        CHECK(params.get("p").data[0] == doctest::Approx(0.999).epsilon(1e-12));
    }
    // step-1 bias-corrected update has magnitude ~ lr
    {
        AdamW opt({.lr = 0.1, .weight_decay = 0.0});
        ParamStore params;
        params.add("p", Tensor({1, 1}, {2.0}));
        std::map<std::string, Tensor> grads{{"p", Tensor({1, 1}, {3.0})}};
        opt.step(params, grads);
        CHECK(params.get("p").data[0] == doctest::Approx(2.0 - 0.1).epsilon(1e-6));
    }
    // lr = 0 is a no-op
    {
        AdamW opt({.lr = 0.0, .weight_decay = 0.5});
        ParamStore params;
        params.add("p", Tensor({1, 2}, {1.5, -2.5}));
        std::map<std::string, Tensor> grads{{"p", Tensor({1, 2}, {3.0, -1.0})}};
        opt.step(params, grads);
        CHECK(params.get("p").data == std::vector<double>{1.5, -2.5});
    }
    // shape mismatch
    {
        AdamW opt({});
        ParamStore params;
        params.add("p", Tensor({1, 2}));
        std::map<std::string, Tensor> grads{{"p", Tensor({2, 2})}};
        CHECK_THROWS_AS(opt.step(params, grads), LditError);
    }
}

TEST_CASE("finite_difference_check reference behaviors") {
    ParamStore params;
    Tensor x({1, 1}, {3.0});
    x.requires_grad = true;
    params.add("x", x);

    // f = x^2 at x = 3: analytic 6
    auto sq = [](const ParamStore& p) { return p.get("x").data[0] * p.get("x").data[0]; };
    auto sq_grad = [](const ParamStore& p) {
        return std::map<std::string, Tensor>{{"x", Tensor({1, 1}, {2 * p.get("x").data[0]})}};
    };
    CHECK(finite_difference_check(sq, sq_grad, params).at("x") < 1e-9);

    // constants and linear functions are exact
    auto constant = [](const ParamStore&) { return 5.0; };
    auto zero_grad = [](const ParamStore&) {
        return std::map<std::string, Tensor>{{"x", Tensor({1, 1}, {0.0})}};
    };
    CHECK(finite_difference_check(constant, zero_grad, params).at("x") == 0.0);

    auto linear = [](const ParamStore& p) { return 2.5 * p.get("x").data[0]; };
    auto linear_grad = [](const ParamStore&) {
        return std::map<std::string, Tensor>{{"x", Tensor({1, 1}, {2.5})}};
    };
    CHECK(finite_difference_check(linear, linear_grad, params).at("x") < 1e-10);
}

TEST_CASE("determinism of randn given a seed") {
    std::mt19937_64 r1(42), r2(42);
    Tensor a = Tensor::randn({3, 3}, r1);
    Tensor b = Tensor::randn({3, 3}, r2);
    CHECK(a.data == b.data);
}
