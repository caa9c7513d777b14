#include <doctest.h>

#include <random>

#include "core/dit.hpp"
#include "core/errors.hpp"
#include "core/losses.hpp"

using namespace ldit;

namespace {

std::vector<double> constant_cam(int h, int w, double v) {
    return std::vector<double>(static_cast<std::size_t>(h) * w, v);
}

}  // namespace

TEST_CASE("flow matching loss anchors") {
    std::mt19937_64 rng(8);
    Tensor y = Tensor::randn({4, 6}, rng);
    Tensor eps = Tensor::randn({4, 6}, rng);

    // exact optimum
    Tensor v_star = y;
    for (std::size_t k = 0; k < v_star.numel(); ++k) v_star.data[k] = eps.data[k] - y.data[k];
    CHECK(flow_matching_loss(v_star, y, eps) == doctest::Approx(0.0).epsilon(1e-15));

    // mean of ones squared
    CHECK(flow_matching_loss(Tensor::full({4, 6}, 1.0), Tensor::zeros({4, 6}),
                             Tensor::zeros({4, 6})) == doctest::Approx(1.0));

    // quadratic homogeneity
    Tensor v0 = Tensor::zeros({4, 6});
    Tensor v2 = v_star;
    for (std::size_t k = 0; k < v2.numel(); ++k)
        v2.data[k] = v_star.data[k] + 2.0 * (v0.data[k] - v_star.data[k]);
    const double l1 = flow_matching_loss(v0, y, eps);
    CHECK(flow_matching_loss(v2, y, eps) == doctest::Approx(4.0 * l1).epsilon(1e-12));
}

TEST_CASE("rasterize_mask pixel-center rule") {
    LayoutMask all = rasterize_mask({0, 0, 4, 4, 0.5}, 4, 4);
    for (double v : all.values) CHECK(v == 1.0);

    LayoutMask corner = rasterize_mask({0, 0, 2, 2, 0.5}, 4, 4);
    int ones = 0;
    for (double v : corner.values) ones += v == 1.0 ? 1 : 0;
    CHECK(ones == 4);
    CHECK(corner.values[0] == 1.0);
    CHECK(corner.values[1] == 1.0);
    CHECK(corner.values[4] == 1.0);
    CHECK(corner.values[5] == 1.0);

    // half-open: a center on the closed start is in, on the open end is out
    LayoutMask start = rasterize_mask({3.5, 0, 4.0, 4, 0.5}, 4, 4);
    int start_ones = 0;
    for (double v : start.values) start_ones += v == 1.0 ? 1 : 0;
    CHECK(start_ones == 4);  // column 3 centers sit exactly on 3.5
    LayoutMask open_end = rasterize_mask({0, 0, 3.5, 4, 0.5}, 4, 4);
    int open_ones = 0;
    for (double v : open_end.values) open_ones += v == 1.0 ? 1 : 0;
    CHECK(open_ones == 12);  // the 3.5-centered column is excluded

    CHECK_THROWS_AS(rasterize_mask({1, 1, 1, 3, 0.5}, 4, 4), LditError);
    CHECK_THROWS_AS(rasterize_mask({10, 10, 12, 12, 0.5}, 4, 4), LditError);
}

TEST_CASE("masked condition loss anchors") {
    LayoutMask full = rasterize_mask({0, 0, 2, 2, 0.5}, 2, 2);

    // CAM under the mask everywhere
    CHECK(masked_condition_loss({constant_cam(2, 2, 1.0)}, {full}) == doctest::Approx(0.0));

    // CAM of ones against a half mask on a 4-pixel grid: mean {0,0,1,1} = 0.5
    LayoutMask half = rasterize_mask({0, 0, 1, 2, 0.5}, 2, 2);
    CHECK(masked_condition_loss({constant_cam(2, 2, 1.0)}, {half}) == doctest::Approx(0.5));

    // two refs averaging 0.2 and 0.4
    LayoutMask none = half;
    for (double& v : none.values) v = 0.0;
    CHECK(masked_condition_loss({constant_cam(2, 2, 0.2), constant_cam(2, 2, 0.4)},
                                {none, none}) == doctest::Approx(0.3));

    CHECK_THROWS_AS(masked_condition_loss({constant_cam(2, 2, 1.0)}, {half, half}),
                    LditError);
}

TEST_CASE("masked loss is monotone in leaking CAM values") {
    LayoutMask half = rasterize_mask({0, 0, 1, 2, 0.5}, 2, 2);
    std::vector<double> cam = {0.3, 0.3, 0.0, 0.0};  // columns 1 leak, column 0 masked
    const double base = masked_condition_loss({cam}, {half});
    std::vector<double> worse = cam;
    worse[1] = 0.6;  // outside the mask
    CHECK(masked_condition_loss({worse}, {half}) > base);
    std::vector<double> inside = cam;
    inside[0] = 0.9;  // below the mask bound: no effect
    CHECK(masked_condition_loss({inside}, {half}) == doctest::Approx(base));
}

TEST_CASE("total loss combination") {
    CHECK(total_loss(1.0, 2.0, {.lambda_mask = 0.05}) == doctest::Approx(1.1));
    CHECK(total_loss(0.7, 123.0, {.lambda_mask = 0.0}) == doctest::Approx(0.7));
    // linear in the mask term
    const double a = total_loss(1.0, 1.0, {.lambda_mask = 0.05});
    const double b = total_loss(1.0, 2.0, {.lambda_mask = 0.05});
    const double c = total_loss(1.0, 3.0, {.lambda_mask = 0.05});
    CHECK(c - b == doctest::Approx(b - a).epsilon(1e-12));
}

TEST_CASE("tape-level losses agree with the value-level ones") {
    std::mt19937_64 rng(12);
    Tensor y = Tensor::randn({4, 6}, rng);
    Tensor eps = Tensor::randn({4, 6}, rng);
    Tensor v = Tensor::randn({4, 6}, rng);
    Tape tape;
    Var leaf = tape.constant(v);
    Var diff = flow_matching_loss_node(tape, leaf, y, eps);
    CHECK(diff->value.data[0] == doctest::Approx(flow_matching_loss(v, y, eps)));

    LayoutMask half = rasterize_mask({0, 0, 1, 2, 0.5}, 2, 2);
    Tensor cam_t({1, 4}, {0.1, 0.8, 0.3, 0.9});
    Var cam = tape.constant(cam_t);
    Var mask_node = masked_condition_loss_node(tape, {cam}, {half});
    CHECK(mask_node->value.data[0] ==
          doctest::Approx(masked_condition_loss({cam_t.data}, {half})));

    Var total = total_loss_node(tape, diff, mask_node, {.lambda_mask = 0.05});
    CHECK(total->value.data[0] ==
          doctest::Approx(diff->value.data[0] + 0.05 * mask_node->value.data[0]));
}

TEST_CASE("end-to-end gradient of the total loss matches finite differences") {
    ModelConfig cfg;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.n_blocks = 2;
    cfg.patch_size = 4;
    cfg.noise_h = 4;
    cfg.noise_w = 4;
    cfg.cam_block_index = 1;

    std::vector<ReferenceCondition> refs(1);
    refs[0].image = Image(8, 8, {200, 40, 40});
    for (int y = 2; y < 6; ++y)
        for (int x = 2; x < 6; ++x) refs[0].image.set(x, y, {30, 200, 60});
    refs[0].target_box = {0, 0, 2, 2, 0.5};
    refs[0].identity_token_id = 3;
    TokenSequence seq = build_sequence(refs, {3}, cfg);

    ParamStore params = init_params(cfg, 5);
    std::mt19937_64 rng(6);
    Tensor clean = Tensor::randn({cfg.noise_tokens(), cfg.patch_dim()}, rng);
    Tensor eps = Tensor::randn({cfg.noise_tokens(), cfg.patch_dim()}, rng);
    const double t = 0.45;
    Tensor noisy = clean;
    for (std::size_t k = 0; k < noisy.numel(); ++k)
        noisy.data[k] = (1 - t) * clean.data[k] + t * eps.data[k];
    std::vector<LayoutMask> masks = {rasterize_mask(refs[0].target_box, 4, 4)};

    auto scalar = [&](const ParamStore& p) {
        Tape tape;
        ParamLeaves leaves(tape, p);
        DitForward f = dit_forward(tape, leaves, cfg, seq, t, noisy);
        Var diff = flow_matching_loss_node(tape, f.velocity, clean, eps);
        Var mask = masked_condition_loss_node(tape, f.cams[cfg.cam_block_index], masks);
        return total_loss_node(tape, diff, mask, {.lambda_mask = 0.05})->value.data[0];
    };
    auto grads = [&](const ParamStore& p) {
        Tape tape;
        ParamLeaves leaves(tape, p);
        DitForward f = dit_forward(tape, leaves, cfg, seq, t, noisy);
        Var diff = flow_matching_loss_node(tape, f.velocity, clean, eps);
        Var mask = masked_condition_loss_node(tape, f.cams[cfg.cam_block_index], masks);
        tape.backward(total_loss_node(tape, diff, mask, {.lambda_mask = 0.05}));
        return collect_grads(p, leaves);
    };

    auto errs = finite_difference_check(scalar, grads, params);
    for (const auto& [name, err] : errs) {
        INFO(name);
        CHECK(err <= 1e-5);
    }
}
