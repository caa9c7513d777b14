#include "losses.hpp"

#include <algorithm>
#include <cmath>

#include "errors.hpp"

namespace ldit {

double flow_matching_loss(const Tensor& v_pred, const Tensor& clean, const Tensor& noise) {
    if (v_pred.shape != clean.shape || v_pred.shape != noise.shape)
        throw_dimension("flow_matching_loss: shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < v_pred.numel(); ++i) {
        const double r = v_pred.data[i] - (noise.data[i] - clean.data[i]);
        acc += r * r;
    }
    return acc / static_cast<double>(v_pred.numel());
}

LayoutMask rasterize_mask(const RegionBox& box, int grid_h, int grid_w) {
    box.validate();
    if (grid_h < 1 || grid_w < 1) throw_validation("rasterize_mask: grid dims must be >= 1");
    if (box.w_end <= 0.0 || box.w_start >= grid_w || box.h_end <= 0.0 ||
        box.h_start >= grid_h)
        throw_validation("rasterize_mask: box does not intersect the grid");
    LayoutMask mask;
    mask.h = grid_h;
    mask.w = grid_w;
    mask.values.assign(static_cast<std::size_t>(grid_h) * grid_w, 0.0);
    for (int j = 0; j < grid_h; ++j)
        for (int i = 0; i < grid_w; ++i) {
            const double cx = i + 0.5, cy = j + 0.5;
            if (cx >= box.w_start && cx < box.w_end && cy >= box.h_start && cy < box.h_end)
                mask.values[static_cast<std::size_t>(j) * grid_w + i] = 1.0;
        }
    return mask;
}

double masked_condition_loss(const std::vector<std::vector<double>>& cams,
                             const std::vector<LayoutMask>& masks) {
    if (cams.size() != masks.size() || cams.empty())
        throw_validation("masked_condition_loss: need one mask per reference");
    double acc = 0.0;
    for (std::size_t r = 0; r < cams.size(); ++r) {
        if (cams[r].size() != masks[r].values.size())
            throw_validation("masked_condition_loss: map/mask size mismatch");
        double m = 0.0;
        for (std::size_t i = 0; i < cams[r].size(); ++i)
            m += std::max(0.0, cams[r][i] - masks[r].values[i]);
        acc += m / static_cast<double>(cams[r].size());
    }
    return acc / static_cast<double>(cams.size());
}

double total_loss(double diff, double mask, const LossWeights& w) {
    if (!std::isfinite(diff) || !std::isfinite(mask))
        throw_numeric("total_loss: non-finite input");
    if (w.lambda_mask < 0.0 || !std::isfinite(w.lambda_mask))
        throw_validation("total_loss: lambda_mask must be finite and >= 0");
    return diff + w.lambda_mask * mask;
}

Var flow_matching_loss_node(Tape& tape, Var v_pred, const Tensor& clean, const Tensor& noise) {
    if (v_pred->value.shape != clean.shape || v_pred->value.shape != noise.shape)
        throw_dimension("flow_matching_loss: shape mismatch");
    Tensor target = noise;
    for (std::size_t i = 0; i < target.numel(); ++i) target.data[i] -= clean.data[i];
    Var residual = tape.sub(v_pred, tape.constant(target));
    return tape.mean_all(tape.mul(residual, residual));
}

Var masked_condition_loss_node(Tape& tape, const std::vector<Var>& cams,
                               const std::vector<LayoutMask>& masks) {
    if (cams.size() != masks.size() || cams.empty())
        throw_validation("masked_condition_loss: need one mask per reference");
    Var acc;
    for (std::size_t r = 0; r < cams.size(); ++r) {
        if (cams[r]->value.numel() != masks[r].values.size())
            throw_validation("masked_condition_loss: map/mask size mismatch");
        Tensor neg_mask(cams[r]->value.shape);
        for (std::size_t i = 0; i < neg_mask.numel(); ++i)
            neg_mask.data[i] = -masks[r].values[i];
        Var term = tape.mean_all(tape.relu(tape.add_const(cams[r], neg_mask)));
        acc = r == 0 ? term : tape.add(acc, term);
    }
    return tape.scale(acc, 1.0 / static_cast<double>(cams.size()));
}

Var total_loss_node(Tape& tape, Var diff, Var mask, const LossWeights& w) {
    if (w.lambda_mask < 0.0 || !std::isfinite(w.lambda_mask))
        throw_validation("total_loss: lambda_mask must be finite and >= 0");
    return tape.add(diff, tape.scale(mask, w.lambda_mask));
}

}  // namespace ldit
