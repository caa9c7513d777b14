#ifndef LDIT_LOSSES_HPP
#define LDIT_LOSSES_HPP

#include <vector>

#include "rope.hpp"
#include "tensor.hpp"

namespace ldit {

// Binary grid over noise latent pixels: 1 inside the box, 0 outside.
struct LayoutMask {
    int h = 0, w = 0;
    std::vector<double> values;  // row-major, {0,1}
};

struct LossWeights {
    double lambda_mask = 0.05;
};

// MSE between the predicted velocity and (eps - y).
double flow_matching_loss(const Tensor& v_pred, const Tensor& clean, const Tensor& noise);

// Pixel-center rasterization with half-open intervals
// [w_start, w_end) x [h_start, h_end) in latent units.
LayoutMask rasterize_mask(const RegionBox& box, int grid_h, int grid_w);

// (1/n) sum_i spatial-mean(ReLU(CAM_i - MASK_i)).
double masked_condition_loss(const std::vector<std::vector<double>>& cams,
                             const std::vector<LayoutMask>& masks);

double total_loss(double diff, double mask, const LossWeights& w);

// Tape-level builders for the training graph.
Var flow_matching_loss_node(Tape& tape, Var v_pred, const Tensor& clean, const Tensor& noise);
Var masked_condition_loss_node(Tape& tape, const std::vector<Var>& cams,
                               const std::vector<LayoutMask>& masks);
Var total_loss_node(Tape& tape, Var diff, Var mask, const LossWeights& w);

}  // namespace ldit

#endif  // LDIT_LOSSES_HPP
