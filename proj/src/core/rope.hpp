#ifndef LDIT_ROPE_HPP
#define LDIT_ROPE_HPP

#include <vector>

#include "tensor.hpp"

namespace ldit {

// Axis split of one attention head's dimension into (temporal, height,
// width) rotary sub-dimensions.
struct RopeConfig {
    int head_dim = 16;
    int dim_t = 4;
    int dim_h = 6;
    int dim_w = 6;
    double base_frequency = 10000.0;

    // Default split: roughly (d/4, 3d/8, 3d/8), rounded to even values.
    static RopeConfig for_head_dim(int head_dim, double base = 10000.0);
    void validate() const;
};

// Continuous (t', i', j') rotary coordinates per token. i indexes width
// (columns), j indexes height (rows).
struct RopeCoords {
    std::vector<double> t;
    std::vector<double> i;
    std::vector<double> j;
    int grid_h = 0;
    int grid_w = 0;

    std::size_t size() const { return t.size(); }
};

// Target region in latent-grid units, plus the vertical alignment knob
// (a = 0 top-aligned, a = 0.5 centered, a = 1 bottom-aligned).
struct RegionBox {
    double w_start = 0.0;
    double h_start = 0.0;
    double w_end = 0.0;
    double h_end = 0.0;
    double alignment = 0.5;

    double width() const { return w_end - w_start; }
    double height() const { return h_end - h_start; }
    void validate() const;
};

// Integer lattice coordinates: token (row j, col i) of an h x w grid gets
// (temporal_index, i, j), rows emitted top to bottom.
RopeCoords default_coords(int grid_h, int grid_w, int temporal_index);

// Remaps a reference latent grid into its layout region: aspect-preserving
// scale s = min(W_box/w, H_box/h), horizontal centering, vertical placement
// by the alignment factor. Temporal coordinate is always 0.
RopeCoords regional_coords(int grid_h, int grid_w, const RegionBox& box);

// Per-pair rotation angles for a coordinate set; rows align with tokens,
// columns with the head-dim pair index. Angle of pair k within an axis of
// size d_axis is pos * base^(-2k/d_axis).
Tensor rope_angles(const RopeCoords& coords, const RopeConfig& cfg);

// Applies the 3-axis rotary rotation to a [tokens x head_dim] tensor
// outside any tape (plain value path; the tape path uses Tape::rope_rotate
// with angles from rope_angles).
Tensor rotate(const Tensor& qk, const RopeCoords& coords, const RopeConfig& cfg);

}  // namespace ldit

#endif  // LDIT_ROPE_HPP
