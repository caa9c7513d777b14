#include "rope.hpp"

#include <algorithm>
#include <cmath>

#include "errors.hpp"

namespace ldit {

namespace {

int round_down_even(int v) { return v - (v % 2); }

}  // namespace

RopeConfig RopeConfig::for_head_dim(int head_dim, double base) {
    if (head_dim < 6 || head_dim % 2 != 0)
        throw_validation("rope: head_dim must be even and >= 6");
    RopeConfig cfg;
    cfg.head_dim = head_dim;
    cfg.base_frequency = base;
    cfg.dim_t = std::max(2, round_down_even(head_dim / 4));
    cfg.dim_h = std::max(2, round_down_even(head_dim * 3 / 8));
    cfg.dim_w = head_dim - cfg.dim_t - cfg.dim_h;
    if (cfg.dim_w < 2) {
        cfg.dim_h -= 2;
        cfg.dim_w += 2;
    }
    cfg.validate();
    return cfg;
}

void RopeConfig::validate() const {
    auto even_nonneg = [](int d) { return d >= 0 && d % 2 == 0; };
    if (!even_nonneg(dim_t) || !even_nonneg(dim_h) || !even_nonneg(dim_w) ||
        dim_t + dim_h + dim_w <= 0)
        throw_validation("rope: axis sub-dims must be even and non-negative");
    if (dim_t + dim_h + dim_w != head_dim)
        throw_validation("rope: axis split must sum to head_dim");
    if (base_frequency <= 0.0) throw_validation("rope: base frequency must be positive");
}

void RegionBox::validate() const {
    if (!(w_start < w_end) || !(h_start < h_end))
        throw_validation("region box: start must be strictly below end");
    if (!std::isfinite(w_start) || !std::isfinite(h_start) || !std::isfinite(w_end) ||
        !std::isfinite(h_end) || !std::isfinite(alignment))
        throw_validation("region box: non-finite field");
    if (alignment < 0.0 || alignment > 1.0)
        throw_validation("region box: alignment must lie in [0,1]");
}

RopeCoords default_coords(int grid_h, int grid_w, int temporal_index) {
    if (grid_h < 1 || grid_w < 1) throw_validation("default_coords: grid dims must be >= 1");
    if (temporal_index < 0) throw_validation("default_coords: temporal index must be >= 0");
    RopeCoords out;
    out.grid_h = grid_h;
    out.grid_w = grid_w;
    out.t.reserve(static_cast<std::size_t>(grid_h) * grid_w);
    for (int j = 0; j < grid_h; ++j)
        for (int i = 0; i < grid_w; ++i) {
            out.t.push_back(static_cast<double>(temporal_index));
            out.i.push_back(static_cast<double>(i));
            out.j.push_back(static_cast<double>(j));
        }
    return out;
}

RopeCoords regional_coords(int grid_h, int grid_w, const RegionBox& box) {
    if (grid_h < 1 || grid_w < 1) throw_validation("regional_coords: grid dims must be >= 1");
    box.validate();
    const double w_box = box.width();
    const double h_box = box.height();

    const double s = std::min(w_box / grid_w, h_box / grid_h);
    const double w_adj = s * grid_w;
    const double h_adj = s * grid_h;
    const double w_start = box.w_start + (w_box - w_adj) / 2.0;
    const double h_start = box.h_start + box.alignment * (h_box - h_adj);

    RopeCoords out;
    out.grid_h = grid_h;
    out.grid_w = grid_w;
    for (int j = 0; j < grid_h; ++j)
        for (int i = 0; i < grid_w; ++i) {
            out.t.push_back(0.0);
            out.i.push_back(w_start + (w_adj / grid_w) * i);
            out.j.push_back(h_start + (h_adj / grid_h) * j);
        }
    return out;
}

Tensor rope_angles(const RopeCoords& coords, const RopeConfig& cfg) {
    cfg.validate();
    const int n = static_cast<int>(coords.size());
    const int half = cfg.head_dim / 2;
    Tensor angles({n, half});
    for (int r = 0; r < n; ++r) {
        int col = 0;
        auto fill_axis = [&](double pos, int d_axis) {
            for (int k = 0; k < d_axis / 2; ++k)
                angles.at(r, col++) =
                    pos * std::pow(cfg.base_frequency, -2.0 * k / d_axis);
        };
        fill_axis(coords.t[r], cfg.dim_t);
        fill_axis(coords.j[r], cfg.dim_h);
        fill_axis(coords.i[r], cfg.dim_w);
    }
    return angles;
}

Tensor rotate(const Tensor& qk, const RopeCoords& coords, const RopeConfig& cfg) {
    if (qk.shape.size() != 2 || qk.cols() != cfg.head_dim)
        throw_dimension("rotate: expected [tokens x head_dim]");
    if (static_cast<std::size_t>(qk.rows()) != coords.size())
        throw_dimension("rotate: token count does not match coords");
    const Tensor angles = rope_angles(coords, cfg);
    Tensor out = qk;
    const int half = cfg.head_dim / 2;
    for (int r = 0; r < qk.rows(); ++r)
        for (int k = 0; k < half; ++k) {
            const double c = std::cos(angles.at(r, k));
            const double s = std::sin(angles.at(r, k));
            const double x0 = qk.at(r, 2 * k);
            const double x1 = qk.at(r, 2 * k + 1);
            out.at(r, 2 * k) = c * x0 - s * x1;
            out.at(r, 2 * k + 1) = s * x0 + c * x1;
        }
    return out;
}

}  // namespace ldit
