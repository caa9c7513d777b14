#include <doctest.h>

#include <cmath>
#include <random>

#include "core/errors.hpp"
#include "core/rope.hpp"

using namespace ldit;

TEST_CASE("default_coords enumeration") {
    RopeCoords c = default_coords(1, 1, 0);
    CHECK(c.size() == 1);
    CHECK(c.t[0] == 0);
    CHECK(c.i[0] == 0);
    CHECK(c.j[0] == 0);

    // rows top to bottom; i = column, j = row
    RopeCoords g = default_coords(2, 2, 3);
    REQUIRE(g.size() == 4);
    const double expect[4][3] = {{3, 0, 0}, {3, 1, 0}, {3, 0, 1}, {3, 1, 1}};
    for (int k = 0; k < 4; ++k) {
        CHECK(g.t[k] == expect[k][0]);
        CHECK(g.i[k] == expect[k][1]);
        CHECK(g.j[k] == expect[k][2]);
    }

    CHECK(default_coords(5, 7, 1).size() == 35);
}

TEST_CASE("regional_coords hand evaluation") {
    RegionBox box{4, 2, 8, 8, 0.5};
    RopeCoords c = regional_coords(2, 2, box);
    REQUIRE(c.size() == 4);
    // s = 2, W' = H' = 4, w'_start = 4, h'_start = 3
    for (std::size_t k = 0; k < 4; ++k) CHECK(c.t[k] == 0.0);
    CHECK(c.i[3] == doctest::Approx(6.0).epsilon(1e-12));  // pixel (1,1)
    CHECK(c.j[3] == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(c.i[0] == doctest::Approx(4.0).epsilon(1e-12));  // pixel (0,0)
    CHECK(c.j[0] == doctest::Approx(3.0).epsilon(1e-12));

    RegionBox top = box;
    top.alignment = 0.0;
    RopeCoords ct = regional_coords(2, 2, top);
    CHECK(ct.j[0] == doctest::Approx(2.0).epsilon(1e-12));  // h'_start = 2
}

TEST_CASE("regional_coords identity on native box") {
    for (double a : {0.0, 0.5, 1.0}) {
        RegionBox box{0, 0, 4, 4, a};
        RopeCoords reg = regional_coords(4, 4, box);
        RopeCoords def = default_coords(4, 4, 0);
        REQUIRE(reg.size() == def.size());
        for (std::size_t k = 0; k < reg.size(); ++k) {
            CHECK(reg.t[k] == def.t[k]);
            CHECK(reg.i[k] == def.i[k]);
            CHECK(reg.j[k] == def.j[k]);
        }
    }
}

TEST_CASE("regional_coords degenerate box rejected") {
    CHECK_THROWS_AS(regional_coords(2, 2, RegionBox{1, 1, 1, 3, 0.5}), LditError);
    CHECK_THROWS_AS(regional_coords(2, 2, RegionBox{3, 1, 1, 3, 0.5}), LditError);
}

TEST_CASE("regional_coords property suite: identity, aspect, containment") {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int trial = 0; trial < 1000; ++trial) {
        const int h = 1 + static_cast<int>(rng() % 6);
        const int w = 1 + static_cast<int>(rng() % 6);
        RegionBox box;
        box.w_start = unit(rng) * 10;
        box.h_start = unit(rng) * 10;
        box.w_end = box.w_start + 0.25 + unit(rng) * 8;
        box.h_end = box.h_start + 0.25 + unit(rng) * 8;
        box.alignment = unit(rng);
        RopeCoords c = regional_coords(h, w, box);
        REQUIRE(c.size() == static_cast<std::size_t>(h * w));

        // aspect preservation: coordinate ranges scale as the native grid
        if (w > 1 && h > 1) {
            const double i_range = c.i[w - 1] - c.i[0];
            const double j_range = c.j[(h - 1) * w] - c.j[0];
            CHECK(i_range / (w - 1) == doctest::Approx(j_range / (h - 1)).epsilon(1e-12));
        }
        // containment
        for (std::size_t k = 0; k < c.size(); ++k) {
            CHECK(c.t[k] == 0.0);
            CHECK(c.i[k] >= box.w_start - 1e-9);
            CHECK(c.i[k] <= box.w_end + 1e-9);
            CHECK(c.j[k] >= box.h_start - 1e-9);
            CHECK(c.j[k] <= box.h_end + 1e-9);
        }
    }
}

TEST_CASE("rope config default split") {
    RopeConfig cfg = RopeConfig::for_head_dim(16);
    CHECK(cfg.dim_t + cfg.dim_h + cfg.dim_w == 16);
    CHECK(cfg.dim_t % 2 == 0);
    CHECK(cfg.dim_h % 2 == 0);
    CHECK(cfg.dim_w % 2 == 0);
    CHECK(cfg.dim_h == cfg.dim_w);
}

TEST_CASE("rotate: zero position is the identity") {
    RopeConfig cfg = RopeConfig::for_head_dim(8);
    RopeCoords c;
    c.t = {0};
    c.i = {0};
    c.j = {0};
    std::mt19937_64 rng(5);
    Tensor x = Tensor::randn({1, 8}, rng);
    Tensor y = rotate(x, c, cfg);
    for (std::size_t k = 0; k < x.numel(); ++k)
        CHECK(y.data[k] == doctest::Approx(x.data[k]).epsilon(1e-15));
}

TEST_CASE("rotate: single pair quarter turn") {
    // head_dim 2 forces one axis pair; angle = pos * base^0 = pos
    RopeConfig cfg;
    cfg.head_dim = 2;
    cfg.dim_t = 2;
    cfg.dim_h = 0;
    cfg.dim_w = 0;
    RopeCoords c;
    c.t = {std::acos(-1.0) / 2};
    c.i = {0};
    c.j = {0};
    Tensor x({1, 2}, {1, 0});
    Tensor y = rotate(x, c, cfg);
    CHECK(y.data[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(y.data[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("rotate preserves norms and relative positions") {
    RopeConfig cfg = RopeConfig::for_head_dim(16);
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> pos(-4.0, 4.0);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor q = Tensor::randn({1, 16}, rng);
        Tensor k = Tensor::randn({1, 16}, rng);
        RopeCoords p1, p2, p1s, p2s;
        const double dt = pos(rng), di = pos(rng), dj = pos(rng);
        p1.t = {pos(rng)};
        p1.i = {pos(rng)};
        p1.j = {pos(rng)};
        p2.t = {pos(rng)};
        p2.i = {pos(rng)};
        p2.j = {pos(rng)};
        p1s.t = {p1.t[0] + dt};
        p1s.i = {p1.i[0] + di};
        p1s.j = {p1.j[0] + dj};
        p2s.t = {p2.t[0] + dt};
        p2s.i = {p2.i[0] + di};
        p2s.j = {p2.j[0] + dj};

        Tensor rq = rotate(q, p1, cfg);
        double nq = 0, nrq = 0;
        for (int d = 0; d < 16; ++d) {
            nq += q.data[d] * q.data[d];
            nrq += rq.data[d] * rq.data[d];
        }
        CHECK(nrq == doctest::Approx(nq).epsilon(1e-12));

        auto dot = [](const Tensor& a, const Tensor& b) {
            double s = 0;
            for (std::size_t d = 0; d < a.numel(); ++d) s += a.data[d] * b.data[d];
            return s;
        };
        const double base = dot(rotate(q, p1, cfg), rotate(k, p2, cfg));
        const double shifted = dot(rotate(q, p1s, cfg), rotate(k, p2s, cfg));
        CHECK(shifted == doctest::Approx(base).epsilon(1e-9));
    }
}

TEST_CASE("rope_angles frequency ladder") {
    RopeConfig cfg;
    cfg.head_dim = 6;
    cfg.dim_t = 2;
    cfg.dim_h = 2;
    cfg.dim_w = 2;
    cfg.base_frequency = 100.0;
    RopeCoords c;
    c.t = {2.0};
    c.i = {3.0};
    c.j = {5.0};
    Tensor a = rope_angles(c, cfg);
    REQUIRE(a.numel() == 3);  // one pair per axis
    CHECK(a.data[0] == doctest::Approx(2.0).epsilon(1e-12));  // t * base^0
    CHECK(a.data[1] == doctest::Approx(5.0).epsilon(1e-12));  // axis order (t, h, w): j then i
    CHECK(a.data[2] == doctest::Approx(3.0).epsilon(1e-12));
}
