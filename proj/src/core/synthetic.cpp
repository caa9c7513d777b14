#include "synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <queue>
#include <random>

#include <json.hpp>

#include "errors.hpp"

namespace ldit {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr double kPi = 3.14159265358979323846;

bool glyph_inside(GlyphShape shape, double u, double v) {
    const double du = u - 0.5, dv = v - 0.5;
    const double r2 = du * du + dv * dv;
    switch (shape) {
        case GlyphShape::Disk:
            return r2 <= 0.25;
        case GlyphShape::Square:
            return true;
        case GlyphShape::Triangle:
            return std::abs(du) <= v / 2.0;
        case GlyphShape::Ring:
            return r2 <= 0.25 && r2 >= 0.28 * 0.28;
    }
    return false;
}

Rgb modulate(Rgb base, double phase, double u, double v) {
    // mild multiplicative texture; kept well inside the detector's
    // +/-40 per-channel tolerance
    const double b = 1.0 - 0.05 * (0.5 + 0.5 * std::sin(phase + 2.0 * kPi * (u + v)));
    Rgb out;
    for (int c = 0; c < 3; ++c)
        out[c] = static_cast<std::uint8_t>(std::clamp(std::lround(base[c] * b), 0l, 255l));
    return out;
}

void rgb_to_hsv(Rgb c, double& h, double& s, double& v) {
    const double r = c[0] / 255.0, g = c[1] / 255.0, b = c[2] / 255.0;
    const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
    v = mx;
    const double d = mx - mn;
    s = mx > 0.0 ? d / mx : 0.0;
    if (d <= 0.0) {
        h = 0.0;
    } else if (mx == r) {
        h = 60.0 * std::fmod((g - b) / d + 6.0, 6.0);
    } else if (mx == g) {
        h = 60.0 * ((b - r) / d + 2.0);
    } else {
        h = 60.0 * ((r - g) / d + 4.0);
    }
}

Rgb hsv_to_rgb(double h, double s, double v) {
    h = std::fmod(std::fmod(h, 360.0) + 360.0, 360.0);
    const double c = v * s;
    const double x = c * (1.0 - std::abs(std::fmod(h / 60.0, 2.0) - 1.0));
    const double m = v - c;
    double r = 0, g = 0, b = 0;
    if (h < 60) { r = c; g = x; }
    else if (h < 120) { r = x; g = c; }
    else if (h < 180) { g = c; b = x; }
    else if (h < 240) { g = x; b = c; }
    else if (h < 300) { r = x; b = c; }
    else { r = c; b = x; }
    auto q = [m](double t) {
        return static_cast<std::uint8_t>(std::clamp(std::lround((t + m) * 255.0), 0l, 255l));
    };
    return {q(r), q(g), q(b)};
}

Rgb hue_shift(Rgb c, double degrees) {
    if (degrees == 0.0) return c;
    double h, s, v;
    rgb_to_hsv(c, h, s, v);
    return hsv_to_rgb(h + degrees, s, v);
}

struct PixelRect {
    int x0, y0, x1, y1;  // half-open
    int w() const { return x1 - x0; }
    int h() const { return y1 - y0; }
};

// Paste a reference into a canvas rect with rotation + scale about the
// rect center, nearest-neighbor sampling, optional hue shift. Background
// pixels of the reference are transparent.
void paste_subject(Image& canvas, const Image& ref, const PixelRect& rect, double rot_deg,
                   double hue_deg) {
    const Rgb bg = canvas_background();
    if (rot_deg == 0.0 && rect.w() == ref.width && rect.h() == ref.height) {
        // exact paste: zero-jitter samples are bit-identical to the reference
        for (int y = 0; y < ref.height; ++y)
            for (int x = 0; x < ref.width; ++x) {
                const Rgb c = ref.get(x, y);
                if (c == bg) continue;
                if (canvas.in_bounds(rect.x0 + x, rect.y0 + y))
                    canvas.set(rect.x0 + x, rect.y0 + y, hue_shift(c, hue_deg));
            }
        return;
    }
    const double theta = rot_deg * kPi / 180.0;
    const double ct = std::cos(theta), st = std::sin(theta);
    const double cx = (rect.x0 + rect.x1) / 2.0;
    const double cy = (rect.y0 + rect.y1) / 2.0;
    // scale chosen so the rotated reference fits inside the rect
    const double fit = std::abs(ct) + std::abs(st);
    const double sx = rect.w() / (ref.width * fit);
    const double sy = rect.h() / (ref.height * fit);
    const double s = std::min(sx, sy);
    for (int y = std::max(0, rect.y0); y < std::min(canvas.height, rect.y1); ++y)
        for (int x = std::max(0, rect.x0); x < std::min(canvas.width, rect.x1); ++x) {
            const double dx = (x + 0.5) - cx;
            const double dy = (y + 0.5) - cy;
            // inverse rotation, then unscale
            const double rx = (ct * dx + st * dy) / s + ref.width / 2.0;
            const double ry = (-st * dx + ct * dy) / s + ref.height / 2.0;
            const int ix = static_cast<int>(std::floor(rx));
            const int iy = static_cast<int>(std::floor(ry));
            if (!ref.in_bounds(ix, iy)) continue;
            const Rgb c = ref.get(ix, iy);
            if (c == bg) continue;
            canvas.set(x, y, hue_shift(c, hue_deg));
        }
}

}  // namespace

Image render_reference(const SubjectSpec& subj, int size) {
    const Rgb bg = canvas_background();
    Image img(size, size, bg);
    const Rgb base = subject_palette()[subj.palette_index].color;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double u = (x + 0.5) / size;
            const double v = (y + 0.5) / size;
            if (glyph_inside(subj.shape, u, v))
                img.set(x, y, modulate(base, subj.texture_phase, u, v));
        }
    return img;
}

const std::vector<PaletteEntry>& subject_palette() {
    static const std::vector<PaletteEntry> palette = {
        {"red", {220, 30, 30}},    {"green", {40, 200, 60}},
        {"blue", {40, 80, 230}},   {"yellow", {235, 220, 40}},
        {"magenta", {200, 40, 200}}, {"cyan", {40, 210, 220}},
        {"orange", {240, 140, 20}}, {"purple", {120, 30, 160}},
    };
    return palette;
}

Rgb canvas_background() { return {250, 250, 250}; }

double jitter_fraction(int t_target) {
    if (t_target < 0) throw_validation("jitter_fraction: t_target must be >= 0");
    return std::min(1.0, t_target / 9.0);
}

PairedSample gen_scene(std::uint64_t seed, int n_subjects, const SyntheticConfig& cfg,
                       int t_target) {
    if (n_subjects < 1 || n_subjects > 4)
        throw_validation("gen_scene: n_subjects must lie in [1,4]");
    if (cfg.canvas_w < 32 || cfg.canvas_h < 32)
        throw_validation("gen_scene: canvas must be at least 32x32");

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const double f = jitter_fraction(t_target);

    PairedSample sample;
    sample.scene.seed = seed;
    sample.scene.t_target = t_target;

    // distinct palette entries per subject
    std::vector<int> pool(subject_palette().size());
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = static_cast<int>(i);
    std::shuffle(pool.begin(), pool.end(), rng);

    for (int k = 0; k < n_subjects; ++k) {
        SubjectSpec subj;
        subj.palette_index = pool[k];
        subj.shape = static_cast<GlyphShape>(
            std::uniform_int_distribution<int>(0, 3)(rng));
        subj.texture_phase = u01(rng) * 2.0 * kPi;
        subj.jitter_scale = 1.0 + (u01(rng) * 2.0 - 1.0) * 0.2 * f;
        subj.jitter_rotation_deg = (u01(rng) * 2.0 - 1.0) * 30.0 * f;
        subj.jitter_hue_deg = (u01(rng) * 2.0 - 1.0) * 15.0 * f;
        sample.scene.subjects.push_back(subj);
        sample.condition_ids.push_back(subj.palette_index);
    }

    // placement rects: reference footprint scaled by jitter, inflated so a
    // rotated glyph still fits; rejection-sampled under the pairwise IoU cap
    std::vector<int> sizes;
    for (int k = 0; k < n_subjects; ++k) {
        const SubjectSpec& subj = sample.scene.subjects[k];
        const double theta = subj.jitter_rotation_deg * kPi / 180.0;
        const double fit = std::abs(std::cos(theta)) + std::abs(std::sin(theta));
        const int size = static_cast<int>(
            std::ceil(cfg.ref_size * subj.jitter_scale * fit));
        if (size > cfg.canvas_w || size > cfg.canvas_h)
            throw_generation("gen_scene: subject does not fit the canvas");
        sizes.push_back(size);
    }

    auto iou_ok = [&](const LayoutBox& cand, const std::vector<LayoutBox>& placed) {
        for (const LayoutBox& prev : placed)
            if (box_iou(cand, prev) > cfg.max_pair_iou) return false;
        return true;
    };
    auto to_box = [&](const PixelRect& rect) {
        return LayoutBox{double(rect.x0) / cfg.canvas_w, double(rect.y0) / cfg.canvas_h,
                         double(rect.x1) / cfg.canvas_w, double(rect.y1) / cfg.canvas_h};
    };

    std::vector<PixelRect> rects;
    bool all_placed = true;
    for (int k = 0; k < n_subjects && all_placed; ++k) {
        const int size = sizes[k];
        bool placed = false;
        for (int attempt = 0; attempt < cfg.max_place_attempts && !placed; ++attempt) {
            const int x0 = std::uniform_int_distribution<int>(0, cfg.canvas_w - size)(rng);
            const int y0 = std::uniform_int_distribution<int>(0, cfg.canvas_h - size)(rng);
            PixelRect rect{x0, y0, x0 + size, y0 + size};
            LayoutBox cand = to_box(rect);
            if (iou_ok(cand, sample.scene.placement)) {
                rects.push_back(rect);
                sample.scene.placement.push_back(cand);
                placed = true;
            }
        }
        all_placed = placed;
    }

    if (!all_placed) {
        // deterministic fallback: random placement left some subject stuck,
        // so re-place everything greedily at the first feasible grid position
        rects.clear();
        sample.scene.placement.clear();
        for (int k = 0; k < n_subjects; ++k) {
            const int size = sizes[k];
            bool placed = false;
            for (int y0 = 0; y0 <= cfg.canvas_h - size && !placed; ++y0)
                for (int x0 = 0; x0 <= cfg.canvas_w - size && !placed; ++x0) {
                    PixelRect rect{x0, y0, x0 + size, y0 + size};
                    LayoutBox cand = to_box(rect);
                    if (iou_ok(cand, sample.scene.placement)) {
                        rects.push_back(rect);
                        sample.scene.placement.push_back(cand);
                        placed = true;
                    }
                }
            if (!placed)
                throw_generation("gen_scene: could not place subject " + std::to_string(k) +
                                 " under the IoU constraint");
        }
    }

    for (int k = 0; k < n_subjects; ++k)
        sample.references.push_back(render_reference(sample.scene.subjects[k], cfg.ref_size));

    sample.target = Image(cfg.canvas_w, cfg.canvas_h, canvas_background());
    for (int k = 0; k < n_subjects; ++k)
        paste_subject(sample.target, sample.references[k], rects[k],
                      sample.scene.subjects[k].jitter_rotation_deg,
                      sample.scene.subjects[k].jitter_hue_deg);
    return sample;
}

std::vector<DetectedBox> detect_subjects(const Image& image,
                                         const std::vector<PaletteEntry>& palette) {
    constexpr int kTol = 40;
    constexpr int kMinPixels = 16;
    std::vector<DetectedBox> out;
    const int w = image.width, h = image.height;
    std::vector<char> mask(static_cast<std::size_t>(w) * h);
    std::vector<char> visited(static_cast<std::size_t>(w) * h);

    for (const PaletteEntry& entry : palette) {
        std::fill(mask.begin(), mask.end(), 0);
        std::fill(visited.begin(), visited.end(), 0);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const Rgb c = image.get(x, y);
                bool close = true;
                for (int ch = 0; ch < 3 && close; ++ch)
                    close = std::abs(int(c[ch]) - int(entry.color[ch])) <= kTol;
                mask[static_cast<std::size_t>(y) * w + x] = close ? 1 : 0;
            }

        // largest 4-connected component
        int best_count = 0;
        int bx0 = 0, by0 = 0, bx1 = 0, by1 = 0;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const std::size_t idx = static_cast<std::size_t>(y) * w + x;
                if (!mask[idx] || visited[idx]) continue;
                int count = 0, cx0 = x, cy0 = y, cx1 = x, cy1 = y;
                std::queue<std::pair<int, int>> q;
                q.push({x, y});
                visited[idx] = 1;
                while (!q.empty()) {
                    auto [px, py] = q.front();
                    q.pop();
                    ++count;
                    cx0 = std::min(cx0, px);
                    cy0 = std::min(cy0, py);
                    cx1 = std::max(cx1, px);
                    cy1 = std::max(cy1, py);
                    const int dx[4] = {1, -1, 0, 0}, dy[4] = {0, 0, 1, -1};
                    for (int d = 0; d < 4; ++d) {
                        const int nx = px + dx[d], ny = py + dy[d];
                        if (nx < 0 || nx >= w || ny < 0 || ny >= h) continue;
                        const std::size_t nidx = static_cast<std::size_t>(ny) * w + nx;
                        if (mask[nidx] && !visited[nidx]) {
                            visited[nidx] = 1;
                            q.push({nx, ny});
                        }
                    }
                }
                if (count > best_count) {
                    best_count = count;
                    bx0 = cx0;
                    by0 = cy0;
                    bx1 = cx1;
                    by1 = cy1;
                }
            }
        if (best_count >= kMinPixels) {
            out.push_back({entry.name,
                           {double(bx0) / w, double(by0) / h, double(bx1 + 1) / w,
                            double(by1 + 1) / h}});
        }
    }
    return out;
}

double count_match_score(const std::vector<int>& detected_counts,
                         const std::vector<int>& expected_counts) {
    if (detected_counts.size() != expected_counts.size())
        throw_validation("count_match_score: length mismatch");
    if (detected_counts.empty()) return 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < detected_counts.size(); ++i) {
        const double denom = std::max(expected_counts[i], 1);
        acc += std::exp(-std::abs(detected_counts[i] - expected_counts[i]) / denom);
    }
    return 100.0 * acc / static_cast<double>(detected_counts.size());
}

std::string write_sample(const std::string& dir, const PairedSample& sample,
                         const std::string& record_dir) {
    fs::create_directories(dir);
    json meta;
    meta["seed"] = sample.scene.seed;
    meta["t_target"] = sample.scene.t_target;
    meta["condition_ids"] = sample.condition_ids;
    json subjects = json::array();
    for (const SubjectSpec& s : sample.scene.subjects) {
        subjects.push_back({{"palette_index", s.palette_index},
                            {"shape", static_cast<int>(s.shape)},
                            {"texture_phase", s.texture_phase},
                            {"jitter_scale", s.jitter_scale},
                            {"jitter_rotation_deg", s.jitter_rotation_deg},
                            {"jitter_hue_deg", s.jitter_hue_deg}});
    }
    meta["subjects"] = subjects;

    json refs = json::array();
    for (std::size_t k = 0; k < sample.references.size(); ++k) {
        const std::string name = "ref_" + std::to_string(k) + ".ppm";
        write_ppm(dir + "/" + name, sample.references[k]);
        refs.push_back(name);
    }
    write_ppm(dir + "/target.ppm", sample.target);

    // placement ground truth as a single full-page panel layout
    PageLayout page;
    page.aspect_ratio = double(sample.target.width) / sample.target.height;
    PanelSpec panel;
    panel.panel_box = {0.0, 0.0, 1.0, 1.0};
    panel.caption = "scene " + std::to_string(sample.scene.seed);
    for (std::size_t k = 0; k < sample.scene.placement.size(); ++k) {
        panel.characters.push_back(
            {subject_palette()[sample.scene.subjects[k].palette_index].name,
             sample.scene.placement[k]});
    }
    page.panels.push_back(std::move(panel));
    {
        std::ofstream f(dir + "/layout.json", std::ios::binary);
        if (!f) throw_io("cannot write " + dir + "/layout.json");
        f << serialize_layout(page);
    }
    {
        std::ofstream f(dir + "/meta.json", std::ios::binary);
        if (!f) throw_io("cannot write " + dir + "/meta.json");
        f << meta.dump();
    }

    json record;
    record["dir"] = record_dir.empty() ? dir : record_dir;
    record["seed"] = sample.scene.seed;
    record["n_subjects"] = sample.scene.subjects.size();
    record["references"] = refs;
    record["target"] = "target.ppm";
    record["layout"] = "layout.json";
    return record.dump();
}

PairedSample load_sample(const std::string& dir) {
    std::ifstream mf(dir + "/meta.json", std::ios::binary);
    if (!mf) throw_io("cannot open " + dir + "/meta.json");
    json meta;
    try {
        mf >> meta;
    } catch (const json::exception& e) {
        throw_parse(dir + "/meta.json: " + e.what());
    }
    PairedSample sample;
    sample.scene.seed = meta.at("seed").get<std::uint64_t>();
    sample.scene.t_target = meta.at("t_target").get<int>();
    sample.condition_ids = meta.at("condition_ids").get<std::vector<int>>();
    for (const json& js : meta.at("subjects")) {
        SubjectSpec s;
        s.palette_index = js.at("palette_index").get<int>();
        s.shape = static_cast<GlyphShape>(js.at("shape").get<int>());
        s.texture_phase = js.at("texture_phase").get<double>();
        s.jitter_scale = js.at("jitter_scale").get<double>();
        s.jitter_rotation_deg = js.at("jitter_rotation_deg").get<double>();
        s.jitter_hue_deg = js.at("jitter_hue_deg").get<double>();
        sample.scene.subjects.push_back(s);
    }
    for (std::size_t k = 0; k < sample.scene.subjects.size(); ++k)
        sample.references.push_back(read_ppm(dir + "/ref_" + std::to_string(k) + ".ppm"));
    sample.target = read_ppm(dir + "/target.ppm");

    std::ifstream lf(dir + "/layout.json", std::ios::binary);
    if (!lf) throw_io("cannot open " + dir + "/layout.json");
    std::string bytes((std::istreambuf_iterator<char>(lf)), std::istreambuf_iterator<char>());
    const PageLayout page = parse_layout(bytes);
    for (const CharacterBox& cb : page.panels.at(0).characters)
        sample.scene.placement.push_back(cb.box);
    return sample;
}

}  // namespace ldit
