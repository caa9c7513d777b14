#include "layout.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <set>

#include <json.hpp>

#include "errors.hpp"

namespace ldit {

namespace {

using nlohmann::json;

std::string fmt_number(double v) {
    if (!std::isfinite(v)) throw_validation("layout: non-finite number");
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

std::string escape_string(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        switch (c) {
            case '"': out += "\\\""; break;
            case '\\': out += "\\\\"; break;
            case '\n': out += "\\n"; break;
            case '\r': out += "\\r"; break;
            case '\t': out += "\\t"; break;
            default:
                if (static_cast<unsigned char>(c) < 0x20) {
                    char buf[8];
                    std::snprintf(buf, sizeof(buf), "\\u%04x", c);
                    out += buf;
                } else {
                    out += c;
                }
        }
    }
    out += '"';
    return out;
}

LayoutBox parse_box(const json& j, const std::string& path) {
    if (!j.is_array() || j.size() != 4)
        throw_parse(path + ": box must be an array of 4 numbers");
    for (const auto& v : j)
        if (!v.is_number()) throw_parse(path + ": box entries must be numbers");
    LayoutBox b{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
    b.validate(path);
    return b;
}

std::string box_to_json(const LayoutBox& b) {
    return "[" + fmt_number(b.x0) + "," + fmt_number(b.y0) + "," + fmt_number(b.x1) + "," +
           fmt_number(b.y1) + "]";
}

double interval_overlap(double a0, double a1, double b0, double b1) {
    return std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
}

}  // namespace

void LayoutBox::validate(const std::string& path) const {
    if (!std::isfinite(x0) || !std::isfinite(y0) || !std::isfinite(x1) || !std::isfinite(y1))
        throw_parse(path + ": non-finite coordinate");
    if (!(0.0 <= x0 && x0 < x1 && x1 <= 1.0))
        throw_parse(path + ": requires 0 <= x0 < x1 <= 1");
    if (!(0.0 <= y0 && y0 < y1 && y1 <= 1.0))
        throw_parse(path + ": requires 0 <= y0 < y1 <= 1");
}

double box_intersection_area(const LayoutBox& a, const LayoutBox& b) {
    return interval_overlap(a.x0, a.x1, b.x0, b.x1) * interval_overlap(a.y0, a.y1, b.y0, b.y1);
}

double box_iou(const LayoutBox& a, const LayoutBox& b) {
    const double inter = box_intersection_area(a, b);
    const double uni = a.area() + b.area() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

void PageLayout::validate() const {
    if (panels.empty()) throw_parse("page: needs at least one panel");
    if (!(aspect_ratio > 0.0) || !std::isfinite(aspect_ratio))
        throw_parse("page: aspect_ratio must be positive");
    for (std::size_t k = 0; k < panels.size(); ++k) {
        const std::string path = "panels[" + std::to_string(k) + "]";
        panels[k].panel_box.validate(path + ".box");
        std::set<std::string> seen;
        for (std::size_t c = 0; c < panels[k].characters.size(); ++c) {
            const std::string cpath = path + ".characters[" + std::to_string(c) + "]";
            const CharacterBox& cb = panels[k].characters[c];
            cb.box.validate(cpath + ".box");
            if (!seen.insert(cb.id).second)
                throw_parse(cpath + ": duplicate character id '" + cb.id + "'");
            const double contain =
                box_intersection_area(cb.box, panels[k].panel_box) / cb.box.area();
            if (contain < 0.9)
                throw_parse(cpath + ": character box not contained in its panel (" +
                            std::to_string(contain) + " < 0.9)");
        }
    }
}

PageLayout parse_layout(const std::string& bytes) {
    json j;
    try {
        j = json::parse(bytes);
    } catch (const json::exception& e) {
        throw_parse(std::string("layout json: ") + e.what());
    }
    if (!j.is_object()) throw_parse("layout json: root must be an object");
    for (const auto& [key, _] : j.items())
        if (key != "aspect_ratio" && key != "panels")
            throw_parse("layout json: unknown key '" + key + "'");
    if (!j.contains("aspect_ratio") || !j["aspect_ratio"].is_number())
        throw_parse("layout json: missing numeric aspect_ratio");
    if (!j.contains("panels") || !j["panels"].is_array())
        throw_parse("layout json: missing panels array");

    PageLayout page;
    page.aspect_ratio = j["aspect_ratio"].get<double>();
    for (std::size_t k = 0; k < j["panels"].size(); ++k) {
        const json& jp = j["panels"][k];
        const std::string path = "panels[" + std::to_string(k) + "]";
        if (!jp.is_object()) throw_parse(path + ": must be an object");
        for (const auto& [key, _] : jp.items())
            if (key != "box" && key != "caption" && key != "characters")
                throw_parse(path + ": unknown key '" + key + "'");
        if (!jp.contains("box")) throw_parse(path + ": missing box");
        PanelSpec panel;
        panel.panel_box = parse_box(jp["box"], path + ".box");
        if (jp.contains("caption")) {
            if (!jp["caption"].is_string()) throw_parse(path + ".caption: must be a string");
            panel.caption = jp["caption"].get<std::string>();
        }
        if (jp.contains("characters")) {
            if (!jp["characters"].is_array())
                throw_parse(path + ".characters: must be an array");
            for (std::size_t c = 0; c < jp["characters"].size(); ++c) {
                const json& jc = jp["characters"][c];
                const std::string cpath = path + ".characters[" + std::to_string(c) + "]";
                if (!jc.is_object() || !jc.contains("id") || !jc.contains("box") ||
                    !jc["id"].is_string())
                    throw_parse(cpath + ": needs string id and box");
                CharacterBox cb;
                cb.id = jc["id"].get<std::string>();
                cb.box = parse_box(jc["box"], cpath + ".box");
                panel.characters.push_back(std::move(cb));
            }
        }
        page.panels.push_back(std::move(panel));
    }
    page.validate();
    return page;
}

std::string serialize_layout(const PageLayout& page) {
    page.validate();
    std::string out = "{\"aspect_ratio\":" + fmt_number(page.aspect_ratio) + ",\"panels\":[";
    for (std::size_t k = 0; k < page.panels.size(); ++k) {
        const PanelSpec& p = page.panels[k];
        if (k) out += ",";
        out += "{\"box\":" + box_to_json(p.panel_box) +
               ",\"caption\":" + escape_string(p.caption) + ",\"characters\":[";
        for (std::size_t c = 0; c < p.characters.size(); ++c) {
            if (c) out += ",";
            out += "{\"id\":" + escape_string(p.characters[c].id) +
                   ",\"box\":" + box_to_json(p.characters[c].box) + "}";
        }
        out += "]}";
    }
    out += "]}";
    return out;
}

double union_area(const std::vector<LayoutBox>& boxes) {
    if (boxes.empty()) return 0.0;
    std::vector<double> xs, ys;
    for (const LayoutBox& b : boxes) {
        xs.push_back(b.x0);
        xs.push_back(b.x1);
        ys.push_back(b.y0);
        ys.push_back(b.y1);
    }
    std::sort(xs.begin(), xs.end());
    xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
    std::sort(ys.begin(), ys.end());
    ys.erase(std::unique(ys.begin(), ys.end()), ys.end());

    double total = 0.0;
    for (std::size_t i = 0; i + 1 < xs.size(); ++i) {
        for (std::size_t j = 0; j + 1 < ys.size(); ++j) {
            const double cx = (xs[i] + xs[i + 1]) / 2.0;
            const double cy = (ys[j] + ys[j + 1]) / 2.0;
            for (const LayoutBox& b : boxes) {
                if (cx > b.x0 && cx < b.x1 && cy > b.y0 && cy < b.y1) {
                    total += (xs[i + 1] - xs[i]) * (ys[j + 1] - ys[j]);
                    break;
                }
            }
        }
    }
    return total;
}

double coverage_ratio(const PageLayout& page) {
    page.validate();
    std::vector<LayoutBox> boxes;
    for (const PanelSpec& p : page.panels) boxes.push_back(p.panel_box);
    return union_area(boxes);
}

bool panel_ordering_ok(const PageLayout& page, const LayoutThresholds& th) {
    struct Row {
        double y0, y1;  // interval of the founding panel
        double prev_center;
        double top;
    };
    std::vector<Row> rows;
    for (const PanelSpec& p : page.panels) {
        const LayoutBox& b = p.panel_box;
        const double center = (b.x0 + b.x1) / 2.0;
        bool joined = false;
        if (!rows.empty()) {
            Row& row = rows.back();
            const double ov = interval_overlap(b.y0, b.y1, row.y0, row.y1);
            const double smaller = std::min(b.height(), row.y1 - row.y0);
            if (ov >= th.row_overlap * smaller) {
                // within-row direction check
                if (th.right_to_left ? !(center < row.prev_center)
                                     : !(center > row.prev_center))
                    return false;
                row.prev_center = center;
                joined = true;
            }
        }
        if (!joined) {
            if (!rows.empty() && b.y0 < rows.back().top) return false;
            rows.push_back({b.y0, b.y1, center, b.y0});
        }
    }
    return true;
}

double panel_ordering_score(const std::vector<PageLayout>& pages, const LayoutThresholds& th) {
    if (pages.empty()) return 0.0;
    int pass = 0;
    for (const PageLayout& p : pages) pass += panel_ordering_ok(p, th) ? 1 : 0;
    return 100.0 * pass / static_cast<double>(pages.size());
}

double panel_count_score(const std::vector<PageLayout>& pages,
                         const std::vector<int>& expected_counts) {
    if (pages.size() != expected_counts.size())
        throw_validation("panel_count_score: expectation length mismatch");
    if (pages.empty()) return 0.0;
    int pass = 0;
    for (std::size_t k = 0; k < pages.size(); ++k)
        pass += static_cast<int>(pages[k].panels.size()) == expected_counts[k] ? 1 : 0;
    return 100.0 * pass / static_cast<double>(pages.size());
}

double character_count_score(const std::vector<PageLayout>& pages,
                             const std::vector<std::vector<int>>& expected_per_panel) {
    if (pages.size() != expected_per_panel.size())
        throw_validation("character_count_score: expectation length mismatch");
    int total = 0, pass = 0;
    for (std::size_t k = 0; k < pages.size(); ++k) {
        const auto& exp = expected_per_panel[k];
        total += static_cast<int>(exp.size());
        for (std::size_t p = 0; p < exp.size(); ++p) {
            if (p < pages[k].panels.size() &&
                static_cast<int>(pages[k].panels[p].characters.size()) == exp[p])
                ++pass;
        }
    }
    return total > 0 ? 100.0 * pass / total : 0.0;
}

bool character_box_valid(const LayoutBox& char_box, const LayoutBox& panel_box,
                         const LayoutThresholds& th) {
    const double contain = box_intersection_area(char_box, panel_box) / char_box.area();
    if (contain < th.char_containment) return false;
    const double ratio = char_box.area() / panel_box.area();
    return ratio >= th.char_area_ratio_min && ratio <= th.char_area_ratio_max;
}

double valid_character_score(const std::vector<PageLayout>& pages, const LayoutThresholds& th) {
    int total = 0, pass = 0;
    for (const PageLayout& page : pages)
        for (const PanelSpec& p : page.panels)
            for (const CharacterBox& c : p.characters) {
                ++total;
                pass += character_box_valid(c.box, p.panel_box, th) ? 1 : 0;
            }
    return total > 0 ? 100.0 * pass / total : 100.0;
}

PageLayout generate_layout(const std::vector<int>& chars_per_panel, double aspect_ratio,
                           std::uint64_t seed, bool right_to_left) {
    const int n = static_cast<int>(chars_per_panel.size());
    if (n < 1 || n > 12) throw_validation("generate_layout: 1..12 panels supported");
    for (int c : chars_per_panel)
        if (c < 0 || c > 4) throw_validation("generate_layout: 0..4 characters per panel");
    if (!(aspect_ratio > 0.0)) throw_validation("generate_layout: aspect ratio must be positive");

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);

    const int n_rows = std::max(1, static_cast<int>(std::lround(std::sqrt(double(n)))));
    std::vector<int> per_row(n_rows, n / n_rows);
    for (int i = 0; i < n % n_rows; ++i) ++per_row[i];

    const double margin = 0.01;   // half-gutter at page edges
    const double gutter = 0.02;   // between panels
    const double usable_h = 1.0 - 2 * margin - gutter * (n_rows - 1);

    // Row heights proportional to panel count keep per-panel areas balanced.
    std::vector<double> row_h(n_rows);
    for (int r = 0; r < n_rows; ++r) row_h[r] = usable_h * per_row[r] / n;

    // Seeded jitter on internal row boundaries, capped at 5% of the
    // smaller adjacent band.
    std::vector<double> row_y(n_rows + 1);
    row_y[0] = margin;
    for (int r = 0; r < n_rows; ++r) row_y[r + 1] = row_y[r] + row_h[r] + (r + 1 < n_rows ? gutter : 0.0);
    for (int r = 1; r < n_rows; ++r) {
        const double cap = 0.05 * std::min(row_h[r - 1], row_h[r]);
        row_y[r] += unit(rng) * cap;
    }

    PageLayout page;
    page.aspect_ratio = aspect_ratio;
    int panel_idx = 0;
    double y_cursor = margin;
    for (int r = 0; r < n_rows; ++r) {
        const double y0 = r == 0 ? margin : row_y[r];
        const double y1 = r + 1 == n_rows ? 1.0 - margin : row_y[r + 1] - gutter;
        const int cols = per_row[r];
        const double usable_w = 1.0 - 2 * margin - gutter * (cols - 1);
        const double col_w = usable_w / cols;
        std::vector<double> col_x(cols + 1);
        col_x[0] = margin;
        for (int c = 0; c < cols; ++c)
            col_x[c + 1] = col_x[c] + col_w + (c + 1 < cols ? gutter : 0.0);
        for (int c = 1; c < cols; ++c) col_x[c] += unit(rng) * 0.05 * col_w;

        // right-to-left within the row by default
        std::vector<int> order(cols);
        for (int c = 0; c < cols; ++c) order[c] = right_to_left ? cols - 1 - c : c;
        for (int oc : order) {
            PanelSpec panel;
            panel.panel_box = {oc == 0 ? margin : col_x[oc],
                               y0,
                               oc + 1 == cols ? 1.0 - margin : col_x[oc + 1] - gutter,
                               y1};
            panel.caption = "panel " + std::to_string(panel_idx + 1);
            const int k = chars_per_panel[panel_idx];
            if (k > 0) {
                const double ph = panel.panel_box.height();
                const double pw = panel.panel_box.width();
                const double slot = pw / k;
                const double cw = slot * 0.9;
                const double ch = ph * 0.8;
                for (int ci = 0; ci < k; ++ci) {
                    CharacterBox cb;
                    cb.id = "c" + std::to_string(panel_idx) + "_" + std::to_string(ci);
                    const double sx = panel.panel_box.x0 + slot * ci + (slot - cw) / 2.0;
                    cb.box = {sx, panel.panel_box.y1 - ch, sx + cw, panel.panel_box.y1};
                    panel.characters.push_back(std::move(cb));
                }
            }
            page.panels.push_back(std::move(panel));
            ++panel_idx;
        }
        y_cursor = y1;
    }
    (void)y_cursor;
    page.validate();
    return page;
}

double layout_precision(const std::vector<DetectedBox>& detections,
                        const std::vector<DetectedBox>& targets, double iou_threshold) {
    {
        std::set<std::string> ids;
        for (const auto& d : detections)
            if (!ids.insert(d.subject_id).second)
                throw_validation("layout_precision: duplicate detection id " + d.subject_id);
    }
    {
        std::set<std::string> ids;
        for (const auto& t : targets)
            if (!ids.insert(t.subject_id).second)
                throw_validation("layout_precision: duplicate target id " + t.subject_id);
    }
    if (targets.empty()) return 0.0;
    int matched = 0;
    for (const auto& t : targets)
        for (const auto& d : detections)
            if (d.subject_id == t.subject_id && box_iou(d.box, t.box) >= iou_threshold) {
                ++matched;
                break;
            }
    return 100.0 * matched / static_cast<double>(targets.size());
}

}  // namespace ldit
