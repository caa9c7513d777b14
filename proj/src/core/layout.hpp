#ifndef LDIT_LAYOUT_HPP
#define LDIT_LAYOUT_HPP

#include <cstdint>
#include <string>
#include <vector>

namespace ldit {

// Axis-aligned box in normalized page coordinates, [0,1] on both axes.
struct LayoutBox {
    double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;

    double width() const { return x1 - x0; }
    double height() const { return y1 - y0; }
    double area() const { return width() * height(); }
    void validate(const std::string& path) const;
};

double box_intersection_area(const LayoutBox& a, const LayoutBox& b);
double box_iou(const LayoutBox& a, const LayoutBox& b);

struct CharacterBox {
    std::string id;
    LayoutBox box;
};

// One comic panel: its page region, caption text, and character boxes in
// page coordinates (declared order preserved).
struct PanelSpec {
    LayoutBox panel_box;
    std::string caption;
    std::vector<CharacterBox> characters;
};

// Ordered panels; declared order is the reading order.
struct PageLayout {
    std::vector<PanelSpec> panels;
    double aspect_ratio = 1.0;

    void validate() const;
};

// Tunable validity thresholds for character-box checks.
struct LayoutThresholds {
    double char_containment = 0.9;      // intersection / char-area
    double char_area_ratio_min = 0.03;  // area(char) / area(panel)
    double char_area_ratio_max = 0.95;
    double row_overlap = 0.5;           // vertical-interval overlap vs smaller height
    bool right_to_left = true;
};

// Strict JSON interchange. Round trips are stable at 9 significant digits:
// serialize(parse(serialize(x))) == serialize(x) bytewise.
PageLayout parse_layout(const std::string& bytes);
std::string serialize_layout(const PageLayout& page);

// Fraction of the unit page covered by the union of panel boxes, computed
// exactly by coordinate compression (overlaps counted once).
double coverage_ratio(const PageLayout& page);
double union_area(const std::vector<LayoutBox>& boxes);

// Reading-order check: consecutive panels group into rows by vertical
// overlap, row tops must be non-decreasing, x-centers strictly decreasing
// within a row (right-to-left default). One pass/fail per page.
bool panel_ordering_ok(const PageLayout& page, const LayoutThresholds& th = {});
double panel_ordering_score(const std::vector<PageLayout>& pages,
                            const LayoutThresholds& th = {});

double panel_count_score(const std::vector<PageLayout>& pages,
                         const std::vector<int>& expected_counts);
// Per-panel averaging across all pages.
double character_count_score(const std::vector<PageLayout>& pages,
                             const std::vector<std::vector<int>>& expected_per_panel);

bool character_box_valid(const LayoutBox& char_box, const LayoutBox& panel_box,
                         const LayoutThresholds& th = {});
double valid_character_score(const std::vector<PageLayout>& pages,
                             const LayoutThresholds& th = {});

// Deterministic heuristic generator: row-banded tiling with balanced panel
// areas, 2% gutters between panels (half at page margins), seeded jitter on
// internal edges, characters side-by-side at 0.8 panel height,
// bottom-aligned.
PageLayout generate_layout(const std::vector<int>& chars_per_panel, double aspect_ratio,
                           std::uint64_t seed, bool right_to_left = true);

struct DetectedBox {
    std::string subject_id;
    LayoutBox box;
};

// Fraction of targets matched by a same-id detection at IoU >= threshold.
double layout_precision(const std::vector<DetectedBox>& detections,
                        const std::vector<DetectedBox>& targets,
                        double iou_threshold = 0.5);

}  // namespace ldit

#endif  // LDIT_LAYOUT_HPP
