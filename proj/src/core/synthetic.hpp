#ifndef LDIT_SYNTHETIC_HPP
#define LDIT_SYNTHETIC_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "image.hpp"
#include "layout.hpp"

namespace ldit {

enum class GlyphShape { Disk, Square, Triangle, Ring };

struct PaletteEntry {
    std::string name;
    Rgb color;
};

// Fixed palette; entries are pairwise separated by >= 80 in L-inf RGB
// distance, and all are far from the canvas background.
const std::vector<PaletteEntry>& subject_palette();
Rgb canvas_background();

struct SyntheticConfig {
    int canvas_w = 32;
    int canvas_h = 32;
    int ref_size = 12;          // reference glyph canvas (square)
    int max_place_attempts = 1000;
    double max_pair_iou = 0.1;  // placement boxes
};

struct SubjectSpec {
    int palette_index = 0;
    GlyphShape shape = GlyphShape::Disk;
    double texture_phase = 0.0;
    // jitter sampled per subject, magnitude scaled by t_target / 9
    double jitter_scale = 1.0;
    double jitter_rotation_deg = 0.0;
    double jitter_hue_deg = 0.0;
};

struct SceneSpec {
    std::uint64_t seed = 0;
    int t_target = 3;
    std::vector<SubjectSpec> subjects;
    std::vector<LayoutBox> placement;  // normalized target-canvas coords
};

struct PairedSample {
    SceneSpec scene;
    std::vector<Image> references;  // un-jittered glyphs, one per subject
    Image target;                   // composed canvas
    std::vector<int> condition_ids; // palette indices, reference order
};

// Jitter envelope as a function of the FramePack-style target timestep:
// 0 at t = 0, full amplitude at t = 9.
double jitter_fraction(int t_target);

// Square glyph canvas for one subject, background elsewhere.
Image render_reference(const SubjectSpec& subj, int size);

// Deterministic paired-sample generator. With t_target = 0 the target
// contains each reference pasted pixel-identically into its box.
PairedSample gen_scene(std::uint64_t seed, int n_subjects, const SyntheticConfig& cfg,
                       int t_target);

// Connected-component color-blob oracle: per palette entry, pixels within
// +/-40 L-inf per channel are labeled; the largest component (>= 16 px)
// yields one detection with a tight normalized bounding box.
std::vector<DetectedBox> detect_subjects(const Image& image,
                                         const std::vector<PaletteEntry>& palette);

// 100 * mean over scenes of exp(-|detected - expected| / max(expected, 1)).
double count_match_score(const std::vector<int>& detected_counts,
                         const std::vector<int>& expected_counts);

// On-disk sample layout: <dir>/ref_<k>.ppm, target.ppm, layout.json, plus
// a manifest record (JSON) returned to the caller. The record's "dir" field
// uses record_dir when given, so manifests can stay relative to their root.
std::string write_sample(const std::string& dir, const PairedSample& sample,
                         const std::string& record_dir = "");
PairedSample load_sample(const std::string& dir);

}  // namespace ldit

#endif  // LDIT_SYNTHETIC_HPP
