#ifndef LDIT_DIT_HPP
#define LDIT_DIT_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "image.hpp"
#include "rope.hpp"
#include "tensor.hpp"

namespace ldit {

struct ModelConfig {
    int d_model = 32;
    int n_heads = 4;
    int n_blocks = 4;
    int patch_size = 4;
    int noise_h = 8;
    int noise_w = 8;
    int cam_block_index = 1;
    int t_target = 3;
    int max_references = 4;
    int vocab_size = 16;   // condition-token embedding table
    int channels = 3;
    double rope_base = 10000.0;
    // 0 = derive the split from head_dim
    int rope_dim_t = 0, rope_dim_h = 0, rope_dim_w = 0;

    void validate() const;
    int head_dim() const { return d_model / n_heads; }
    int patch_dim() const { return patch_size * patch_size * channels; }
    int noise_tokens() const { return noise_h * noise_w; }
    RopeConfig rope() const;
};

// One reference image conditioned on a target region (latent units).
struct ReferenceCondition {
    Image image;
    RegionBox target_box;
    int identity_token_id = 0;
};

struct Segment {
    enum class Kind { Condition, Reference, Noise };
    Kind kind;
    int start = 0;
    int length = 0;
    int ref_index = -1;  // for Kind::Reference
};

// Concatenated [condition | ref_1 ... ref_n | noise] with per-token rotary
// coordinates and the reference-isolation visibility bias (0 for visible
// pairs, large negative for blocked ref_a <-> ref_b pairs, a != b).
struct TokenSequence {
    std::vector<Segment> segments;
    std::vector<int> condition_ids;
    std::vector<Tensor> ref_patches;  // raw [tokens x patch_dim] per reference
    std::vector<std::pair<int, int>> ref_grids;  // (h_i, w_i) per reference
    RopeCoords coords;                // flattened, all tokens
    Tensor visibility_bias;           // [total x total]
    int total = 0;
    int noise_start = 0;
    int noise_len = 0;

    std::pair<int, int> ref_range(int ref_index) const;
    int n_refs() const { return static_cast<int>(ref_patches.size()); }
};

constexpr double kVisibilityBlock = -1e30;

// Image pixels as a {H, W, C} tensor in [-1, 1].
Tensor image_to_tensor(const Image& img);
Image tensor_to_image(const Tensor& t);

// Non-overlapping patch extraction: {H, W, C} -> [h*w x patch*patch*C],
// tokens row-major over the patch grid.
Tensor extract_patches(const Tensor& img, int patch_size);
// Inverse: [h*w x patch*patch*C] -> {h*patch, w*patch, C}.
Tensor assemble_patches(const Tensor& tokens, int grid_h, int grid_w, int patch_size,
                        int channels);

// Fresh parameter set (He-style init, deterministic per seed).
ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed);

// Sequence assembly. `use_regional_rope` selects between the regional
// remapping and the shared-origin default coordinates for references.
TokenSequence build_sequence(const std::vector<ReferenceCondition>& refs,
                             const std::vector<int>& condition_ids, const ModelConfig& cfg,
                             bool use_regional_rope = true);

// Per-tape parameter leaves, keyed by name.
class ParamLeaves {
public:
    ParamLeaves(Tape& tape, const ParamStore& params);
    Var operator[](const std::string& name) const;

private:
    std::map<std::string, Var> leaves_;
};

struct DitForward {
    Var velocity;                       // [noise_tokens x patch_dim]
    Var features;                       // [total x d_model], post final norm
    std::vector<std::vector<Var>> cams; // [n_blocks][n_refs], each [1 x noise_len]
};

// Full forward pass on an existing tape. `noisy_latent` is the
// [noise_tokens x patch_dim] interpolated latent; diffusion_time in [0,1].
DitForward dit_forward(Tape& tape, const ParamLeaves& leaves, const ModelConfig& cfg,
                       const TokenSequence& seq, double diffusion_time,
                       const Tensor& noisy_latent);

// Value-level CAM extraction for one block (dump/visualization path).
// Returns the min-max normalized [0,1] map over the noise grid.
std::vector<double> extract_cam(const ParamStore& params, const ModelConfig& cfg,
                                const TokenSequence& seq, double diffusion_time,
                                const Tensor& noisy_latent, int block_index, int ref_index);

// Reads grad tensors for every parameter leaf after backward().
std::map<std::string, Tensor> collect_grads(const ParamStore& params,
                                            const ParamLeaves& leaves);

}  // namespace ldit

#endif  // LDIT_DIT_HPP
