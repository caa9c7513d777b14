#ifndef LDIT_TRAINER_HPP
#define LDIT_TRAINER_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dit.hpp"
#include "losses.hpp"
#include "synthetic.hpp"
#include "tensor.hpp"

namespace ldit {

struct TrainConfig {
    int steps_single = 2000;
    int steps_multi = 1000;
    int batch_size = 8;
    double lr = 2e-4;
    double weight_decay = 0.0;
    double lambda_mask = 0.05;
    bool use_regional_rope = true;
    bool use_masked_loss = true;
    std::uint64_t seed = 0;

    int total_steps() const { return steps_single + steps_multi; }
    void validate() const;
};

// Model-ready view of one paired sample: token sequences for both RoPE
// modes, the clean latent, and per-reference layout masks.
struct PreparedSample {
    PairedSample raw;
    TokenSequence seq_regional;
    TokenSequence seq_default;
    Tensor clean_latent;  // [noise_tokens x patch_dim]
    std::vector<LayoutMask> masks;

    const TokenSequence& seq(bool regional) const {
        return regional ? seq_regional : seq_default;
    }
};

struct Dataset {
    std::vector<PreparedSample> samples;
    std::vector<int> single_subject;  // indices
    std::vector<int> multi_subject;

    bool empty() const { return samples.empty(); }
};

// Scene canvas must equal the model's noise grid times patch size.
PreparedSample prepare_sample(const PairedSample& sample, const ModelConfig& cfg);
Dataset make_dataset(const ModelConfig& cfg, const SyntheticConfig& synth,
                     const std::vector<std::uint64_t>& seeds,
                     const std::vector<int>& n_subjects, int t_target);
Dataset load_dataset(const ModelConfig& cfg, const std::string& data_dir);

struct StepLog {
    int step = 0;
    double diff = 0.0;
    double mask = 0.0;
    double total = 0.0;
};

struct TrainerState {
    ModelConfig model_cfg;
    TrainConfig train_cfg;
    ParamStore params;
    AdamW optimizer;
    int step = 0;  // completed steps
};

TrainerState init_trainer(const ModelConfig& model_cfg, const TrainConfig& train_cfg);

// Runs steps (state.step, until_step]. Deterministic: every random draw
// comes from a per-step engine seeded by (seed, step), so an interrupted
// and resumed run reproduces the uninterrupted loss log bitwise.
// Gradients accumulate over batch elements in index order.
std::vector<StepLog> train(TrainerState& state, const Dataset& dataset, int until_step,
                           const std::string& diagnostics_dir = "");

std::string step_log_to_jsonl(const std::vector<StepLog>& log);

// Checkpoint binary: "LDIT1" magic, JSON config snapshot, parameter arrays
// as little-endian 64-bit floats in declared order, optimizer state, step
// counter. save -> load -> save is byte-identical.
void save_checkpoint(const std::string& path, const TrainerState& state);
TrainerState load_checkpoint(const std::string& path);

struct EvalReport {
    double layout_precision = 0.0;   // percentage
    double count_match = 0.0;        // percentage
    double cam_leakage = 0.0;        // mean ReLU(CAM - MASK)
    int n_samples = 0;

    std::string to_json() const;
};

// Deterministic 20-step Euler flow integration from t = 1 to 0; generated
// images are scored by the color-blob oracle against placement boxes.
Tensor sample_latent(const ModelConfig& cfg, const ParamStore& params,
                     const TokenSequence& seq, std::uint64_t noise_seed, int n_steps = 20);
Tensor sample_latent(const TrainerState& state, const PreparedSample& sample,
                     std::uint64_t noise_seed, int n_steps = 20);
Image generate_image(const TrainerState& state, const PreparedSample& sample,
                     std::uint64_t noise_seed, int n_steps = 20);
EvalReport evaluate(const TrainerState& state, const Dataset& eval_set);

struct AblationRow {
    std::string name;
    bool use_regional_rope = true;
    bool use_masked_loss = true;
    int t_target = 3;
    double jitter_fraction = 0.0;
    EvalReport report;
};

struct AblationTable {
    std::vector<AblationRow> rows;
    std::string to_json() const;
    std::string to_text() const;  // aligned text table
};

// 4 rows of the {RegionalRoPE, masked loss} grid at the base t_target,
// plus a t_target sweep {1,3,5,9} with both features on. All cells share
// the same data seeds.
AblationTable ablate(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                     const SyntheticConfig& synth, const std::vector<std::uint64_t>& train_seeds,
                     const std::vector<int>& train_subjects,
                     const std::vector<std::uint64_t>& eval_seeds,
                     const std::vector<int>& eval_subjects);

}  // namespace ldit

#endif  // LDIT_TRAINER_HPP
