#ifndef LDIT_RUN_HPP
#define LDIT_RUN_HPP

#include <string>
#include <vector>

#include "layout.hpp"
#include "trainer.hpp"

namespace ldit {

// Top-level configuration for pipeline commands. Parsed strictly: unknown
// keys are rejected with their path.
struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    SyntheticConfig synthetic;
    LayoutThresholds layout;
    int train_scenes = 48;
    std::vector<int> train_subjects = {1, 1, 2, 3};
    int eval_scenes = 12;
    std::vector<int> eval_subjects = {3};
    std::uint64_t data_seed = 1;
    int sampler_steps = 20;

    void validate() const;
    std::vector<std::uint64_t> train_seed_list() const;
    std::vector<int> train_subject_list() const;
    std::vector<std::uint64_t> eval_seed_list() const;
    std::vector<int> eval_subject_list() const;
};

RunConfig parse_run_config(const std::string& json_text);
std::string run_config_to_json(const RunConfig& cfg);

// Pipeline commands. Each writes artifacts (plus effective_config.json)
// under out_dir and returns a one-line JSON summary.
std::string run_gen_data(const RunConfig& cfg, const std::string& out_dir);
std::string run_train(const RunConfig& cfg, const std::string& data_dir,
                      const std::string& out_dir);
std::string run_eval(const RunConfig& cfg, const std::string& checkpoint,
                     const std::string& out_dir);
std::string run_ablate(const RunConfig& cfg, const std::string& out_dir);
std::string run_cam_dump(const RunConfig& cfg, const std::string& checkpoint,
                         const std::string& out_dir);
std::string run_infer(const RunConfig& cfg, const std::string& checkpoint,
                      const std::string& boxes, const std::string& subjects,
                      std::uint64_t seed, const std::string& out_dir);

// layout-gen / layout-eval support shared by the C API and tests.
std::string layout_metrics_json(const PageLayout& page, const LayoutThresholds& th,
                                int expected_panels, const std::vector<int>& expected_chars);

}  // namespace ldit

#endif  // LDIT_RUN_HPP
