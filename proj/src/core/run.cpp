#include "run.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "errors.hpp"

namespace ldit {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

void reject_unknown(const json& j, const std::vector<std::string>& allowed,
                    const std::string& path) {
    if (!j.is_object()) throw_parse(path + ": expected an object");
    for (const auto& [key, _] : j.items())
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
            throw_parse(path + ": unknown key '" + key + "'");
}

template <typename T>
void get_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

void write_text(const std::string& path, const std::string& text) {
    fs::create_directories(fs::path(path).parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw_io("cannot write " + path);
    f << text;
}

void write_effective_config(const RunConfig& cfg, const std::string& out_dir) {
    write_text(out_dir + "/effective_config.json", run_config_to_json(cfg) + "\n");
}

Dataset build_train_set(const RunConfig& cfg) {
    return make_dataset(cfg.model, cfg.synthetic, cfg.train_seed_list(),
                        cfg.train_subject_list(), cfg.model.t_target);
}

Dataset build_eval_set(const RunConfig& cfg) {
    return make_dataset(cfg.model, cfg.synthetic, cfg.eval_seed_list(),
                        cfg.eval_subject_list(), cfg.model.t_target);
}

}  // namespace

void RunConfig::validate() const {
    model.validate();
    train.validate();
    if (train_scenes < 1 || eval_scenes < 1)
        throw_validation("config: scene counts must be >= 1");
    if (train_subjects.empty() || eval_subjects.empty())
        throw_validation("config: subject count lists must be non-empty");
    if (sampler_steps < 1) throw_validation("config: sampler_steps must be >= 1");
    if (synthetic.canvas_w != model.noise_w * model.patch_size ||
        synthetic.canvas_h != model.noise_h * model.patch_size)
        throw_validation("config: canvas must equal noise grid x patch size");
    if (synthetic.ref_size % model.patch_size != 0)
        throw_validation("config: ref_size must be divisible by patch size");
}

std::vector<std::uint64_t> RunConfig::train_seed_list() const {
    std::vector<std::uint64_t> seeds;
    for (int i = 0; i < train_scenes; ++i) seeds.push_back(data_seed + i);
    return seeds;
}

std::vector<int> RunConfig::train_subject_list() const {
    std::vector<int> out;
    for (int i = 0; i < train_scenes; ++i)
        out.push_back(train_subjects[i % train_subjects.size()]);
    return out;
}

// eval seeds live in a disjoint range from training seeds
std::vector<std::uint64_t> RunConfig::eval_seed_list() const {
    std::vector<std::uint64_t> seeds;
    for (int i = 0; i < eval_scenes; ++i) seeds.push_back(data_seed + 1000000 + i);
    return seeds;
}

std::vector<int> RunConfig::eval_subject_list() const {
    std::vector<int> out;
    for (int i = 0; i < eval_scenes; ++i)
        out.push_back(eval_subjects[i % eval_subjects.size()]);
    return out;
}

RunConfig parse_run_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw_parse(std::string("config: ") + e.what());
    }
    reject_unknown(j, {"model", "train", "synthetic", "layout", "data", "sampler"}, "config");

    RunConfig cfg;
    if (j.contains("model")) {
        const json& m = j["model"];
        reject_unknown(m,
                       {"d_model", "n_heads", "n_blocks", "patch_size", "noise_h", "noise_w",
                        "cam_block_index", "t_target", "max_references", "vocab_size",
                        "channels", "rope_base", "rope_dim_t", "rope_dim_h", "rope_dim_w"},
                       "config.model");
        get_if(m, "d_model", cfg.model.d_model);
        get_if(m, "n_heads", cfg.model.n_heads);
        get_if(m, "n_blocks", cfg.model.n_blocks);
        get_if(m, "patch_size", cfg.model.patch_size);
        get_if(m, "noise_h", cfg.model.noise_h);
        get_if(m, "noise_w", cfg.model.noise_w);
        get_if(m, "cam_block_index", cfg.model.cam_block_index);
        get_if(m, "t_target", cfg.model.t_target);
        get_if(m, "max_references", cfg.model.max_references);
        get_if(m, "vocab_size", cfg.model.vocab_size);
        get_if(m, "channels", cfg.model.channels);
        get_if(m, "rope_base", cfg.model.rope_base);
        get_if(m, "rope_dim_t", cfg.model.rope_dim_t);
        get_if(m, "rope_dim_h", cfg.model.rope_dim_h);
        get_if(m, "rope_dim_w", cfg.model.rope_dim_w);
    }
    if (j.contains("train")) {
        const json& t = j["train"];
        reject_unknown(t,
                       {"steps_single", "steps_multi", "batch_size", "lr", "weight_decay",
                        "lambda_mask", "use_regional_rope", "use_masked_loss", "seed"},
                       "config.train");
        get_if(t, "steps_single", cfg.train.steps_single);
        get_if(t, "steps_multi", cfg.train.steps_multi);
        get_if(t, "batch_size", cfg.train.batch_size);
        get_if(t, "lr", cfg.train.lr);
        get_if(t, "weight_decay", cfg.train.weight_decay);
        get_if(t, "lambda_mask", cfg.train.lambda_mask);
        get_if(t, "use_regional_rope", cfg.train.use_regional_rope);
        get_if(t, "use_masked_loss", cfg.train.use_masked_loss);
        get_if(t, "seed", cfg.train.seed);
    }
    if (j.contains("synthetic")) {
        const json& s = j["synthetic"];
        reject_unknown(s, {"canvas_w", "canvas_h", "ref_size", "max_place_attempts",
                           "max_pair_iou"},
                       "config.synthetic");
        get_if(s, "canvas_w", cfg.synthetic.canvas_w);
        get_if(s, "canvas_h", cfg.synthetic.canvas_h);
        get_if(s, "ref_size", cfg.synthetic.ref_size);
        get_if(s, "max_place_attempts", cfg.synthetic.max_place_attempts);
        get_if(s, "max_pair_iou", cfg.synthetic.max_pair_iou);
    }
    if (j.contains("layout")) {
        const json& l = j["layout"];
        reject_unknown(l, {"char_containment", "char_area_ratio_min", "char_area_ratio_max",
                           "row_overlap", "right_to_left"},
                       "config.layout");
        get_if(l, "char_containment", cfg.layout.char_containment);
        get_if(l, "char_area_ratio_min", cfg.layout.char_area_ratio_min);
        get_if(l, "char_area_ratio_max", cfg.layout.char_area_ratio_max);
        get_if(l, "row_overlap", cfg.layout.row_overlap);
        get_if(l, "right_to_left", cfg.layout.right_to_left);
    }
    if (j.contains("data")) {
        const json& d = j["data"];
        reject_unknown(d, {"train_scenes", "train_subjects", "eval_scenes", "eval_subjects",
                           "seed"},
                       "config.data");
        get_if(d, "train_scenes", cfg.train_scenes);
        get_if(d, "train_subjects", cfg.train_subjects);
        get_if(d, "eval_scenes", cfg.eval_scenes);
        get_if(d, "eval_subjects", cfg.eval_subjects);
        get_if(d, "seed", cfg.data_seed);
    }
    if (j.contains("sampler")) {
        reject_unknown(j["sampler"], {"n_steps"}, "config.sampler");
        get_if(j["sampler"], "n_steps", cfg.sampler_steps);
    }
    cfg.validate();
    return cfg;
}

std::string run_config_to_json(const RunConfig& cfg) {
    json j;
    j["model"] = {{"d_model", cfg.model.d_model},
                  {"n_heads", cfg.model.n_heads},
                  {"n_blocks", cfg.model.n_blocks},
                  {"patch_size", cfg.model.patch_size},
                  {"noise_h", cfg.model.noise_h},
                  {"noise_w", cfg.model.noise_w},
                  {"cam_block_index", cfg.model.cam_block_index},
                  {"t_target", cfg.model.t_target},
                  {"max_references", cfg.model.max_references},
                  {"vocab_size", cfg.model.vocab_size},
                  {"channels", cfg.model.channels},
                  {"rope_base", cfg.model.rope_base},
                  {"rope_dim_t", cfg.model.rope_dim_t},
                  {"rope_dim_h", cfg.model.rope_dim_h},
                  {"rope_dim_w", cfg.model.rope_dim_w}};
    j["train"] = {{"steps_single", cfg.train.steps_single},
                  {"steps_multi", cfg.train.steps_multi},
                  {"batch_size", cfg.train.batch_size},
                  {"lr", cfg.train.lr},
                  {"weight_decay", cfg.train.weight_decay},
                  {"lambda_mask", cfg.train.lambda_mask},
                  {"use_regional_rope", cfg.train.use_regional_rope},
                  {"use_masked_loss", cfg.train.use_masked_loss},
                  {"seed", cfg.train.seed}};
    j["synthetic"] = {{"canvas_w", cfg.synthetic.canvas_w},
                      {"canvas_h", cfg.synthetic.canvas_h},
                      {"ref_size", cfg.synthetic.ref_size},
                      {"max_place_attempts", cfg.synthetic.max_place_attempts},
                      {"max_pair_iou", cfg.synthetic.max_pair_iou}};
    j["layout"] = {{"char_containment", cfg.layout.char_containment},
                   {"char_area_ratio_min", cfg.layout.char_area_ratio_min},
                   {"char_area_ratio_max", cfg.layout.char_area_ratio_max},
                   {"row_overlap", cfg.layout.row_overlap},
                   {"right_to_left", cfg.layout.right_to_left}};
    j["data"] = {{"train_scenes", cfg.train_scenes},
                 {"train_subjects", cfg.train_subjects},
                 {"eval_scenes", cfg.eval_scenes},
                 {"eval_subjects", cfg.eval_subjects},
                 {"seed", cfg.data_seed}};
    j["sampler"] = {{"n_steps", cfg.sampler_steps}};
    return j.dump();
}

std::string run_gen_data(const RunConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    fs::create_directories(out_dir);
    write_effective_config(cfg, out_dir);

    std::ostringstream manifest;
    auto emit_split = [&](const std::string& split, const std::vector<std::uint64_t>& seeds,
                          const std::vector<int>& subjects) {
        for (std::size_t k = 0; k < seeds.size(); ++k) {
            PairedSample s = gen_scene(seeds[k], subjects[k], cfg.synthetic,
                                       cfg.model.t_target);
            const std::string rel = split + "/" + std::to_string(seeds[k]);
            manifest << write_sample(out_dir + "/data/" + rel, s, rel) << "\n";
        }
    };
    emit_split("train", cfg.train_seed_list(), cfg.train_subject_list());
    emit_split("eval", cfg.eval_seed_list(), cfg.eval_subject_list());
    write_text(out_dir + "/data/manifest.jsonl", manifest.str());

    json summary{{"command", "gen-data"},
                 {"train_scenes", cfg.train_scenes},
                 {"eval_scenes", cfg.eval_scenes},
                 {"out", out_dir + "/data"}};
    return summary.dump();
}

std::string run_train(const RunConfig& cfg, const std::string& data_dir,
                      const std::string& out_dir) {
    cfg.validate();
    fs::create_directories(out_dir);
    write_effective_config(cfg, out_dir);

    Dataset train_set = data_dir.empty() ? build_train_set(cfg)
                                         : load_dataset(cfg.model, data_dir + "/train");
    TrainerState state = init_trainer(cfg.model, cfg.train);
    const std::vector<StepLog> log =
        train(state, train_set, cfg.train.total_steps(), out_dir);
    write_text(out_dir + "/loss_log.jsonl", step_log_to_jsonl(log));
    const std::string ckpt = out_dir + "/checkpoint.ldit";
    save_checkpoint(ckpt, state);

    json summary{{"command", "train"},
                 {"steps", state.step},
                 {"final_diff", log.empty() ? 0.0 : log.back().diff},
                 {"final_mask", log.empty() ? 0.0 : log.back().mask},
                 {"final_total", log.empty() ? 0.0 : log.back().total},
                 {"checkpoint", ckpt}};
    return summary.dump();
}

std::string run_eval(const RunConfig& cfg, const std::string& checkpoint,
                     const std::string& out_dir) {
    cfg.validate();
    fs::create_directories(out_dir);
    write_effective_config(cfg, out_dir);

    TrainerState state = load_checkpoint(checkpoint);
    Dataset eval_set = make_dataset(state.model_cfg, cfg.synthetic, cfg.eval_seed_list(),
                                    cfg.eval_subject_list(), state.model_cfg.t_target);
    const EvalReport rep = evaluate(state, eval_set);
    write_text(out_dir + "/eval_report.json", rep.to_json() + "\n");

    json summary{{"command", "eval"},
                 {"layout_precision", rep.layout_precision},
                 {"count_match", rep.count_match},
                 {"cam_leakage", rep.cam_leakage},
                 {"n_samples", rep.n_samples}};
    return summary.dump();
}

std::string run_ablate(const RunConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    fs::create_directories(out_dir);
    write_effective_config(cfg, out_dir);

    const AblationTable table =
        ablate(cfg.model, cfg.train, cfg.synthetic, cfg.train_seed_list(),
               cfg.train_subject_list(), cfg.eval_seed_list(), cfg.eval_subject_list());
    write_text(out_dir + "/ablation.json", table.to_json() + "\n");
    write_text(out_dir + "/ablation.txt", table.to_text());

    json summary{{"command", "ablate"},
                 {"rows", table.rows.size()},
                 {"table_json", out_dir + "/ablation.json"},
                 {"table_text", out_dir + "/ablation.txt"}};
    return summary.dump();
}

std::string run_cam_dump(const RunConfig& cfg, const std::string& checkpoint,
                         const std::string& out_dir) {
    cfg.validate();
    fs::create_directories(out_dir);
    write_effective_config(cfg, out_dir);

    TrainerState state = load_checkpoint(checkpoint);
    const ModelConfig& mc = state.model_cfg;
    PairedSample raw = gen_scene(cfg.eval_seed_list().front(), cfg.eval_subject_list().front(),
                                 cfg.synthetic, mc.t_target);
    PreparedSample sample = prepare_sample(raw, mc);
    const TokenSequence& seq = sample.seq(state.train_cfg.use_regional_rope);

    // visualization path: CAMs averaged across timesteps, then renormalized
    const std::vector<double> times = {0.1, 0.3, 0.5, 0.7, 0.9};
    std::vector<std::string> files;
    for (int b = 0; b < mc.n_blocks; ++b) {
        for (int r = 0; r < seq.n_refs(); ++r) {
            std::vector<double> acc(static_cast<std::size_t>(mc.noise_tokens()), 0.0);
            for (double t : times) {
                std::mt19937_64 rng(sample.raw.scene.seed ^ 0x5eedu);
                const Tensor eps = Tensor::randn(sample.clean_latent.shape, rng);
                Tensor y_t = sample.clean_latent;
                for (std::size_t i = 0; i < y_t.numel(); ++i)
                    y_t.data[i] = (1.0 - t) * y_t.data[i] + t * eps.data[i];
                const std::vector<double> cam =
                    extract_cam(state.params, mc, seq, t, y_t, b, r);
                for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += cam[i] / times.size();
            }
            const double lo = *std::min_element(acc.begin(), acc.end());
            const double hi = *std::max_element(acc.begin(), acc.end());
            for (double& v : acc) v = hi > lo ? (v - lo) / (hi - lo) : 0.0;
            const std::string name =
                "cam_r" + std::to_string(r) + "_b" + std::to_string(b) + ".ppm";
            write_ppm(out_dir + "/" + name, heatmap_to_image(acc, mc.noise_h, mc.noise_w));
            files.push_back(name);
        }
    }
    json summary{{"command", "cam-dump"}, {"files", files}, {"out", out_dir}};
    return summary.dump();
}

std::string run_infer(const RunConfig& cfg, const std::string& checkpoint,
                      const std::string& boxes, const std::string& subjects,
                      std::uint64_t seed, const std::string& out_dir) {
    cfg.validate();
    fs::create_directories(out_dir);
    write_effective_config(cfg, out_dir);

    TrainerState state = load_checkpoint(checkpoint);
    const ModelConfig& mc = state.model_cfg;

    // parse "x0,y0,x1,y1;..." (latent units)
    std::vector<RegionBox> parsed_boxes;
    {
        std::istringstream is(boxes);
        std::string part;
        while (std::getline(is, part, ';')) {
            if (part.empty()) continue;
            RegionBox b;
            b.alignment = 0.5;
            if (std::sscanf(part.c_str(), "%lf,%lf,%lf,%lf", &b.w_start, &b.h_start, &b.w_end,
                            &b.h_end) != 4)
                throw_parse("infer: cannot parse box '" + part + "'");
            parsed_boxes.push_back(b);
        }
    }
    std::vector<std::string> names;
    {
        std::istringstream is(subjects);
        std::string part;
        while (std::getline(is, part, ',')) names.push_back(part);
    }
    if (parsed_boxes.empty() || parsed_boxes.size() != names.size())
        throw_validation("infer: need the same number of boxes and subjects");

    std::mt19937_64 rng(seed);
    std::vector<ReferenceCondition> refs;
    std::vector<int> condition_ids;
    for (std::size_t k = 0; k < names.size(); ++k) {
        int palette_index = -1;
        for (std::size_t p = 0; p < subject_palette().size(); ++p)
            if (subject_palette()[p].name == names[k]) palette_index = static_cast<int>(p);
        if (palette_index < 0)
            throw_validation("infer: unknown subject '" + names[k] + "'");
        SubjectSpec subj;
        subj.palette_index = palette_index;
        subj.shape =
            static_cast<GlyphShape>(std::uniform_int_distribution<int>(0, 3)(rng));
        subj.texture_phase = std::uniform_real_distribution<double>(0.0, 6.28)(rng);
        ReferenceCondition rc;
        rc.image = render_reference(subj, cfg.synthetic.ref_size);
        rc.target_box = parsed_boxes[k];
        rc.identity_token_id = palette_index;
        refs.push_back(std::move(rc));
        condition_ids.push_back(palette_index);
    }

    TokenSequence seq =
        build_sequence(refs, condition_ids, mc, state.train_cfg.use_regional_rope);
    const Tensor latent = sample_latent(mc, state.params, seq, seed, cfg.sampler_steps);
    const Image img = tensor_to_image(
        assemble_patches(latent, mc.noise_h, mc.noise_w, mc.patch_size, mc.channels));
    write_ppm(out_dir + "/image.ppm", img);

    const auto detections = detect_subjects(img, subject_palette());
    json dets = json::array();
    for (const DetectedBox& d : detections)
        dets.push_back({{"id", d.subject_id},
                        {"box", {d.box.x0, d.box.y0, d.box.x1, d.box.y1}}});
    write_text(out_dir + "/detections.json", dets.dump() + "\n");

    json summary{{"command", "infer"},
                 {"image", out_dir + "/image.ppm"},
                 {"detections", dets}};
    return summary.dump();
}

std::string layout_metrics_json(const PageLayout& page, const LayoutThresholds& th,
                                int expected_panels, const std::vector<int>& expected_chars) {
    std::vector<PageLayout> pages = {page};
    json j;
    j["coverage_ratio"] = coverage_ratio(page);
    j["panel_ordering"] = panel_ordering_score(pages, th);
    j["valid_character"] = valid_character_score(pages, th);
    if (expected_panels >= 0)
        j["panel_count"] = panel_count_score(pages, {expected_panels});
    else
        j["panel_count"] = nullptr;
    if (!expected_chars.empty())
        j["character_count"] = character_count_score(pages, {expected_chars});
    else
        j["character_count"] = nullptr;
    return j.dump();
}

}  // namespace ldit
