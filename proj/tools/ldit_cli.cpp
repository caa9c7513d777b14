// Command-line front end. Links only the public C API; config plumbing is
// plain JSON.
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ldit.h"

namespace {

using nlohmann::json;

int fail(ldit_status status) {
    std::cerr << "error: " << ldit_last_error() << "\n";
    return static_cast<int>(status);
}

std::string take_string(char* s) {
    std::string out = s ? s : "";
    ldit_string_free(s);
    return out;
}

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CLI::ValidationError("--config", "cannot read " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// --a.b.c=value leftovers become config overrides; values parse as JSON
// scalars/arrays with a string fallback.
json apply_overrides(json cfg, const std::vector<std::string>& extras) {
    for (const std::string& raw : extras) {
        if (raw.rfind("--", 0) != 0 || raw.find('=') == std::string::npos)
            throw CLI::ValidationError("override", "expected --key.path=value, got " + raw);
        const std::size_t eq = raw.find('=');
        const std::string path = raw.substr(2, eq - 2);
        const std::string value = raw.substr(eq + 1);
        json parsed = json::parse(value, nullptr, false);
        if (parsed.is_discarded()) parsed = value;

        json* node = &cfg;
        std::istringstream is(path);
        std::string part;
        std::vector<std::string> parts;
        while (std::getline(is, part, '.')) parts.push_back(part);
        if (parts.empty()) throw CLI::ValidationError("override", "empty key in " + raw);
        for (std::size_t i = 0; i + 1 < parts.size(); ++i) node = &((*node)[parts[i]]);
        (*node)[parts.back()] = parsed;
    }
    return cfg;
}

struct RunHandle {
    ldit_run* run = nullptr;
    ~RunHandle() { ldit_run_free(run); }
};

struct LayoutHandle {
    ldit_layout* layout = nullptr;
    ~LayoutHandle() { ldit_layout_free(layout); }
};

// Opens a run from --config plus overrides, echoes the effective config to
// stdout and saves it under out_dir via the command itself.
int open_run(const std::string& config_path, const std::vector<std::string>& extras,
             RunHandle& h) {
    json cfg = json::object();
    if (!config_path.empty()) {
        cfg = json::parse(read_file(config_path), nullptr, false);
        if (cfg.is_discarded()) {
            std::cerr << "error: --config is not valid JSON\n";
            return 1;
        }
    }
    cfg = apply_overrides(cfg, extras);
    if (ldit_status s = ldit_run_create(cfg.dump().c_str(), &h.run); s != LDIT_OK)
        return fail(s);
    char* effective = nullptr;
    if (ldit_status s = ldit_run_config(h.run, &effective); s != LDIT_OK) return fail(s);
    std::cout << take_string(effective) << "\n";
    return 0;
}

int emit(ldit_status status, char* summary) {
    if (status != LDIT_OK) return fail(status);
    std::cout << take_string(summary) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"layout-conditioned image-customization testbed"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "out", data_dir, checkpoint, in_path;
    std::string boxes, subjects, chars_csv;
    std::uint64_t seed = 0;
    int panels = 0, expect_panels = -1, rtl = 1;
    double aspect = 1.0;
    std::string expect_chars_csv;

    // LDIT_THREADS caps internal workers; the compute core is sequential,
    // so any positive value is accepted and 1 is used.
    if (const char* threads = std::getenv("LDIT_THREADS")) {
        char* end = nullptr;
        const long n = std::strtol(threads, &end, 10);
        if (!end || *end != '\0' || n < 1) {
            std::cerr << "error: LDIT_THREADS must be a positive integer\n";
            return 1;
        }
    }

    auto add_run_opts = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "RunConfig JSON file");
        sub->add_option("--out", out_dir, "output directory");
        sub->allow_extras();  // --key.path=value config overrides
    };

    CLI::App* gen_data = app.add_subcommand("gen-data", "generate the paired scene corpus");
    add_run_opts(gen_data);

    CLI::App* layout_gen = app.add_subcommand("layout-gen", "generate a comic page layout");
    layout_gen->add_option("--panels", panels, "panel count")->required();
    layout_gen->add_option("--chars", chars_csv, "characters per panel, comma-separated");
    layout_gen->add_option("--seed", seed, "generator seed");
    layout_gen->add_option("--aspect", aspect, "page aspect ratio (w/h)");
    layout_gen->add_option("--rtl", rtl, "1 = right-to-left reading order");
    layout_gen->add_option("--out", out_dir, "output directory");

    CLI::App* layout_eval = app.add_subcommand("layout-eval", "score a layout JSON file");
    layout_eval->add_option("--in", in_path, "layout JSON file")->required();
    layout_eval->add_option("--expect-panels", expect_panels, "expected panel count");
    layout_eval->add_option("--expect-chars", expect_chars_csv,
                            "expected characters per panel, comma-separated");

    CLI::App* train_cmd = app.add_subcommand("train", "train the model");
    train_cmd->add_option("--data", data_dir, "pre-generated data directory (default: in-memory)");
    add_run_opts(train_cmd);

    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    add_run_opts(eval_cmd);

    CLI::App* ablate_cmd = app.add_subcommand("ablate", "run the ablation grid");
    add_run_opts(ablate_cmd);

    CLI::App* cam_cmd = app.add_subcommand("cam-dump", "dump attention heatmaps");
    cam_cmd->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    add_run_opts(cam_cmd);

    CLI::App* infer_cmd = app.add_subcommand("infer", "generate one image from boxes");
    infer_cmd->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    infer_cmd->add_option("--boxes", boxes, "x0,y0,x1,y1;... in latent units")->required();
    infer_cmd->add_option("--subjects", subjects, "comma-separated palette names")->required();
    infer_cmd->add_option("--seed", seed, "sampling seed");
    add_run_opts(infer_cmd);

    try {
        app.parse(argc, argv);

        if (layout_gen->parsed()) {
            std::vector<int> counts;
            std::istringstream is(chars_csv);
            std::string part;
            while (std::getline(is, part, ',')) counts.push_back(std::stoi(part));
            if (chars_csv.empty()) counts.assign(static_cast<std::size_t>(panels), 1);
            if (static_cast<int>(counts.size()) != panels) {
                std::cerr << "error: --chars must list " << panels << " values\n";
                return 1;
            }
            LayoutHandle h;
            if (ldit_status s = ldit_layout_generate(counts.data(), counts.size(), aspect,
                                                     seed, rtl, &h.layout);
                s != LDIT_OK)
                return fail(s);
            char* text = nullptr;
            if (ldit_status s = ldit_layout_serialize(h.layout, &text); s != LDIT_OK)
                return fail(s);
            const std::string serialized = take_string(text);
            std::filesystem::create_directories(out_dir);
            std::ofstream f(out_dir + "/layout.json", std::ios::binary);
            f << serialized;
            json summary{{"command", "layout-gen"},
                         {"panels", panels},
                         {"file", out_dir + "/layout.json"}};
            std::cout << summary.dump() << "\n";
            return 0;
        }

        if (layout_eval->parsed()) {
            const std::string bytes = read_file(in_path);
            LayoutHandle h;
            if (ldit_status s = ldit_layout_parse(bytes.c_str(), bytes.size(), &h.layout);
                s != LDIT_OK)
                return fail(s);
            json expect = json::object();
            if (expect_panels >= 0) expect["panel_count"] = expect_panels;
            if (!expect_chars_csv.empty()) {
                std::vector<int> counts;
                std::istringstream is(expect_chars_csv);
                std::string part;
                while (std::getline(is, part, ',')) counts.push_back(std::stoi(part));
                expect["character_counts"] = counts;
            }
            char* metrics = nullptr;
            if (ldit_status s =
                    ldit_layout_metrics(h.layout, expect.dump().c_str(), &metrics);
                s != LDIT_OK)
                return fail(s);
            std::cout << take_string(metrics) << "\n";
            return 0;
        }

        CLI::App* sub = app.get_subcommands().front();
        RunHandle h;
        if (int rc = open_run(config_path, sub->remaining(), h); rc != 0) return rc;

        char* summary = nullptr;
        ldit_status status;
        if (gen_data->parsed())
            status = ldit_run_gen_data(h.run, out_dir.c_str(), &summary);
        else if (train_cmd->parsed())
            status = ldit_run_train(h.run, data_dir.empty() ? nullptr : data_dir.c_str(),
                                    out_dir.c_str(), &summary);
        else if (eval_cmd->parsed())
            status = ldit_run_eval(h.run, checkpoint.c_str(), out_dir.c_str(), &summary);
        else if (ablate_cmd->parsed())
            status = ldit_run_ablate(h.run, out_dir.c_str(), &summary);
        else if (cam_cmd->parsed())
            status = ldit_run_cam_dump(h.run, checkpoint.c_str(), out_dir.c_str(), &summary);
        else if (infer_cmd->parsed())
            status = ldit_run_infer(h.run, checkpoint.c_str(), boxes.c_str(),
                                    subjects.c_str(), seed, out_dir.c_str(), &summary);
        else {
            std::cerr << "error: no subcommand\n";
            return 1;
        }
        return emit(status, summary);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
