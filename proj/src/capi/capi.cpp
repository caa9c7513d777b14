#include "ldit.h"

#include <cstdlib>
#include <cstring>
#include <string>

#include <json.hpp>

#include "core/errors.hpp"
#include "core/layout.hpp"
#include "core/run.hpp"

namespace {

thread_local std::string g_last_error;

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (out) std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

ldit_status status_for(const ldit::LditError& e) {
    return e.is_validation_class() ? LDIT_E_VALIDATION : LDIT_E_RUNTIME;
}

template <typename Fn>
ldit_status guarded(Fn&& fn) {
    try {
        fn();
        g_last_error.clear();
        return LDIT_OK;
    } catch (const ldit::LditError& e) {
        g_last_error = e.what();
        return status_for(e);
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return LDIT_E_RUNTIME;
    } catch (...) {
        g_last_error = "unknown error";
        return LDIT_E_RUNTIME;
    }
}

ldit_status require(bool ok, const char* msg) {
    if (ok) return LDIT_OK;
    g_last_error = msg;
    return LDIT_E_VALIDATION;
}

}  // namespace

struct ldit_layout {
    ldit::PageLayout page;
};

struct ldit_run {
    ldit::RunConfig config;
};

extern "C" {

const char* ldit_version(void) { return "1.0.0"; }

const char* ldit_last_error(void) { return g_last_error.c_str(); }

void ldit_string_free(char* s) { std::free(s); }

ldit_status ldit_layout_parse(const char* json, size_t len, ldit_layout** out) {
    if (ldit_status s = require(json && out, "null argument"); s != LDIT_OK) return s;
    return guarded([&] {
        auto* h = new ldit_layout{ldit::parse_layout(std::string(json, len))};
        *out = h;
    });
}

ldit_status ldit_layout_serialize(const ldit_layout* layout, char** out_json) {
    if (ldit_status s = require(layout && out_json, "null argument"); s != LDIT_OK) return s;
    return guarded([&] { *out_json = dup_string(ldit::serialize_layout(layout->page)); });
}

ldit_status ldit_layout_generate(const int* chars_per_panel, size_t n_panels,
                                 double aspect_ratio, uint64_t seed, int right_to_left,
                                 ldit_layout** out) {
    if (ldit_status s = require(chars_per_panel && out && n_panels > 0,
                                "need at least one panel");
        s != LDIT_OK)
        return s;
    return guarded([&] {
        std::vector<int> counts(chars_per_panel, chars_per_panel + n_panels);
        *out = new ldit_layout{
            ldit::generate_layout(counts, aspect_ratio, seed, right_to_left != 0)};
    });
}

ldit_status ldit_layout_metrics(const ldit_layout* layout, const char* expectations_json,
                                char** out_json) {
    if (ldit_status s = require(layout && out_json, "null argument"); s != LDIT_OK) return s;
    return guarded([&] {
        int expected_panels = -1;
        std::vector<int> expected_chars;
        if (expectations_json && *expectations_json) {
            nlohmann::json e;
            try {
                e = nlohmann::json::parse(expectations_json);
            } catch (const nlohmann::json::exception& ex) {
                ldit::throw_parse(std::string("expectations: ") + ex.what());
            }
            if (!e.is_object()) ldit::throw_parse("expectations: expected an object");
            for (const auto& [key, _] : e.items())
                if (key != "panel_count" && key != "character_counts")
                    ldit::throw_parse("expectations: unknown key '" + key + "'");
            if (e.contains("panel_count")) expected_panels = e["panel_count"].get<int>();
            if (e.contains("character_counts"))
                expected_chars = e["character_counts"].get<std::vector<int>>();
        }
        *out_json = dup_string(
            ldit::layout_metrics_json(layout->page, {}, expected_panels, expected_chars));
    });
}

void ldit_layout_free(ldit_layout* layout) { delete layout; }

ldit_status ldit_run_create(const char* config_json, ldit_run** out) {
    if (ldit_status s = require(config_json && out, "null argument"); s != LDIT_OK) return s;
    return guarded([&] { *out = new ldit_run{ldit::parse_run_config(config_json)}; });
}

ldit_status ldit_run_config(const ldit_run* run, char** out_json) {
    if (ldit_status s = require(run && out_json, "null argument"); s != LDIT_OK) return s;
    return guarded([&] { *out_json = dup_string(ldit::run_config_to_json(run->config)); });
}

ldit_status ldit_run_gen_data(ldit_run* run, const char* out_dir, char** summary) {
    if (ldit_status s = require(run && out_dir && summary, "null argument"); s != LDIT_OK)
        return s;
    return guarded([&] { *summary = dup_string(ldit::run_gen_data(run->config, out_dir)); });
}

ldit_status ldit_run_train(ldit_run* run, const char* data_dir, const char* out_dir,
                           char** summary) {
    if (ldit_status s = require(run && out_dir && summary, "null argument"); s != LDIT_OK)
        return s;
    return guarded([&] {
        *summary = dup_string(
            ldit::run_train(run->config, data_dir ? data_dir : "", out_dir));
    });
}

ldit_status ldit_run_eval(ldit_run* run, const char* checkpoint, const char* out_dir,
                          char** summary) {
    if (ldit_status s = require(run && checkpoint && out_dir && summary, "null argument");
        s != LDIT_OK)
        return s;
    return guarded(
        [&] { *summary = dup_string(ldit::run_eval(run->config, checkpoint, out_dir)); });
}

ldit_status ldit_run_ablate(ldit_run* run, const char* out_dir, char** summary) {
    if (ldit_status s = require(run && out_dir && summary, "null argument"); s != LDIT_OK)
        return s;
    return guarded([&] { *summary = dup_string(ldit::run_ablate(run->config, out_dir)); });
}

ldit_status ldit_run_cam_dump(ldit_run* run, const char* checkpoint, const char* out_dir,
                              char** summary) {
    if (ldit_status s = require(run && checkpoint && out_dir && summary, "null argument");
        s != LDIT_OK)
        return s;
    return guarded([&] {
        *summary = dup_string(ldit::run_cam_dump(run->config, checkpoint, out_dir));
    });
}

ldit_status ldit_run_infer(ldit_run* run, const char* checkpoint, const char* boxes,
                           const char* subjects, uint64_t seed, const char* out_dir,
                           char** summary) {
    if (ldit_status s = require(run && checkpoint && boxes && subjects && out_dir && summary,
                                "null argument");
        s != LDIT_OK)
        return s;
    return guarded([&] {
        *summary = dup_string(
            ldit::run_infer(run->config, checkpoint, boxes, subjects, seed, out_dir));
    });
}

void ldit_run_free(ldit_run* run) { delete run; }

}  // extern "C"
