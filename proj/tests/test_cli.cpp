#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace {

namespace fs = std::filesystem;

struct CliResult {
    int exit_code = -1;
    std::string stdout_text;
};

CliResult run_cli(const std::string& args) {
    const fs::path dir = fs::temp_directory_path() / "ldit_cli_io";
    fs::create_directories(dir);
    const std::string out_file = (dir / "stdout.txt").string();
    const std::string cmd =
        std::string(LDIT_CLI_PATH) + " " + args + " > " + out_file + " 2>/dev/null";
    const int raw = std::system(cmd.c_str());
    CliResult r;
    r.exit_code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    std::ifstream f(out_file, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    r.stdout_text = ss.str();
    return r;
}

std::string file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

std::string tmp_dir(const std::string& name) {
    const std::string dir = (fs::temp_directory_path() / name).string();
    fs::remove_all(dir);
    return dir;
}

}  // namespace

TEST_CASE("layout-gen is byte-deterministic") {
    const std::string d1 = tmp_dir("ldit_cli_lg1"), d2 = tmp_dir("ldit_cli_lg2");
    CHECK(run_cli("layout-gen --panels 4 --chars 2,1,0,3 --seed 7 --out " + d1).exit_code == 0);
    CHECK(run_cli("layout-gen --panels 4 --chars 2,1,0,3 --seed 7 --out " + d2).exit_code == 0);
    const std::string b1 = file_bytes(d1 + "/layout.json");
    CHECK(!b1.empty());
    CHECK(b1 == file_bytes(d2 + "/layout.json"));
}

TEST_CASE("layout-eval reports the five metric names") {
    const std::string d = tmp_dir("ldit_cli_le");
    REQUIRE(run_cli("layout-gen --panels 3 --chars 1,2,0 --seed 5 --out " + d).exit_code == 0);
    CliResult r = run_cli("layout-eval --in " + d + "/layout.json --expect-panels 3 " +
                          "--expect-chars 1,2,0");
    CHECK(r.exit_code == 0);
    for (const char* field : {"panel_count", "panel_ordering", "valid_character",
                              "character_count", "coverage_ratio"})
        CHECK(r.stdout_text.find(field) != std::string::npos);
}

TEST_CASE("bad inputs exit 1 with usage or a named cause") {
    CHECK(run_cli("no-such-command").exit_code == 1);
    CHECK(run_cli("layout-eval").exit_code == 1);               // missing --in
    CHECK(run_cli("train --not-a-flag").exit_code == 1);        // malformed override
    CHECK(run_cli("train --train.bogus_key=1 --out " + tmp_dir("ldit_cli_bk")).exit_code == 1);
    const std::string d = tmp_dir("ldit_cli_badjson");
    fs::create_directories(d);
    std::ofstream(d + "/layout.json") << "{broken";
    CHECK(run_cli("layout-eval --in " + d + "/layout.json").exit_code == 1);
}

TEST_CASE("train / eval / infer pipeline with exit-code contract") {
    const std::string base = tmp_dir("ldit_cli_pipe");
    const std::string small =
        " --model.d_model=16 --model.n_heads=2 --model.n_blocks=2"
        " --train.steps_single=2 --train.steps_multi=1 --train.batch_size=2"
        " --data.train_scenes=3 --data.eval_scenes=1";

    CliResult train = run_cli("train --out " + base + "/train" + small);
    REQUIRE(train.exit_code == 0);
    // effective config first, one-line summary last
    CHECK(train.stdout_text.find("\"lambda_mask\":0.05") != std::string::npos);
    CHECK(train.stdout_text.rfind("{\"checkpoint\"") != std::string::npos);
    const std::string ckpt = base + "/train/checkpoint.ldit";
    REQUIRE(fs::exists(ckpt));

    CliResult eval = run_cli("eval --checkpoint " + ckpt + " --out " + base + "/eval" + small);
    CHECK(eval.exit_code == 0);
    CHECK(eval.stdout_text.find("layout_precision") != std::string::npos);

    CliResult infer = run_cli("infer --checkpoint " + ckpt +
                              " --boxes 0,0,4,4 --subjects red --seed 2 --out " + base +
                              "/infer" + small);
    CHECK(infer.exit_code == 0);
    CHECK(fs::exists(base + "/infer/image.ppm"));
    CHECK(fs::exists(base + "/infer/detections.json"));

    // out-of-grid box -> validation exit code, message names the box
    CliResult bad = run_cli("infer --checkpoint " + ckpt +
                            " --boxes 0,0,64,4 --subjects red --out " + base + "/inferbad" +
                            small);
    CHECK(bad.exit_code == 1);

    // unreadable checkpoint -> runtime exit code
    CliResult broken = run_cli("eval --checkpoint " + base + "/nope.ldit --out " + base +
                               "/evalbad" + small);
    CHECK(broken.exit_code == 2);
}

TEST_CASE("same-seed invocations produce byte-identical artifacts") {
    const std::string d1 = tmp_dir("ldit_cli_det1"), d2 = tmp_dir("ldit_cli_det2");
    const std::string args =
        " --model.d_model=16 --model.n_heads=2 --model.n_blocks=2"
        " --train.steps_single=2 --train.steps_multi=1 --train.batch_size=2"
        " --data.train_scenes=3 --data.eval_scenes=1";
    REQUIRE(run_cli("train --out " + d1 + args).exit_code == 0);
    REQUIRE(run_cli("train --out " + d2 + args).exit_code == 0);
    CHECK(file_bytes(d1 + "/checkpoint.ldit") == file_bytes(d2 + "/checkpoint.ldit"));
    CHECK(file_bytes(d1 + "/loss_log.jsonl") == file_bytes(d2 + "/loss_log.jsonl"));

    const std::string g1 = tmp_dir("ldit_cli_gd1"), g2 = tmp_dir("ldit_cli_gd2");
    REQUIRE(run_cli("gen-data --out " + g1 + " --data.train_scenes=2 --data.eval_scenes=1")
                .exit_code == 0);
    REQUIRE(run_cli("gen-data --out " + g2 + " --data.train_scenes=2 --data.eval_scenes=1")
                .exit_code == 0);
    CHECK(file_bytes(g1 + "/data/train/1/target.ppm") ==
          file_bytes(g2 + "/data/train/1/target.ppm"));
    CHECK(file_bytes(g1 + "/data/manifest.jsonl") == file_bytes(g2 + "/data/manifest.jsonl"));
}

TEST_CASE("LDIT_THREADS must be a positive integer") {
    CHECK(std::system((std::string("LDIT_THREADS=abc ") + LDIT_CLI_PATH +
                       " layout-gen --panels 1 --out " + tmp_dir("ldit_cli_thr") +
                       " >/dev/null 2>&1")
                          .c_str()) != 0);
    CHECK(std::system((std::string("LDIT_THREADS=2 ") + LDIT_CLI_PATH +
                       " layout-gen --panels 1 --out " + tmp_dir("ldit_cli_thr2") +
                       " >/dev/null 2>&1")
                          .c_str()) == 0);
}
