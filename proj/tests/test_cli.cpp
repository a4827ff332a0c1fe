#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "mcl/config.hpp"
#include "mcl/nn.hpp"

#ifndef MCL_CLI_PATH
#define MCL_CLI_PATH ""
#endif

namespace fs = std::filesystem;
using namespace mcl;

namespace {

struct Workdir {
    fs::path root;
    Workdir() : root(fs::temp_directory_path() / "mcl_cli_test") {
        fs::remove_all(root);
        fs::create_directories(root);
    }
    ~Workdir() { fs::remove_all(root); }
    std::string path(const std::string& n) const { return (root / n).string(); }
};

int cli(const std::string& args, const std::string& log) {
    const std::string cmd = std::string(MCL_CLI_PATH) + " " + args + " > " + log + " 2>&1";
    const int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

std::string slurp(const std::string& path) {
    std::ifstream f(path);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

std::string micro_single_config() {
    RunConfig cfg;
    cfg.model = "single";
    cfg.single.H = 3;
    cfg.single.B = 0.2;
    cfg.hidden = {8};
    cfg.anchor_output = true;
    cfg.train.episodes = 1;
    cfg.train.trajectories = 16;
    cfg.train.epochs = 1;
    cfg.train.minibatch = 8;
    cfg.train.learning_rate = 1e-4;
    cfg.quad_order = 2;
    cfg.eval.states = 16;
    cfg.eval.periods = 1;
    return serialize_config(cfg);
}

} // namespace

TEST_CASE("missing subcommand and unknown flags exit 2") {
    Workdir w;
    CHECK(cli("", w.path("log0")) == 2);
    CHECK(cli("train-single --bogus", w.path("log1")) == 2);
}

TEST_CASE("validation failure names the field and exits 2") {
    Workdir w;
    std::ofstream(w.path("bad.json")) << R"({"model": "single", "economy": {"y": [0.5, 0.5]}})";
    CHECK(cli("train-single --config " + w.path("bad.json"), w.path("log")) == 2);
    CHECK(slurp(w.path("log")).find("economy.y") != std::string::npos);

    // model mismatch for the command
    std::ofstream(w.path("multi.json")) << R"({"model": "multi"})";
    CHECK(cli("train-single --config " + w.path("multi.json"), w.path("log2")) == 2);
    CHECK(slurp(w.path("log2")).find("model") != std::string::npos);

    CHECK(cli("train-single --config " + w.path("does_not_exist.json"), w.path("log3")) == 2);
}

TEST_CASE("train-single with --episodes 0 writes the initial checkpoint") {
    Workdir w;
    std::ofstream(w.path("cfg.json")) << micro_single_config();
    const int rc = cli("train-single --config " + w.path("cfg.json") + " --episodes 0 --seed 4 " +
                           "--out " + w.path("out"),
                       w.path("log"));
    CAPTURE(slurp(w.path("log")));
    REQUIRE(rc == 0);

    const nn::Checkpoint ck = nn::load_checkpoint(w.path("out") + "/checkpoint.bin");
    RunConfig cfg = parse_config(micro_single_config());
    cfg.seed = 4;
    const nn::Mlp fresh = cfg.make_mlp();
    CHECK(ck.mlp.theta == fresh.theta);

    // metrics file exists with only the header
    const std::string metrics = slurp(w.path("out") + "/metrics.csv");
    CHECK(metrics == "episode,mean_loss,max_loss,wall_ms\n");
}

TEST_CASE("evaluate rejects a checkpoint whose dims do not match the config") {
    Workdir w;
    std::ofstream(w.path("cfg.json")) << micro_single_config();
    REQUIRE(cli("train-single --config " + w.path("cfg.json") + " --out " + w.path("out"),
                w.path("log")) == 0);

    // same model family, different hidden width
    RunConfig other = parse_config(micro_single_config());
    other.hidden = {16};
    std::ofstream(w.path("cfg16.json")) << serialize_config(other);
    const int rc = cli("evaluate --config " + w.path("cfg16.json") + " --checkpoint " +
                           w.path("out") + "/checkpoint.bin --out " + w.path("eval"),
                       w.path("log2"));
    CHECK(rc == 2);
    CHECK(slurp(w.path("log2")).find("dims") != std::string::npos);
}

TEST_CASE("evaluate and profiles emit the documented CSV headers") {
    Workdir w;
    std::ofstream(w.path("cfg.json")) << micro_single_config();
    REQUIRE(cli("train-single --config " + w.path("cfg.json") + " --out " + w.path("out"),
                w.path("log")) == 0);
    REQUIRE(cli("evaluate --config " + w.path("cfg.json") + " --checkpoint " + w.path("out") +
                    "/checkpoint.bin --out " + w.path("eval"),
                w.path("log2")) == 0);
    const std::string eval_csv = slurp(w.path("eval") + "/evaluation.csv");
    CHECK(eval_csv.rfind("residual_family,type,age,min,p10,mean,p90,p99,max\n", 0) == 0);

    REQUIRE(cli("profiles --config " + w.path("cfg.json") + " --checkpoint " + w.path("out") +
                    "/checkpoint.bin --out " + w.path("prof"),
                w.path("log3")) == 0);
    const std::string prof_csv = slurp(w.path("prof") + "/profiles.csv");
    CHECK(prof_csv.rfind("variable,type,age,mean,p10,p90\n", 0) == 0);
    // bond, rent, consumption for 3 ages each
    int lines = -1;
    for (char c : prof_csv)
        if (c == '\n') ++lines;
    CHECK(lines == 3 * 3);
}
