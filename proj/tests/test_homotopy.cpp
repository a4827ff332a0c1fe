#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "mcl/homotopy.hpp"
#include "mcl/io.hpp"
#include "mcl/quadrature.hpp"

using namespace mcl;

namespace {
MultiAssetConfig base_config() {
    MultiAssetConfig cfg;
    cfg.finalize();
    return cfg;
}
} // namespace

TEST_CASE("default schedule: 35 stages with the documented shape") {
    const HomotopySettings hs; // 10 stock steps, 20 housing steps
    const auto stages = build_schedule(base_config(), hs);
    REQUIRE(stages.size() == 35);

    const HomotopyStage& s0 = stages[0];
    CHECK(s0.label == "bond_only");
    CHECK(s0.w_b == 1.0);
    CHECK(s0.w_s == 0.0);
    CHECK(s0.w_o == 0.0);
    CHECK(s0.w_r == 1.0);
    CHECK(s0.m_b == 1.0);
    CHECK(s0.m_s == 0.0);
    CHECK(s0.m_o == 0.0);
    CHECK(s0.S == 0.0);
    CHECK(s0.Ho == 0.0);
    CHECK(s0.Hex == 1.0);
    CHECK(s0.episodes == 512);

    CHECK(stages[1].label == "stock_price");
    CHECK(stages[1].w_s == 1.0);
    CHECK(stages[1].m_s == 0.0);
    CHECK(stages[1].episodes == 256);

    CHECK(stages[2].label == "stock_mask");
    CHECK(stages[2].m_s == doctest::Approx(0.01));
    CHECK(stages[2].S == 0.0);

    // stock ramp: S_k = k/10, mask already at its full value
    for (int k = 1; k <= 10; ++k) {
        const HomotopyStage& s = stages[2 + k];
        CHECK(s.S == doctest::Approx(k / 10.0));
        CHECK(s.m_s == 1.0);
        CHECK(s.Ho == 0.0);
    }

    CHECK(stages[13].label == "housing_price");
    CHECK(stages[13].w_o == 1.0);
    CHECK(stages[14].label == "housing_mask");
    CHECK(stages[14].m_o == doctest::Approx(0.01));

    // housing ramp: Ho_j = j/20, Hex = 1 - j/20
    for (int j = 1; j <= 20; ++j) {
        const HomotopyStage& s = stages[14 + j];
        CHECK(s.Ho == doctest::Approx(j / 20.0));
        CHECK(s.Hex == doctest::Approx(1.0 - j / 20.0));
        CHECK(s.Ho + s.Hex == doctest::Approx(1.0));
    }

    // final supplies match the target economy
    const HomotopyStage& last = stages.back();
    CHECK(last.B == doctest::Approx(0.56));
    CHECK(last.S == doctest::Approx(1.0));
    CHECK(last.Ho == doctest::Approx(1.0));
    CHECK(last.Hex == doctest::Approx(0.0));
}

TEST_CASE("schedule monotonicity and constant total housing") {
    HomotopySettings hs;
    hs.stock_steps = 4;
    hs.housing_steps = 6;
    const auto stages = build_schedule(base_config(), hs);
    CHECK(stages.size() == 1 + 1 + 1 + 4 + 1 + 1 + 6);
    double prev_S = -1.0, prev_Ho = -1.0, prev_Hex = 2.0;
    for (const auto& s : stages) {
        CHECK(s.S >= prev_S);
        CHECK(s.Ho >= prev_Ho);
        CHECK(s.Hex <= prev_Hex);
        CHECK(s.Ho + s.Hex == doctest::Approx(1.0));
        prev_S = s.S;
        prev_Ho = s.Ho;
        prev_Hex = s.Hex;
    }
}

TEST_CASE("stage json round trip") {
    const HomotopySettings hs;
    const auto stages = build_schedule(base_config(), hs);
    const HomotopyStage& s = stages[7];
    const HomotopyStage back = stage_from_json(stage_to_json(s, 7));
    CHECK(back.label == s.label);
    CHECK(back.w_s == s.w_s);
    CHECK(back.m_s == s.m_s);
    CHECK(back.S == s.S);
    CHECK(back.Hex == s.Hex);
    CHECK(back.episodes == s.episodes);
}

TEST_CASE("apply_stage overrides the stage-controlled fields only") {
    MultiAssetConfig cfg = base_config();
    const HomotopySettings hs;
    const auto stages = build_schedule(cfg, hs);
    const MultiAssetConfig out = apply_stage(cfg, stages[0]);
    CHECK(out.S == 0.0);
    CHECK(out.Ho == 0.0);
    CHECK(out.Hex == 1.0);
    CHECK(out.w_s == 0.0);
    CHECK(out.m_s == 0.0);
    CHECK(out.beta == cfg.beta);
    CHECK(out.H == cfg.H);
}

TEST_CASE("reduced homotopy run completes, resumes, and keeps masked assets at zero") {
    namespace fs = std::filesystem;
    const std::string out = (fs::temp_directory_path() / "mcl_homotopy_test").string();
    fs::remove_all(out);

    MultiAssetConfig cfg;
    cfg.H = 3;
    cfg.B = 0.2;
    cfg.finalize();
    HomotopySettings hs;
    hs.stock_steps = 1;
    hs.housing_steps = 1;
    hs.initial_episodes = 2;
    hs.stage_episodes = 1;
    hs.eval_states = 8;
    hs.eval_periods = 1;
    TrainRun run;
    run.episodes = 0; // stage episodes come from the schedule
    run.trajectories = 16;
    run.epochs = 1;
    run.minibatch = 8;
    run.learning_rate = 1e-4;
    run.seed = 3;

    const HomotopyResult res =
        run_homotopy(cfg, hs, run, Mode::Simple, 2, {8}, nn::Act::Identity, true, out, false);
    CHECK(res.stages_run == 7);
    CHECK(fs::exists(res.final_checkpoint));

    // masked stages keep stock and housing at zero in the simulated states
    for (int si : {0, 1}) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "stage_%03d_", si);
        for (const auto& e : fs::directory_iterator(out)) {
            const std::string name = e.path().filename().string();
            if (name.rfind(buf, 0) != 0) continue;
            const Mat states = load_matrix((e.path() / "states.bin").string());
            for (int r = 0; r < states.rows; ++r)
                for (int j = 0; j < 2 * cfg.H; ++j) {
                    CHECK(states(r, 1 + 2 * cfg.H + j) == 0.0);
                    CHECK(states(r, 1 + 4 * cfg.H + j) == 0.0);
                }
        }
    }

    // the final stage evaluation covers 4 residual families x 2 types
    {
        std::ifstream f(res.stage_dirs.back() + "/evaluation.csv");
        REQUIRE(f.good());
        std::string line;
        std::getline(f, line);
        CHECK(line == "residual_family,type,age,min,p10,mean,p90,p99,max");
        std::set<std::string> families;
        while (std::getline(f, line)) {
            const auto c1 = line.find(',');
            const auto c2 = line.find(',', c1 + 1);
            families.insert(line.substr(0, c2));
        }
        CHECK(families.size() == 8);
    }

    // resume with a completed manifest runs nothing further
    const HomotopyResult res2 =
        run_homotopy(cfg, hs, run, Mode::Simple, 2, {8}, nn::Act::Identity, true, out, true);
    CHECK(res2.stages_run == 0);

    fs::remove_all(out);
}
