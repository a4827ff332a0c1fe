#pragma once

#include <string>
#include <vector>

#include "mcl/economy_multi.hpp"
#include "mcl/trainer.hpp"

namespace mcl {

// One entry of the asset-introduction schedule.
struct HomotopyStage {
    std::string label;
    double w_b = 1.0, w_s = 0.0, w_o = 0.0, w_r = 1.0;
    double m_b = 1.0, m_s = 0.0, m_o = 0.0;
    double B = 0.0, S = 0.0, Ho = 0.0, Hex = 0.0;
    int episodes = 0;
};

struct HomotopySettings {
    int stock_steps = 10;
    int housing_steps = 20;
    double S_final = 1.0;
    double Ho_final = 1.0;
    double Hex_initial = 1.0;
    int initial_episodes = 512;
    int stage_episodes = 256;
    int eval_states = 0;  // 0 = skip per-stage evaluation
    int eval_periods = 0;
    double small_mask = 0.01;
};

// bond-only -> price learning -> small mask -> supply ramp, for stock then
// housing; Ho + Hex stays constant across the housing ramp.
std::vector<HomotopyStage> build_schedule(const MultiAssetConfig& base,
                                          const HomotopySettings& hs);

MultiAssetConfig apply_stage(const MultiAssetConfig& base, const HomotopyStage& stage);

std::string stage_to_json(const HomotopyStage& s, int index);
HomotopyStage stage_from_json(const std::string& json_text);

struct HomotopyResult {
    std::string final_checkpoint;
    std::vector<std::string> stage_dirs;
    int stages_run = 0;
};

// Runs the schedule, warm-starting parameters and the simulated state batch
// from the previous stage; holdings are rescaled when a supply moves. Writes
// a manifest for resume.
HomotopyResult run_homotopy(const MultiAssetConfig& base, const HomotopySettings& hs,
                            const TrainRun& run, Mode mode, int quad_order,
                            const std::vector<int>& hidden_dims, nn::Act policy_act,
                            bool anchor_output, const std::string& out_dir, bool resume);

} // namespace mcl
