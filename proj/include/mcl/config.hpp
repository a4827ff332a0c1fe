#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "mcl/economy_multi.hpp"
#include "mcl/economy_single.hpp"
#include "mcl/homotopy.hpp"
#include "mcl/trainer.hpp"

namespace mcl {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct EvalSettings {
    int states = 8192;
    int periods = 1;
    std::vector<double> percentiles = {10.0, 90.0, 99.0};
};

struct RunConfig {
    std::string model = "single"; // single | multi
    Mode mode = Mode::Simple;
    uint64_t seed = 0;
    bool deterministic = false;
    std::string out_dir = "out";

    SingleAssetConfig single;
    MultiAssetConfig multi;

    std::vector<int> hidden = {400, 400};
    nn::Act policy_head = nn::Act::Identity;
    bool anchor_output = false;

    TrainRun train;
    int quad_order = 8;
    HomotopySettings homotopy;
    EvalSettings eval;

    bool is_single() const { return model == "single"; }
    int input_dim() const { return is_single() ? single.input_dim() : multi.input_dim(); }
    int output_dim() const { return is_single() ? single.output_dim() : multi.output_dim(); }
    std::vector<int> dims() const;

    std::unique_ptr<EconModel> make_model() const;
    nn::Mlp make_mlp() const;
    TrainRun make_run() const;
};

RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::string& path);
std::string serialize_config(const RunConfig& cfg);

// full validation; throws ConfigError naming the offending field
void validate_config(const RunConfig& cfg);

} // namespace mcl
