#include <filesystem>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "mcl/config.hpp"
#include "mcl/io.hpp"
#include "mcl/kernels.hpp"

namespace fs = std::filesystem;
using namespace mcl;

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir;   // override
    std::optional<uint64_t> seed;
    std::optional<std::string> mode;
    bool deterministic = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "configuration file (JSON)")->required();
    cmd->add_option("--out", args.out_dir, "output directory (overrides config)");
    auto* seed = cmd->add_option("--seed", "seed override");
    seed->each([&args](const std::string& s) { args.seed = std::stoull(s); });
    cmd->add_option("--mode", "clearing layer: simple|solver")
        ->each([&args](const std::string& s) { args.mode = s; });
    cmd->add_flag("--deterministic", args.deterministic, "single-threaded bitwise-reproducible run");
}

RunConfig prepare(const CommonArgs& args, const std::string& want_model) {
    RunConfig cfg = load_config(args.config_path);
    if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
    if (args.seed) cfg.seed = *args.seed;
    if (args.mode) cfg.mode = mode_from_string(*args.mode);
    if (args.deterministic) cfg.deterministic = true;
    if (!want_model.empty() && cfg.model != want_model)
        throw ConfigError("config field 'model' must be '" + want_model + "' for this command");
    if (cfg.deterministic) kernels::set_threads(1);
    fs::create_directories(cfg.out_dir);
    return cfg;
}

nn::Checkpoint load_matching_checkpoint(const RunConfig& cfg, const std::string& path) {
    nn::Checkpoint ck = nn::load_checkpoint(path);
    if (ck.mlp.dims != cfg.dims())
        throw ConfigError("checkpoint dims do not match the configured network (checkpoint " +
                          std::to_string(ck.mlp.dims.size()) + " layers vs config)");
    return ck;
}

// multi checkpoints carry their homotopy stage; evaluation re-applies it
void apply_checkpoint_stage(RunConfig& cfg, const nn::Checkpoint& ck) {
    if (cfg.is_single() || ck.stage_json.empty()) return;
    cfg.multi = apply_stage(cfg.multi, stage_from_json(ck.stage_json));
}

const Mat* maybe_states(const std::string& checkpoint_path, Mat& storage) {
    const fs::path states = fs::path(checkpoint_path).parent_path() / "states.bin";
    if (!fs::exists(states)) return nullptr;
    storage = load_matrix(states.string());
    return &storage;
}

int cmd_train_single(const CommonArgs& args, int episodes_override) {
    RunConfig cfg = prepare(args, "single");
    auto model = cfg.make_model();
    nn::Mlp mlp = cfg.make_mlp();
    nn::AdamState adam = nn::make_adam(mlp.param_count(), cfg.train.learning_rate);
    TrainRun run = cfg.make_run();
    if (episodes_override >= 0) run.episodes = episodes_override;
    Mat states = tile_states(model->initial_state(), run.trajectories);

    TrainOutputs out;
    out.metrics_csv = cfg.out_dir + "/metrics.csv";
    out.checkpoint_path = cfg.out_dir + "/checkpoint.bin";
    out.states_path = cfg.out_dir + "/states.bin";
    train(*model, mlp, adam, states, run, out);
    std::cout << "checkpoint: " << out.checkpoint_path << "\nmetrics: " << out.metrics_csv
              << std::endl;
    return 0;
}

int cmd_homotopy(const CommonArgs& args, bool resume) {
    RunConfig cfg = prepare(args, "multi");
    const HomotopyResult res =
        run_homotopy(cfg.multi, cfg.homotopy, cfg.make_run(), cfg.mode, cfg.quad_order,
                     cfg.hidden, cfg.policy_head, cfg.anchor_output, cfg.out_dir, resume);
    std::cout << "stages run: " << res.stages_run << "\nfinal checkpoint: " << res.final_checkpoint
              << std::endl;
    return 0;
}

int cmd_evaluate(const CommonArgs& args, const std::string& checkpoint, int n_states,
                 int n_periods) {
    RunConfig cfg = prepare(args, "");
    nn::Checkpoint ck = load_matching_checkpoint(cfg, checkpoint);
    apply_checkpoint_stage(cfg, ck);
    auto model = cfg.make_model();
    Mat storage;
    const Mat* start = maybe_states(checkpoint, storage);
    const int states = n_states > 0 ? n_states : cfg.eval.states;
    const int periods = n_periods >= 0 ? n_periods : cfg.eval.periods;
    const auto stats =
        evaluate(*model, ck.mlp, start, states, periods, cfg.eval.percentiles, cfg.seed);
    const std::string path = cfg.out_dir + "/evaluation.csv";
    write_eval_csv(path, stats, cfg.eval.percentiles);
    std::cout << "evaluation: " << path << std::endl;
    return 0;
}

int cmd_profiles(const CommonArgs& args, const std::string& checkpoint, int n_states,
                 int n_periods) {
    RunConfig cfg = prepare(args, "");
    nn::Checkpoint ck = load_matching_checkpoint(cfg, checkpoint);
    apply_checkpoint_stage(cfg, ck);
    auto model = cfg.make_model();
    Mat storage;
    const Mat* start = maybe_states(checkpoint, storage);
    const int states = n_states > 0 ? n_states : cfg.eval.states;
    const int periods = n_periods >= 0 ? n_periods : 8;
    const auto stats = profile_stats(*model, ck.mlp, start, states, periods, cfg.seed);
    const std::string path = cfg.out_dir + "/profiles.csv";
    write_profiles_csv(path, stats);
    std::cout << "profiles: " << path << std::endl;
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"equilibrium learning with market-clearing network layers"};
    app.require_subcommand(1);

    CommonArgs targs, hargs, eargs, pargs;
    int train_episodes = -1;
    bool resume = false;
    std::string eval_ckpt, prof_ckpt;
    int eval_states = 0, eval_periods = -1, prof_states = 0, prof_periods = -1;

    CLI::App* ct = app.add_subcommand("train-single", "train the single-asset model");
    add_common(ct, targs);
    ct->add_option("--episodes", train_episodes, "episode count override");

    CLI::App* ch = app.add_subcommand("homotopy", "run the asset-introduction schedule");
    add_common(ch, hargs);
    ch->add_flag("--resume", resume, "continue from the stage manifest");

    CLI::App* ce = app.add_subcommand("evaluate", "residual statistics on fresh simulation");
    add_common(ce, eargs);
    ce->add_option("--checkpoint", eval_ckpt, "trained checkpoint")->required();
    ce->add_option("--states", eval_states, "number of simulated states");
    ce->add_option("--periods", eval_periods, "forward periods before evaluating");

    CLI::App* cp = app.add_subcommand("profiles", "mean policy/consumption profiles by age");
    add_common(cp, pargs);
    cp->add_option("--checkpoint", prof_ckpt, "trained checkpoint")->required();
    cp->add_option("--states", prof_states, "number of simulated states");
    cp->add_option("--periods", prof_periods, "forward periods before profiling");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e); // --help
        app.exit(e);
        return 2;
    }

    try {
        if (ct->parsed()) return cmd_train_single(targs, train_episodes);
        if (ch->parsed()) return cmd_homotopy(hargs, resume);
        if (ce->parsed()) return cmd_evaluate(eargs, eval_ckpt, eval_states, eval_periods);
        if (cp->parsed()) return cmd_profiles(pargs, prof_ckpt, prof_states, prof_periods);
    } catch (const ConfigError& e) {
        std::cerr << "validation error: " << e.what() << std::endl;
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 1;
    }
    return 2;
}
