#include "mcl/homotopy.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

#include <nlohmann/json.hpp>

#include "mcl/io.hpp"
#include "mcl/quadrature.hpp"

namespace mcl {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::vector<HomotopyStage> build_schedule(const MultiAssetConfig& base,
                                          const HomotopySettings& hs) {
    if (hs.stock_steps < 1 || hs.housing_steps < 1)
        throw std::invalid_argument("homotopy step counts must be >= 1");
    const double Htot = hs.Hex_initial; // Ho starts at zero
    std::vector<HomotopyStage> stages;

    HomotopyStage s;
    s.B = base.B;
    s.Hex = hs.Hex_initial;
    s.episodes = hs.initial_episodes;
    s.label = "bond_only";
    stages.push_back(s);

    s.episodes = hs.stage_episodes;
    s.label = "stock_price";
    s.w_s = 1.0;
    stages.push_back(s);

    s.label = "stock_mask";
    s.m_s = hs.small_mask;
    stages.push_back(s);

    for (int k = 1; k <= hs.stock_steps; ++k) {
        s.label = "stock_supply_" + std::to_string(k);
        s.m_s = 1.0;
        s.S = hs.S_final * static_cast<double>(k) / hs.stock_steps;
        stages.push_back(s);
    }

    s.label = "housing_price";
    s.w_o = 1.0;
    stages.push_back(s);

    s.label = "housing_mask";
    s.m_o = hs.small_mask;
    stages.push_back(s);

    for (int j = 1; j <= hs.housing_steps; ++j) {
        s.label = "housing_supply_" + std::to_string(j);
        s.m_o = 1.0;
        s.Ho = hs.Ho_final * static_cast<double>(j) / hs.housing_steps;
        s.Hex = Htot - s.Ho;
        stages.push_back(s);
    }
    return stages;
}

MultiAssetConfig apply_stage(const MultiAssetConfig& base, const HomotopyStage& st) {
    MultiAssetConfig cfg = base;
    cfg.w_b = st.w_b;
    cfg.w_s = st.w_s;
    cfg.w_o = st.w_o;
    cfg.w_r = st.w_r;
    cfg.m_b = st.m_b;
    cfg.m_s = st.m_s;
    cfg.m_o = st.m_o;
    cfg.B = st.B;
    cfg.S = st.S;
    cfg.Ho = st.Ho;
    cfg.Hex = st.Hex;
    return cfg;
}

std::string stage_to_json(const HomotopyStage& s, int index) {
    json j;
    j["index"] = index;
    j["label"] = s.label;
    j["weights"] = {s.w_b, s.w_s, s.w_o, s.w_r};
    j["masks"] = {s.m_b, s.m_s, s.m_o};
    j["supplies"] = {{"B", s.B}, {"S", s.S}, {"Ho", s.Ho}, {"Hex", s.Hex}};
    j["episodes"] = s.episodes;
    return j.dump();
}

HomotopyStage stage_from_json(const std::string& text) {
    const json j = json::parse(text);
    HomotopyStage s;
    s.label = j.at("label").get<std::string>();
    s.w_b = j.at("weights")[0].get<double>();
    s.w_s = j.at("weights")[1].get<double>();
    s.w_o = j.at("weights")[2].get<double>();
    s.w_r = j.at("weights")[3].get<double>();
    s.m_b = j.at("masks")[0].get<double>();
    s.m_s = j.at("masks")[1].get<double>();
    s.m_o = j.at("masks")[2].get<double>();
    s.B = j.at("supplies").at("B").get<double>();
    s.S = j.at("supplies").at("S").get<double>();
    s.Ho = j.at("supplies").at("Ho").get<double>();
    s.Hex = j.at("supplies").at("Hex").get<double>();
    s.episodes = j.at("episodes").get<int>();
    return s;
}

namespace {

std::string stage_dir_name(int index, const std::string& label) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "stage_%03d_", index);
    return buf + label;
}

void write_manifest(const std::string& out_dir, const std::vector<HomotopyStage>& stages,
                    int completed) {
    json j;
    j["completed"] = completed;
    json arr = json::array();
    for (size_t i = 0; i < stages.size(); ++i) {
        json e = json::parse(stage_to_json(stages[i], static_cast<int>(i)));
        e["dir"] = stage_dir_name(static_cast<int>(i), stages[i].label);
        e["checkpoint"] = e["dir"].get<std::string>() + "/checkpoint.bin";
        e["evaluation"] = e["dir"].get<std::string>() + "/evaluation.csv";
        e["status"] = static_cast<int>(i) < completed ? "done" : "pending";
        arr.push_back(e);
    }
    j["stages"] = arr;
    std::ofstream f(out_dir + "/manifest.json", std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write manifest in " + out_dir);
    f << j.dump(2) << '\n';
}

int read_manifest_completed(const std::string& out_dir) {
    std::ifstream f(out_dir + "/manifest.json");
    if (!f) return 0;
    json j;
    f >> j;
    return j.value("completed", 0);
}

} // namespace

HomotopyResult run_homotopy(const MultiAssetConfig& base, const HomotopySettings& hs,
                            const TrainRun& run, Mode mode, int quad_order,
                            const std::vector<int>& hidden_dims, nn::Act policy_act,
                            bool anchor_output, const std::string& out_dir, bool resume) {
    const std::vector<HomotopyStage> stages = build_schedule(base, hs);
    fs::create_directories(out_dir);

    int start = 0;
    if (resume) {
        start = read_manifest_completed(out_dir);
        if (start > static_cast<int>(stages.size())) start = static_cast<int>(stages.size());
    }
    write_manifest(out_dir, stages, start);

    const QuadratureRule rule = gauss_hermite(quad_order);

    // network signature is fixed across stages
    MultiAssetConfig probe = apply_stage(base, stages[0]);
    probe.finalize();
    std::vector<int> dims;
    dims.push_back(probe.input_dim());
    for (int h : hidden_dims) dims.push_back(h);
    dims.push_back(probe.output_dim());

    nn::Mlp mlp;
    nn::AdamState adam;
    Mat states;
    if (start == 0) {
        MultiModel model0(apply_stage(base, stages[0]), rule, mode);
        mlp = nn::init_mlp(dims, model0.make_heads(policy_act), run.seed);
        if (anchor_output) model0.anchor_output(mlp);
        adam = nn::make_adam(mlp.param_count(), run.learning_rate);
        states = tile_states(model0.initial_state(), run.trajectories);
    } else {
        const std::string prev = out_dir + "/" + stage_dir_name(start - 1, stages[start - 1].label);
        nn::Checkpoint ck = nn::load_checkpoint(prev + "/checkpoint.bin");
        mlp = std::move(ck.mlp);
        adam = std::move(ck.adam);
        adam.lr = run.learning_rate;
        states = load_matrix(prev + "/states.bin");
    }

    HomotopyResult result;
    for (int si = start; si < static_cast<int>(stages.size()); ++si) {
        const HomotopyStage& st = stages[si];
        MultiModel model(apply_stage(base, st), rule, mode);

        if (si > 0) {
            const HomotopyStage& prev = stages[si - 1];
            if (st.S != prev.S) model.rescale_holdings(states, "stock", prev.S, st.S);
            if (st.Ho != prev.Ho) model.rescale_holdings(states, "housing", prev.Ho, st.Ho);
            if (st.B != prev.B) model.rescale_holdings(states, "bond", prev.B, st.B);
        }

        const std::string dir = out_dir + "/" + stage_dir_name(si, st.label);
        fs::create_directories(dir);
        TrainRun stage_run = run;
        stage_run.episodes = st.episodes;
        TrainOutputs out;
        out.metrics_csv = dir + "/metrics.csv";
        out.checkpoint_path = dir + "/checkpoint.bin";
        out.states_path = dir + "/states.bin";
        out.stage_json = stage_to_json(st, si);
        std::cerr << "[homotopy] stage " << si << " '" << st.label << "' (" << st.episodes
                  << " episodes)\n";
        try {
            train(model, mlp, adam, states, stage_run, out);
        } catch (const TrainAbort&) {
            write_manifest(out_dir, stages, si);
            throw;
        }

        if (hs.eval_states > 0) {
            const auto stats = evaluate(model, mlp, &states, hs.eval_states, hs.eval_periods,
                                        {10.0, 90.0, 99.0}, run.seed);
            write_eval_csv(dir + "/evaluation.csv", stats, {10.0, 90.0, 99.0});
        }
        result.stage_dirs.push_back(dir);
        result.final_checkpoint = out.checkpoint_path;
        result.stages_run += 1;
        write_manifest(out_dir, stages, si + 1);
    }
    return result;
}

} // namespace mcl
