#include "mcl/config.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "mcl/quadrature.hpp"

namespace mcl {

using json = nlohmann::ordered_json;

namespace {

template <typename T>
T field(const json& j, const std::string& key, const T& dflt, const std::string& scope) {
    if (!j.contains(key)) return dflt;
    try {
        return j.at(key).get<T>();
    } catch (const std::exception&) {
        throw ConfigError("config field '" + scope + key + "' has the wrong type");
    }
}

} // namespace

std::vector<int> RunConfig::dims() const {
    std::vector<int> d;
    d.push_back(input_dim());
    for (int h : hidden) d.push_back(h);
    d.push_back(output_dim());
    return d;
}

std::unique_ptr<EconModel> RunConfig::make_model() const {
    if (is_single()) return std::make_unique<SingleModel>(single, gauss_hermite(quad_order), mode);
    return std::make_unique<MultiModel>(multi, gauss_hermite(quad_order), mode);
}

nn::Mlp RunConfig::make_mlp() const {
    if (is_single()) {
        SingleAssetConfig c = single;
        c.finalize();
        const SingleModel m(c, gauss_hermite(1), mode);
        nn::Mlp mlp = nn::init_mlp(dims(), m.make_heads(policy_head), seed);
        if (anchor_output) m.anchor_output(mlp);
        return mlp;
    }
    MultiAssetConfig c = multi;
    c.finalize();
    const MultiModel m(c, gauss_hermite(1), mode);
    nn::Mlp mlp = nn::init_mlp(dims(), m.make_heads(policy_head), seed);
    if (anchor_output) m.anchor_output(mlp);
    return mlp;
}

TrainRun RunConfig::make_run() const {
    TrainRun r = train;
    r.seed = seed;
    r.deterministic = deterministic;
    return r;
}

RunConfig parse_config(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    RunConfig cfg;
    cfg.model = field<std::string>(j, "model", "single", "");
    if (cfg.model != "single" && cfg.model != "multi")
        throw ConfigError("config field 'model' must be 'single' or 'multi'");
    const std::string mode_s = field<std::string>(j, "mode", "simple", "");
    try {
        cfg.mode = mode_from_string(mode_s);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config field 'mode': ") + e.what());
    }
    cfg.seed = field<uint64_t>(j, "seed", 0, "");
    cfg.deterministic = field<bool>(j, "deterministic", false, "");
    cfg.out_dir = field<std::string>(j, "out_dir", "out", "");

    const json je = j.contains("economy") ? j.at("economy") : json::object();
    const std::string es = "economy.";
    if (cfg.model == "single") {
        SingleAssetConfig& e = cfg.single;
        e.H = field<int>(je, "H", e.H, es);
        e.y = field<std::vector<double>>(je, "y", {}, es);
        e.psi = field<std::vector<double>>(je, "psi", {}, es);
        e.h_floor = field<double>(je, "h_floor", e.h_floor, es);
        e.beta = field<double>(je, "beta", e.beta, es);
        e.gamma = field<double>(je, "gamma", e.gamma, es);
        e.b_lb = field<double>(je, "b_lb", e.b_lb, es);
        e.B = field<double>(je, "B", e.B, es);
        e.Hr = field<double>(je, "Hr", e.Hr, es);
        e.zeta_b = field<double>(je, "zeta_b", e.zeta_b, es);
        e.rho = field<double>(je, "rho", e.rho, es);
        e.sigma = field<double>(je, "sigma", e.sigma, es);
    } else {
        MultiAssetConfig& e = cfg.multi;
        e.H = field<int>(je, "H", e.H, es);
        e.y = field<std::vector<double>>(je, "y", {}, es);
        e.psi = field<std::vector<double>>(je, "psi", {}, es);
        e.h_floor = field<double>(je, "h_floor", e.h_floor, es);
        e.beta = field<double>(je, "beta", e.beta, es);
        e.gamma1 = field<double>(je, "gamma1", e.gamma1, es);
        e.gamma2 = field<double>(je, "gamma2", e.gamma2, es);
        e.mu1 = field<double>(je, "mu1", e.mu1, es);
        e.mu2 = field<double>(je, "mu2", e.mu2, es);
        e.b_lb = field<double>(je, "b_lb", e.b_lb, es);
        e.s_lb = field<double>(je, "s_lb", e.s_lb, es);
        e.ho_lb = field<double>(je, "ho_lb", e.ho_lb, es);
        e.B = field<double>(je, "B", e.B, es);
        e.S = field<double>(je, "S", e.S, es);
        e.Ho = field<double>(je, "Ho", e.Ho, es);
        e.Hex = field<double>(je, "Hex", e.Hex, es);
        e.zeta_b = field<double>(je, "zeta_b", e.zeta_b, es);
        e.zeta_s = field<double>(je, "zeta_s", e.zeta_s, es);
        e.zeta_h = field<double>(je, "zeta_h", e.zeta_h, es);
        e.d = field<double>(je, "d", e.d, es);
        e.rho = field<double>(je, "rho", e.rho, es);
        e.sigma = field<double>(je, "sigma", e.sigma, es);
        const auto masks = field<std::vector<double>>(je, "masks", {e.m_b, e.m_s, e.m_o}, es);
        if (masks.size() != 3) throw ConfigError("config field 'economy.masks' needs 3 entries");
        e.m_b = masks[0];
        e.m_s = masks[1];
        e.m_o = masks[2];
        const auto w = field<std::vector<double>>(je, "weights", {e.w_b, e.w_s, e.w_o, e.w_r}, es);
        if (w.size() != 4) throw ConfigError("config field 'economy.weights' needs 4 entries");
        e.w_b = w[0];
        e.w_s = w[1];
        e.w_o = w[2];
        e.w_r = w[3];
    }

    const json jn = j.contains("network") ? j.at("network") : json::object();
    cfg.hidden = field<std::vector<int>>(jn, "hidden", cfg.hidden, "network.");
    cfg.anchor_output = field<bool>(jn, "anchor_output", false, "network.");
    const std::string ph = field<std::string>(jn, "policy_head", "identity", "network.");
    try {
        cfg.policy_head = nn::act_from_string(ph);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config field 'network.policy_head': ") + e.what());
    }

    const json jt = j.contains("train") ? j.at("train") : json::object();
    cfg.train.episodes = field<int>(jt, "episodes", 1, "train.");
    cfg.train.trajectories = field<int>(jt, "trajectories", 512, "train.");
    cfg.train.epochs = field<int>(jt, "epochs", 10, "train.");
    cfg.train.minibatch = field<int>(jt, "minibatch", 128, "train.");
    cfg.train.learning_rate = field<double>(jt, "learning_rate", 1e-5, "train.");
    cfg.quad_order = field<int>(jt, "quadrature_order", 8, "train.");

    const json jh = j.contains("homotopy") ? j.at("homotopy") : json::object();
    cfg.homotopy.stock_steps = field<int>(jh, "stock_steps", 10, "homotopy.");
    cfg.homotopy.housing_steps = field<int>(jh, "housing_steps", 20, "homotopy.");
    cfg.homotopy.S_final = field<double>(jh, "S_final", 1.0, "homotopy.");
    cfg.homotopy.Ho_final = field<double>(jh, "Ho_final", 1.0, "homotopy.");
    cfg.homotopy.Hex_initial = field<double>(jh, "Hex_initial", 1.0, "homotopy.");
    cfg.homotopy.initial_episodes = field<int>(jh, "initial_episodes", 512, "homotopy.");
    cfg.homotopy.stage_episodes = field<int>(jh, "stage_episodes", 256, "homotopy.");
    cfg.homotopy.eval_states = field<int>(jh, "eval_states", 0, "homotopy.");
    cfg.homotopy.eval_periods = field<int>(jh, "eval_periods", 0, "homotopy.");
    cfg.homotopy.small_mask = field<double>(jh, "small_mask", 0.01, "homotopy.");

    const json jv = j.contains("evaluate") ? j.at("evaluate") : json::object();
    cfg.eval.states = field<int>(jv, "states", 8192, "evaluate.");
    cfg.eval.periods = field<int>(jv, "periods", cfg.model == "multi" ? 256 : 1, "evaluate.");
    cfg.eval.percentiles =
        field<std::vector<double>>(jv, "percentiles", {10.0, 90.0, 99.0}, "evaluate.");

    validate_config(cfg);
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file: " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return parse_config(text);
}

std::string serialize_config(const RunConfig& cfg) {
    json j;
    j["model"] = cfg.model;
    j["mode"] = mode_to_string(cfg.mode);
    j["seed"] = cfg.seed;
    j["deterministic"] = cfg.deterministic;
    j["out_dir"] = cfg.out_dir;
    json je;
    if (cfg.is_single()) {
        const SingleAssetConfig& e = cfg.single;
        je = json{{"H", e.H},       {"y", e.y},         {"psi", e.psi},   {"h_floor", e.h_floor},
                  {"beta", e.beta}, {"gamma", e.gamma}, {"b_lb", e.b_lb}, {"B", e.B},
                  {"Hr", e.Hr},     {"zeta_b", e.zeta_b}, {"rho", e.rho}, {"sigma", e.sigma}};
    } else {
        const MultiAssetConfig& e = cfg.multi;
        je = json{{"H", e.H},
                  {"y", e.y},
                  {"psi", e.psi},
                  {"h_floor", e.h_floor},
                  {"beta", e.beta},
                  {"gamma1", e.gamma1},
                  {"gamma2", e.gamma2},
                  {"mu1", e.mu1},
                  {"mu2", e.mu2},
                  {"b_lb", e.b_lb},
                  {"s_lb", e.s_lb},
                  {"ho_lb", e.ho_lb},
                  {"B", e.B},
                  {"S", e.S},
                  {"Ho", e.Ho},
                  {"Hex", e.Hex},
                  {"zeta_b", e.zeta_b},
                  {"zeta_s", e.zeta_s},
                  {"zeta_h", e.zeta_h},
                  {"d", e.d},
                  {"rho", e.rho},
                  {"sigma", e.sigma},
                  {"masks", {e.m_b, e.m_s, e.m_o}},
                  {"weights", {e.w_b, e.w_s, e.w_o, e.w_r}}};
    }
    j["economy"] = je;
    j["network"] = {{"hidden", cfg.hidden},
                    {"policy_head", nn::act_to_string(cfg.policy_head)},
                    {"anchor_output", cfg.anchor_output}};
    j["train"] = {{"episodes", cfg.train.episodes},
                  {"trajectories", cfg.train.trajectories},
                  {"epochs", cfg.train.epochs},
                  {"minibatch", cfg.train.minibatch},
                  {"learning_rate", cfg.train.learning_rate},
                  {"quadrature_order", cfg.quad_order}};
    j["homotopy"] = {{"stock_steps", cfg.homotopy.stock_steps},
                     {"housing_steps", cfg.homotopy.housing_steps},
                     {"S_final", cfg.homotopy.S_final},
                     {"Ho_final", cfg.homotopy.Ho_final},
                     {"Hex_initial", cfg.homotopy.Hex_initial},
                     {"initial_episodes", cfg.homotopy.initial_episodes},
                     {"stage_episodes", cfg.homotopy.stage_episodes},
                     {"eval_states", cfg.homotopy.eval_states},
                     {"eval_periods", cfg.homotopy.eval_periods},
                     {"small_mask", cfg.homotopy.small_mask}};
    j["evaluate"] = {{"states", cfg.eval.states},
                     {"periods", cfg.eval.periods},
                     {"percentiles", cfg.eval.percentiles}};
    return j.dump(2);
}

void validate_config(const RunConfig& cfg) {
    try {
        if (cfg.is_single()) {
            SingleAssetConfig c = cfg.single;
            c.finalize();
        } else {
            MultiAssetConfig c = cfg.multi;
            c.finalize();
        }
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    if (cfg.hidden.empty()) throw ConfigError("config field 'network.hidden' must be nonempty");
    for (int h : cfg.hidden)
        if (h < 1) throw ConfigError("config field 'network.hidden' entries must be >= 1");
    try {
        cfg.train.validate();
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    if (cfg.quad_order < 1 || cfg.quad_order > 64)
        throw ConfigError("config field 'train.quadrature_order' must be in [1,64]");
    if (cfg.eval.states < 1) throw ConfigError("config field 'evaluate.states' must be >= 1");
    if (cfg.eval.periods < 0) throw ConfigError("config field 'evaluate.periods' must be >= 0");
    for (double p : cfg.eval.percentiles)
        if (p <= 0.0 || p >= 100.0)
            throw ConfigError("config field 'evaluate.percentiles' entries must be in (0,100)");
    if (!cfg.is_single()) {
        if (cfg.homotopy.stock_steps < 1 || cfg.homotopy.housing_steps < 1)
            throw ConfigError("config fields 'homotopy.*_steps' must be >= 1");
        if (cfg.homotopy.Hex_initial < cfg.homotopy.Ho_final)
            throw ConfigError(
                "config field 'homotopy.Hex_initial' must cover Ho_final (total housing fixed)");
    }
}

} // namespace mcl
