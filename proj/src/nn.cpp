#include "mcl/nn.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "mcl/kernels.hpp"
#include "mcl/rng.hpp"

namespace mcl::nn {

using json = nlohmann::ordered_json;

Act act_from_string(const std::string& s) {
    if (s == "identity") return Act::Identity;
    if (s == "relu") return Act::Relu;
    if (s == "softplus") return Act::Softplus;
    throw std::invalid_argument("unknown activation '" + s + "'");
}

std::string act_to_string(Act a) {
    switch (a) {
        case Act::Identity: return "identity";
        case Act::Relu: return "relu";
        case Act::Softplus: return "softplus";
    }
    return "identity";
}

size_t Mlp::weight_offset(int layer) const {
    size_t off = 0;
    for (int l = 0; l < layer; ++l)
        off += static_cast<size_t>(dims[l]) * dims[l + 1] + dims[l + 1];
    return off;
}

size_t Mlp::bias_offset(int layer) const {
    return weight_offset(layer) + static_cast<size_t>(dims[layer]) * dims[layer + 1];
}

int Mlp::head_offset(const std::string& name) const {
    int off = 0;
    for (const Head& h : heads) {
        if (h.name == name) return off;
        off += h.width;
    }
    throw std::invalid_argument("mlp: no head named '" + name + "'");
}

const Head& Mlp::head(const std::string& name) const {
    for (const Head& h : heads)
        if (h.name == name) return h;
    throw std::invalid_argument("mlp: no head named '" + name + "'");
}

Mlp init_mlp(const std::vector<int>& dims, const std::vector<Head>& heads, uint64_t seed) {
    if (dims.size() < 2) throw std::invalid_argument("init_mlp: need at least input and output dims");
    int head_total = 0;
    for (const Head& h : heads) head_total += h.width;
    if (head_total != dims.back())
        throw std::invalid_argument("init_mlp: head widths sum to " + std::to_string(head_total) +
                                    " but output dim is " + std::to_string(dims.back()));
    Mlp mlp;
    mlp.dims = dims;
    mlp.heads = heads;
    mlp.seed = seed;
    mlp.layer_act.assign(dims.size() - 1, Act::Relu);
    mlp.layer_act.back() = Act::Identity;

    size_t total = 0;
    for (size_t l = 0; l + 1 < dims.size(); ++l)
        total += static_cast<size_t>(dims[l]) * dims[l + 1] + dims[l + 1];
    mlp.theta.assign(total, 0.0);

    Rng rng(mix_seed(seed, 0x6d6c70 /*"mlp"*/));
    for (int l = 0; l < mlp.num_layers(); ++l) {
        const double fan_in = dims[l];
        const double gain = mlp.layer_act[l] == Act::Relu ? 2.0 : 1.0;
        const double stddev = std::sqrt(gain / fan_in);
        double* w = mlp.theta.data() + mlp.weight_offset(l);
        const size_t n = static_cast<size_t>(dims[l]) * dims[l + 1];
        for (size_t i = 0; i < n; ++i) w[i] = stddev * rng.normal();
        // biases stay zero
    }
    return mlp;
}

namespace {
void apply_act(Act act, double* x, size_t n) {
    switch (act) {
        case Act::Identity: return;
        case Act::Relu:
            for (size_t i = 0; i < n; ++i) x[i] = x[i] > 0.0 ? x[i] : 0.0;
            return;
        case Act::Softplus:
            for (size_t i = 0; i < n; ++i) {
                const double v = x[i];
                x[i] = v > 30.0 ? v : (v < -30.0 ? std::exp(v) : std::log1p(std::exp(v)));
            }
            return;
    }
}
} // namespace

Mat forward_eval(const Mlp& mlp, const Mat& batch) {
    if (batch.cols != mlp.input_dim())
        throw std::invalid_argument("forward: batch has " + std::to_string(batch.cols) +
                                    " columns, network expects " + std::to_string(mlp.input_dim()));
    Mat cur = batch;
    for (int l = 0; l < mlp.num_layers(); ++l) {
        Mat next(cur.rows, mlp.dims[l + 1]);
        kernels::matmul_nn(cur.a.data(), mlp.theta.data() + mlp.weight_offset(l), next.a.data(),
                           cur.rows, mlp.dims[l], mlp.dims[l + 1]);
        const double* b = mlp.theta.data() + mlp.bias_offset(l);
        for (int r = 0; r < next.rows; ++r) {
            double* row = next.row_ptr(r);
            for (int c = 0; c < next.cols; ++c) row[c] += b[c];
        }
        apply_act(mlp.layer_act[l], next.a.data(), next.a.size());
        cur = std::move(next);
    }
    int off = 0;
    for (const Head& h : mlp.heads) {
        if (h.act != Act::Identity)
            for (int r = 0; r < cur.rows; ++r) apply_act(h.act, cur.row_ptr(r) + off, h.width);
        off += h.width;
    }
    return cur;
}

TapeNet make_tape_net(Tape& tape, const Mlp& mlp) {
    TapeNet net;
    net.def = &mlp;
    for (int l = 0; l < mlp.num_layers(); ++l) {
        Mat W(mlp.dims[l], mlp.dims[l + 1]);
        std::memcpy(W.a.data(), mlp.theta.data() + mlp.weight_offset(l),
                    W.a.size() * sizeof(double));
        Mat b(1, mlp.dims[l + 1]);
        std::memcpy(b.a.data(), mlp.theta.data() + mlp.bias_offset(l), b.a.size() * sizeof(double));
        net.weights.push_back(tape.param(W));
        net.biases.push_back(tape.param(b));
    }
    return net;
}

Var forward_tape(Tape& tape, const TapeNet& net, Var batch) {
    const Mlp& mlp = *net.def;
    if (tape.cols(batch) != mlp.input_dim())
        throw std::invalid_argument("forward_tape: batch has " + std::to_string(tape.cols(batch)) +
                                    " columns, network expects " + std::to_string(mlp.input_dim()));
    const int n = tape.rows(batch);
    Var cur = batch;
    for (int l = 0; l < mlp.num_layers(); ++l) {
        cur = tape.add(tape.matmul(cur, net.weights[l]), tape.bcast_row(net.biases[l], n));
        if (mlp.layer_act[l] == Act::Relu) cur = tape.relu(cur);
        else if (mlp.layer_act[l] == Act::Softplus) cur = tape.softplus(cur);
    }
    // head activations
    std::vector<Var> parts;
    int off = 0;
    for (const Head& h : mlp.heads) {
        Var s = tape.slice_cols(cur, off, h.width);
        if (h.act == Act::Softplus) s = tape.softplus(s);
        else if (h.act == Act::Relu) s = tape.relu(s);
        parts.push_back(s);
        off += h.width;
    }
    return parts.size() == 1 ? parts[0] : tape.concat_cols(parts);
}

Var head_slice(Tape& tape, const TapeNet& net, Var output, const std::string& name) {
    const Mlp& mlp = *net.def;
    return tape.slice_cols(output, mlp.head_offset(name), mlp.head(name).width);
}

std::vector<double> collect_grads(const Tape& tape, const TapeNet& net) {
    std::vector<double> g(net.def->param_count(), 0.0);
    for (int l = 0; l < net.def->num_layers(); ++l) {
        const std::vector<double>& gw = tape.adjoint(net.weights[l]);
        const std::vector<double>& gb = tape.adjoint(net.biases[l]);
        std::memcpy(g.data() + net.def->weight_offset(l), gw.data(), gw.size() * sizeof(double));
        std::memcpy(g.data() + net.def->bias_offset(l), gb.data(), gb.size() * sizeof(double));
    }
    return g;
}

void zero_nans(std::vector<double>& grads) {
    for (double& g : grads)
        if (std::isnan(g)) g = 0.0;
}

AdamState make_adam(size_t n_params, double lr) {
    AdamState s;
    s.m.assign(n_params, 0.0);
    s.v.assign(n_params, 0.0);
    s.lr = lr;
    return s;
}

void adam_step(AdamState& st, std::vector<double>& theta, const std::vector<double>& grads) {
    if (theta.size() != st.m.size() || grads.size() != st.m.size())
        throw std::invalid_argument("adam_step: size mismatch");
    st.step += 1;
    const double b1t = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
    const double b2t = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
    for (size_t i = 0; i < theta.size(); ++i) {
        st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * grads[i];
        st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * grads[i] * grads[i];
        const double mhat = st.m[i] / b1t;
        const double vhat = st.v[i] / b2t;
        theta[i] -= st.lr * mhat / (std::sqrt(vhat) + st.eps);
    }
}

void reset_adam(AdamState& st) {
    std::fill(st.m.begin(), st.m.end(), 0.0);
    std::fill(st.v.begin(), st.v.end(), 0.0);
    st.step = 0;
}

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

void write_doubles(std::ofstream& f, const std::vector<double>& v) {
    f.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

void read_doubles(std::ifstream& f, std::vector<double>& v, size_t count, const std::string& path,
                  size_t offset) {
    v.resize(count);
    f.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(count * sizeof(double)));
    if (static_cast<size_t>(f.gcount()) != count * sizeof(double))
        throw std::runtime_error("checkpoint '" + path + "' truncated at byte offset " +
                                 std::to_string(offset + static_cast<size_t>(f.gcount())));
}

} // namespace

void save_checkpoint(const Mlp& mlp, const AdamState& adam, const std::string& stage_json,
                     const std::string& path) {
    json hdr;
    hdr["format"] = "mcl-checkpoint-v1";
    hdr["dims"] = mlp.dims;
    json jh = json::array();
    for (const Head& h : mlp.heads)
        jh.push_back({{"name", h.name}, {"width", h.width}, {"act", act_to_string(h.act)}});
    hdr["heads"] = jh;
    json ja = json::array();
    for (Act a : mlp.layer_act) ja.push_back(act_to_string(a));
    hdr["layer_act"] = ja;
    hdr["seed"] = mlp.seed;
    hdr["stage"] = stage_json.empty() ? json(nullptr) : json::parse(stage_json);
    hdr["param_bytes"] = mlp.theta.size() * sizeof(double);
    hdr["adam"] = {{"step", adam.step}, {"lr", adam.lr},   {"beta1", adam.beta1},
                   {"beta2", adam.beta2}, {"eps", adam.eps}};
    hdr["adam_bytes"] = (adam.m.size() + adam.v.size()) * sizeof(double);

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    f << hdr.dump() << '\n';
    write_doubles(f, mlp.theta);
    write_doubles(f, adam.m);
    write_doubles(f, adam.v);
    if (!f) throw std::runtime_error("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
    std::string line;
    if (!std::getline(f, line))
        throw std::runtime_error("checkpoint '" + path + "' truncated at byte offset 0");
    json hdr;
    try {
        hdr = json::parse(line);
    } catch (const std::exception& e) {
        throw std::runtime_error("checkpoint '" + path + "' has a corrupt header: " + e.what());
    }
    if (hdr.value("format", "") != "mcl-checkpoint-v1")
        throw std::runtime_error("checkpoint '" + path + "' has unknown format");

    Checkpoint ck;
    ck.mlp.dims = hdr.at("dims").get<std::vector<int>>();
    for (const auto& jh : hdr.at("heads"))
        ck.mlp.heads.push_back({jh.at("name").get<std::string>(), jh.at("width").get<int>(),
                                act_from_string(jh.at("act").get<std::string>())});
    for (const auto& ja : hdr.at("layer_act"))
        ck.mlp.layer_act.push_back(act_from_string(ja.get<std::string>()));
    ck.mlp.seed = hdr.at("seed").get<uint64_t>();
    if (!hdr.at("stage").is_null()) ck.stage_json = hdr.at("stage").dump();

    const size_t param_bytes = hdr.at("param_bytes").get<size_t>();
    const size_t n_params = param_bytes / sizeof(double);
    size_t expect = 0;
    for (size_t l = 0; l + 1 < ck.mlp.dims.size(); ++l)
        expect += static_cast<size_t>(ck.mlp.dims[l]) * ck.mlp.dims[l + 1] + ck.mlp.dims[l + 1];
    if (expect != n_params)
        throw std::runtime_error("checkpoint '" + path + "' dims imply " + std::to_string(expect) +
                                 " parameters but header declares " + std::to_string(n_params));

    const size_t header_bytes = line.size() + 1;
    read_doubles(f, ck.mlp.theta, n_params, path, header_bytes);
    ck.adam.step = hdr.at("adam").at("step").get<long>();
    ck.adam.lr = hdr.at("adam").at("lr").get<double>();
    ck.adam.beta1 = hdr.at("adam").at("beta1").get<double>();
    ck.adam.beta2 = hdr.at("adam").at("beta2").get<double>();
    ck.adam.eps = hdr.at("adam").at("eps").get<double>();
    read_doubles(f, ck.adam.m, n_params, path, header_bytes + param_bytes);
    read_doubles(f, ck.adam.v, n_params, path, header_bytes + param_bytes + param_bytes);
    return ck;
}

} // namespace mcl::nn
