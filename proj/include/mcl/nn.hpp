#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mcl/mat.hpp"
#include "mcl/tape.hpp"

namespace mcl::nn {

enum class Act : int { Identity = 0, Relu = 1, Softplus = 2 };

Act act_from_string(const std::string& s);
std::string act_to_string(Act a);

struct Head {
    std::string name;
    int width = 0;
    Act act = Act::Identity;
};

// Dense feed-forward network. Parameters live in one flat vector laid out
// layer by layer, weights row-major then bias; the same order is used for
// gradients, Adam moments, and checkpoints.
struct Mlp {
    std::vector<int> dims;      // layer sizes, len >= 2
    std::vector<Act> layer_act; // per layer, len dims-1; last is Identity (heads act after)
    std::vector<Head> heads;    // partition of the final output vector
    uint64_t seed = 0;
    std::vector<double> theta;

    int input_dim() const { return dims.front(); }
    int output_dim() const { return dims.back(); }
    int num_layers() const { return static_cast<int>(dims.size()) - 1; }
    size_t param_count() const { return theta.size(); }
    size_t weight_offset(int layer) const;
    size_t bias_offset(int layer) const;
    int head_offset(const std::string& name) const;
    const Head& head(const std::string& name) const;
};

// Weights ~ N(0, s/fan_in) with s = 2 for relu layers and 1 otherwise;
// biases zero. Reproducible from seed.
Mlp init_mlp(const std::vector<int>& dims, const std::vector<Head>& heads, uint64_t seed);

// Plain forward pass (no tape) with head activations applied.
Mat forward_eval(const Mlp& mlp, const Mat& batch);

// Parameter leaves for one tape, reusable across several forward passes so
// nested evaluations share gradients.
struct TapeNet {
    const Mlp* def = nullptr;
    std::vector<Var> weights;
    std::vector<Var> biases;
};

TapeNet make_tape_net(Tape& tape, const Mlp& mlp);
// Returns the full output row block with head activations applied.
Var forward_tape(Tape& tape, const TapeNet& net, Var batch);
Var head_slice(Tape& tape, const TapeNet& net, Var output, const std::string& name);

// Gradient of a scalar tape root w.r.t. the network parameters, flattened in
// canonical order.
std::vector<double> collect_grads(const Tape& tape, const TapeNet& net);

// Replaces NaN components with 0; +-inf pass through.
void zero_nans(std::vector<double>& grads);

struct AdamState {
    std::vector<double> m, v;
    long step = 0;
    double lr = 1e-3;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

AdamState make_adam(size_t n_params, double lr);
void adam_step(AdamState& state, std::vector<double>& theta, const std::vector<double>& grads);
void reset_adam(AdamState& state);

// Checkpoint: one-line JSON header (dims, heads, activations, seed, stage
// metadata, byte counts) then raw little-endian doubles: theta, adam.m,
// adam.v.
void save_checkpoint(const Mlp& mlp, const AdamState& adam, const std::string& stage_json,
                     const std::string& path);
struct Checkpoint {
    Mlp mlp;
    AdamState adam;
    std::string stage_json;
};
Checkpoint load_checkpoint(const std::string& path);

} // namespace mcl::nn
