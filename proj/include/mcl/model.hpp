#pragma once

#include <string>
#include <vector>

#include "mcl/mat.hpp"
#include "mcl/nn.hpp"
#include "mcl/tape.hpp"

namespace mcl {

enum class Mode : int { Simple = 0, Solver = 1 };

Mode mode_from_string(const std::string& s);
std::string mode_to_string(Mode m);

// A named block of per-state, per-age values (residuals, policies, ...) for
// one preference type. Column j holds age j+1.
struct ValueBlock {
    std::string family;
    int type = 1;
    Mat values;
};

// What the trainer needs from an economy: a feasible initial state, one-step
// simulation under current policies, and the training loss as a tape program.
class EconModel {
  public:
    virtual ~EconModel() = default;
    virtual int state_dim() const = 0;
    virtual int num_types() const = 0;
    virtual int ages() const = 0;
    virtual Mat initial_state() const = 0;
    virtual void simulate_step(const nn::Mlp& mlp, Mat& states, uint64_t step_seed) const = 0;
    virtual Var build_loss(Tape& tape, const nn::TapeNet& net, Var states) const = 0;
    virtual std::vector<ValueBlock> residuals(const nn::Mlp& mlp, const Mat& states) const = 0;
    virtual std::vector<ValueBlock> profiles(const nn::Mlp& mlp, const Mat& states) const = 0;
    // largest violation of the state-side clearing identities
    virtual double state_clearing_error(const Mat& states) const = 0;
};

} // namespace mcl
