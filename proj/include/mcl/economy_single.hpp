#pragma once

#include <span>
#include <vector>

#include "mcl/model.hpp"
#include "mcl/quadrature.hpp"

namespace mcl {

// Overlapping-generations economy with one bond, rental housing services and
// an AR(1) aggregate income shock. Age groups h = 1..H each have measure one;
// newborns and the dying hold no assets.
struct SingleAssetConfig {
    int H = 20;
    std::vector<double> y;   // income shares, sum 1; default hump profile
    std::vector<double> psi; // housing utility weights; default rising ramp
    double h_floor = 5e-5;   // utility shifter in v(h) = (h_floor + h)^(1-g)/(1-g)
    double beta = 0.867;
    double gamma = 3.0;
    double b_lb = 0.0;
    double B = 0.56;
    double Hr = 1.0;
    double zeta_b = 0.5;
    double rho = 0.458;
    double sigma = 0.043;

    int input_dim() const { return H + 1; }
    int output_dim() const { return 2 * H + 1; }

    // fills default y/psi profiles and validates ranges; throws on bad values
    void finalize();
};

std::vector<double> default_income_profile(int H);
std::vector<double> default_housing_weight_profile(int H);

// marginal-utility guards shared by both economies
inline constexpr double kConsumptionFloor = 1e-8;
inline constexpr double kConsumptionPenaltyWeight = 10.0;
inline constexpr double kInverseMarginalGuard = 1e-12;

double fischer_burmeister(double x, double y);

// budget identity for all H ages of one state; b_next has H-1 entries, the
// terminal age trades nothing and pays no adjustment cost
std::vector<double> consumption(const SingleAssetConfig& cfg, double z, std::span<const double> b,
                                std::span<const double> b_next, std::span<const double> h_rent,
                                double p_b, double p_r);

double fb_residual_bond(const SingleAssetConfig& cfg, double c_t,
                        std::span<const double> c_next_per_node, double b_prev, double b_now,
                        std::span<const double> b_next_per_node, double p_b_t,
                        std::span<const double> p_b_next_per_node,
                        std::span<const double> weights);

double fb_residual_rent(const SingleAssetConfig& cfg, double c_t, double h_rent, double p_r,
                        double psi_h);

struct DecodedSingle {
    Mat bond;   // n x (H-1), market-cleared
    Mat rent;   // n x H, market-cleared
    Mat p_b;    // n x 1
    Mat p_r;    // n x 1
};

class SingleModel : public EconModel {
  public:
    SingleModel(SingleAssetConfig cfg, QuadratureRule rule, Mode mode);

    std::vector<nn::Head> make_heads(nn::Act policy_act) const;

    // Rescales the output layer and sets its biases so the untrained network
    // already emits per-capita allocations and crude price levels. Optional;
    // useful at small episode budgets.
    void anchor_output(nn::Mlp& mlp) const;

    DecodedSingle decode_eval(const nn::Mlp& mlp, const Mat& states) const;
    Mat transition(const Mat& states, const DecodedSingle& dec,
                   std::span<const double> z_next) const;

    struct LossParts {
        Var err_bond, err_rent, lift, c, p_b, p_r, bond_pol, rent_pol;
        bool has_lift = false;
    };
    Var build_loss_parts(Tape& tape, const nn::TapeNet& net, Var states, LossParts* parts) const;

    // EconModel
    int state_dim() const override { return cfg_.input_dim(); }
    int num_types() const override { return 1; }
    int ages() const override { return cfg_.H; }
    Mat initial_state() const override;
    void simulate_step(const nn::Mlp& mlp, Mat& states, uint64_t step_seed) const override;
    Var build_loss(Tape& tape, const nn::TapeNet& net, Var states) const override;
    std::vector<ValueBlock> residuals(const nn::Mlp& mlp, const Mat& states) const override;
    std::vector<ValueBlock> profiles(const nn::Mlp& mlp, const Mat& states) const override;
    double state_clearing_error(const Mat& states) const override;

    const SingleAssetConfig& config() const { return cfg_; }
    const QuadratureRule& rule() const { return rule_; }
    Mode mode() const { return mode_; }

  private:
    SingleAssetConfig cfg_;
    QuadratureRule rule_;
    Mode mode_;
};

} // namespace mcl
