#pragma once

#include <array>
#include <span>
#include <vector>

#include "mcl/economy_single.hpp"
#include "mcl/model.hpp"
#include "mcl/quadrature.hpp"

namespace mcl {

// Three traded assets (bond, stock, owned housing) plus rental services, two
// permanent risk-aversion types per cohort. Mask parameters scale the raw
// asset policies before the clearing layer so an asset can be switched off or
// phased in; loss weights do the same for the optimality conditions.
struct MultiAssetConfig {
    int H = 20;
    std::vector<double> y;
    std::vector<double> psi;
    double h_floor = 5e-5;
    double beta = 0.867;
    double gamma1 = 1.0, gamma2 = 2.0;
    double mu1 = 0.5, mu2 = 0.5;
    double b_lb = 0.0, s_lb = 0.0, ho_lb = 0.0;
    double B = 0.56;
    double S = 1.0;
    double Ho = 1.0, Hex = 0.0;
    double zeta_b = 0.25, zeta_s = 1.0, zeta_h = 4.0;
    double d = 0.3;
    double rho = 0.458;
    double sigma = 0.043;
    double m_b = 1.0, m_s = 1.0, m_o = 1.0;       // policy masks in [0,1]
    double w_b = 1.0, w_s = 1.0, w_o = 1.0, w_r = 1.0; // loss weights >= 0

    int input_dim() const { return 1 + 8 * H; } // z, 3 assets x 2 types x H, aux 2 x H
    int output_dim() const { return 6 * (H - 1) + 2 * H + 4; }

    void finalize();
};

class MultiModel : public EconModel {
  public:
    MultiModel(MultiAssetConfig cfg, QuadratureRule rule, Mode mode);

    std::vector<nn::Head> make_heads(nn::Act policy_act) const;

    // per-capita allocations and crude price levels in the output layer
    void anchor_output(nn::Mlp& mlp) const;

    struct DecodedMulti {
        Mat bond, stock, housing; // n x 2(H-1), cleared, type 1 block first
        Mat rent;                 // n x 2H, cleared
        Mat p_b, p_s, p_o, p_r;   // n x 1
    };
    DecodedMulti decode_eval(const nn::Mlp& mlp, const Mat& states) const;
    Mat transition(const Mat& states, const DecodedMulti& dec,
                   std::span<const double> z_next) const;

    struct LossParts {
        std::array<Var, 2> err_bond, err_stock, err_housing, err_rent, c;
        Var p_b, p_s, p_o, p_r;
        std::array<Var, 2> bond_pol, stock_pol, housing_pol, rent_pol;
    };
    Var build_loss_parts(Tape& tape, const nn::TapeNet& net, Var states, LossParts* parts) const;

    // EconModel
    int state_dim() const override { return cfg_.input_dim(); }
    int num_types() const override { return 2; }
    int ages() const override { return cfg_.H; }
    Mat initial_state() const override;
    void simulate_step(const nn::Mlp& mlp, Mat& states, uint64_t step_seed) const override;
    Var build_loss(Tape& tape, const nn::TapeNet& net, Var states) const override;
    std::vector<ValueBlock> residuals(const nn::Mlp& mlp, const Mat& states) const override;
    std::vector<ValueBlock> profiles(const nn::Mlp& mlp, const Mat& states) const override;
    double state_clearing_error(const Mat& states) const override;

    // Proportional rescale of one asset's holdings when its supply moves
    // between homotopy stages; a 0 -> positive jump seeds uniform per-capita
    // holdings. Asset is "stock" or "housing"; aux columns are refreshed.
    void rescale_holdings(Mat& states, const std::string& asset, double old_supply,
                          double new_supply) const;

    const MultiAssetConfig& config() const { return cfg_; }
    Mode mode() const { return mode_; }

  private:
    MultiAssetConfig cfg_;
    QuadratureRule rule_;
    Mode mode_;
};

} // namespace mcl
