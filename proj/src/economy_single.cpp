#include "mcl/economy_single.hpp"

#include <cmath>
#include <stdexcept>

#include "mcl/clearing.hpp"
#include "mcl/rng.hpp"

namespace mcl {

Mode mode_from_string(const std::string& s) {
    if (s == "simple") return Mode::Simple;
    if (s == "solver") return Mode::Solver;
    throw std::invalid_argument("mode must be 'simple' or 'solver', got '" + s + "'");
}

std::string mode_to_string(Mode m) { return m == Mode::Simple ? "simple" : "solver"; }

std::vector<double> default_income_profile(int H) {
    std::vector<double> y(H);
    double sum = 0.0;
    for (int h = 1; h <= H; ++h) {
        y[h - 1] = std::sin(M_PI * h / (H + 1.0));
        sum += y[h - 1];
    }
    for (double& v : y) v /= sum;
    return y;
}

std::vector<double> default_housing_weight_profile(int H) {
    std::vector<double> psi(H);
    for (int h = 0; h < H; ++h)
        psi[h] = H == 1 ? 0.05 : 0.05 + (0.25 - 0.05) * h / (H - 1.0);
    return psi;
}

void SingleAssetConfig::finalize() {
    if (H < 2) throw std::invalid_argument("economy.H must be >= 2");
    if (!(beta > 0.0 && beta < 1.0)) throw std::invalid_argument("economy.beta must be in (0,1)");
    if (!(gamma > 0.0)) throw std::invalid_argument("economy.gamma must be > 0");
    if (zeta_b < 0.0) throw std::invalid_argument("economy.zeta_b must be >= 0");
    if (sigma < 0.0) throw std::invalid_argument("economy.sigma must be >= 0");
    if (y.empty()) y = default_income_profile(H);
    if (psi.empty()) psi = default_housing_weight_profile(H);
    if (static_cast<int>(y.size()) != H)
        throw std::invalid_argument("economy.y has " + std::to_string(y.size()) +
                                    " entries, H = " + std::to_string(H));
    if (static_cast<int>(psi.size()) != H)
        throw std::invalid_argument("economy.psi has " + std::to_string(psi.size()) +
                                    " entries, H = " + std::to_string(H));
    for (double v : y)
        if (v < 0.0) throw std::invalid_argument("economy.y entries must be >= 0");
    for (double v : psi)
        if (v < 0.0) throw std::invalid_argument("economy.psi entries must be >= 0");
    // feasibility of the borrowing bounds against the bond supply
    if ((H - 1) * b_lb > B + 1e-12)
        throw std::invalid_argument("economy.b_lb infeasible against supply B");
}

double fischer_burmeister(double x, double y) { return x + y - std::sqrt(x * x + y * y); }

namespace {
double guarded_mu(double c, double gamma) {
    return std::pow(std::max(c, kConsumptionFloor), -gamma);
}
double inv_mu(double x, double gamma) {
    return std::pow(std::max(x, kInverseMarginalGuard), -1.0 / gamma);
}
} // namespace

std::vector<double> consumption(const SingleAssetConfig& cfg, double z, std::span<const double> b,
                                std::span<const double> b_next, std::span<const double> h_rent,
                                double p_b, double p_r) {
    const int H = cfg.H;
    std::vector<double> c(H);
    for (int h = 1; h <= H; ++h) {
        double v = z * cfg.y[h - 1] + b[h - 1] - p_r * h_rent[h - 1];
        if (h < H) {
            const double delta = b_next[h - 1] - b[h - 1];
            v -= p_b * b_next[h - 1] + p_b * cfg.zeta_b * 0.5 * delta * delta;
        }
        c[h - 1] = v;
    }
    return c;
}

double fb_residual_bond(const SingleAssetConfig& cfg, double c_t,
                        std::span<const double> c_next_per_node, double b_prev, double b_now,
                        std::span<const double> b_next_per_node, double p_b_t,
                        std::span<const double> p_b_next_per_node,
                        std::span<const double> weights) {
    double expectation = 0.0;
    for (size_t k = 0; k < weights.size(); ++k) {
        const double payoff =
            1.0 + p_b_next_per_node[k] * cfg.zeta_b * (b_next_per_node[k] - b_now);
        expectation += weights[k] * guarded_mu(c_next_per_node[k], cfg.gamma) * payoff;
    }
    const double den = p_b_t * (1.0 + cfg.zeta_b * (b_now - b_prev));
    const double cg = std::max(c_t, kConsumptionFloor);
    const double ratio = inv_mu(cfg.beta * expectation / den, cfg.gamma) / cg;
    return fischer_burmeister(ratio - 1.0, (b_now - cfg.b_lb) / cg);
}

double fb_residual_rent(const SingleAssetConfig& cfg, double c_t, double h_rent, double p_r,
                        double psi_h) {
    const double vprime =
        psi_h * std::pow(std::max(cfg.h_floor + h_rent, kInverseMarginalGuard), -cfg.gamma);
    const double cg = std::max(c_t, kConsumptionFloor);
    return inv_mu(vprime / p_r, cfg.gamma) / cg - 1.0;
}

SingleModel::SingleModel(SingleAssetConfig cfg, QuadratureRule rule, Mode mode)
    : cfg_(std::move(cfg)), rule_(std::move(rule)), mode_(mode) {
    cfg_.finalize();
}

std::vector<nn::Head> SingleModel::make_heads(nn::Act policy_act) const {
    return {{"bond", cfg_.H - 1, policy_act},
            {"rent", cfg_.H, nn::Act::Identity},
            {"p_b", 1, nn::Act::Softplus},
            {"p_r", 1, nn::Act::Softplus}};
}

namespace {
double softplus_inv(double y) { return std::log(std::expm1(y)); }

void scale_output_layer(nn::Mlp& mlp, double factor) {
    const int last = mlp.num_layers() - 1;
    double* w = mlp.theta.data() + mlp.weight_offset(last);
    const size_t n = static_cast<size_t>(mlp.dims[last]) * mlp.dims[last + 1];
    for (size_t i = 0; i < n; ++i) w[i] *= factor;
}

void set_head_bias(nn::Mlp& mlp, const std::string& head, double level) {
    const nn::Head& h = mlp.head(head);
    const double raw = h.act == nn::Act::Softplus ? softplus_inv(level) : level;
    double* bias = mlp.theta.data() + mlp.bias_offset(mlp.num_layers() - 1);
    const int off = mlp.head_offset(head);
    for (int i = 0; i < h.width; ++i) bias[off + i] = raw;
}
} // namespace

void SingleModel::anchor_output(nn::Mlp& mlp) const {
    scale_output_layer(mlp, 0.01);
    const double c_bar = 1.0 / cfg_.H;
    const double h_bar = cfg_.Hr / cfg_.H;
    double psi_bar = 0.0;
    for (double p : cfg_.psi) psi_bar += p;
    psi_bar /= cfg_.H;
    // rent FOC at uniform allocations, bond price at the discount factor
    const double p_r = std::max(psi_bar * std::pow((cfg_.h_floor + h_bar) / c_bar, -cfg_.gamma),
                                1e-3);
    set_head_bias(mlp, "bond", cfg_.B / (cfg_.H - 1));
    set_head_bias(mlp, "rent", h_bar);
    set_head_bias(mlp, "p_b", cfg_.beta);
    set_head_bias(mlp, "p_r", p_r);
}

DecodedSingle SingleModel::decode_eval(const nn::Mlp& mlp, const Mat& states) const {
    const int H = cfg_.H;
    const int n = states.rows;
    const Mat raw = nn::forward_eval(mlp, states);
    if (raw.cols != cfg_.output_dim())
        throw std::invalid_argument("decode: raw width " + std::to_string(raw.cols) +
                                    " != " + std::to_string(cfg_.output_dim()));
    DecodedSingle d{Mat(n, H - 1), Mat(n, H), Mat(n, 1), Mat(n, 1)};
    const std::vector<double> mu_b(H - 1, 1.0);
    const std::vector<double> mu_r(H, 1.0);
    const std::vector<double> lb(H - 1, cfg_.b_lb);
    clearing::RowWorkspace ws;
    std::vector<uint8_t> active(H - 1);
    const int bond_off = mlp.head_offset("bond");
    const int rent_off = mlp.head_offset("rent");
    const int pb_off = mlp.head_offset("p_b");
    const int pr_off = mlp.head_offset("p_r");
    for (int r = 0; r < n; ++r) {
        const double* row = raw.row_ptr(r);
        std::span<const double> braw(row + bond_off, static_cast<size_t>(H - 1));
        std::span<const double> rraw(row + rent_off, static_cast<size_t>(H));
        if (mode_ == Mode::Simple) {
            clearing::simple_adjust_row(mu_b, H - 1.0, braw, cfg_.B,
                                        {d.bond.row_ptr(r), static_cast<size_t>(H - 1)});
        } else {
            double fm = 0.0;
            clearing::project_row(mu_b, braw, cfg_.B, lb,
                                  {d.bond.row_ptr(r), static_cast<size_t>(H - 1)}, active, &fm, ws,
                                  false);
        }
        clearing::simple_adjust_row(mu_r, static_cast<double>(H), rraw, cfg_.Hr,
                                    {d.rent.row_ptr(r), static_cast<size_t>(H)});
        d.p_b(r, 0) = row[pb_off];
        d.p_r(r, 0) = row[pr_off];
    }
    return d;
}

Mat SingleModel::transition(const Mat& states, const DecodedSingle& dec,
                            std::span<const double> z_next) const {
    const int H = cfg_.H;
    Mat out(states.rows, states.cols);
    for (int r = 0; r < states.rows; ++r) {
        double* o = out.row_ptr(r);
        o[0] = z_next[r];
        o[1] = 0.0; // newborns enter without assets
        for (int h = 0; h < H - 1; ++h) o[2 + h] = dec.bond(r, h);
    }
    return out;
}

Mat SingleModel::initial_state() const {
    Mat x(1, cfg_.input_dim());
    x(0, 0) = 1.0;
    x(0, 1) = 0.0;
    for (int h = 2; h <= cfg_.H; ++h) x(0, h) = cfg_.B / (cfg_.H - 1.0);
    return x;
}

void SingleModel::simulate_step(const nn::Mlp& mlp, Mat& states, uint64_t step_seed) const {
    const DecodedSingle dec = decode_eval(mlp, states);
    std::vector<double> z_next(states.rows);
    for (int r = 0; r < states.rows; ++r) {
        Rng rng(mix_seed(step_seed, 0x7261 /*traj*/, static_cast<uint64_t>(r)));
        const double eps = rng.normal();
        z_next[r] = std::exp(cfg_.rho * std::log(states(r, 0)) + cfg_.sigma * eps);
    }
    states = transition(states, dec, z_next);
}

Var SingleModel::build_loss_parts(Tape& t, const nn::TapeNet& net, Var X,
                                  LossParts* parts) const {
    const int H = cfg_.H;
    const int n = t.rows(X);
    const double gamma = cfg_.gamma;
    const std::vector<double> mu_b(H - 1, 1.0);
    const std::vector<double> mu_r(H, 1.0);

    const Var y_row = t.constant(Mat::row(cfg_.y));
    const Var psi_row = t.constant(Mat::row(cfg_.psi));

    auto decode = [&](Var states) {
        struct Dec {
            Var braw, bond, rent, pb, pr;
        } d{};
        const Var raw = nn::forward_tape(t, net, states);
        d.braw = nn::head_slice(t, net, raw, "bond");
        if (mode_ == Mode::Simple)
            d.bond = t.clearing_simple(d.braw, mu_b, cfg_.B);
        else
            d.bond = t.clearing_project(d.braw, mu_b, cfg_.B,
                                        std::vector<double>(H - 1, cfg_.b_lb));
        d.rent = t.clearing_simple(nn::head_slice(t, net, raw, "rent"), mu_r, cfg_.Hr);
        d.pb = nn::head_slice(t, net, raw, "p_b");
        d.pr = nn::head_slice(t, net, raw, "p_r");
        return d;
    };

    // consumption for all H ages given a state block and decoded outputs;
    // terminal age trades nothing and pays no adjustment cost
    auto consume = [&](Var z, Var b_state, Var bond, Var rent, Var pb, Var pr) {
        const Var bprime = t.concat_cols({bond, t.zeros(n, 1)});
        const Var delta_f = t.sub(bond, t.slice_cols(b_state, 0, H - 1));
        const Var pbH = t.bcast_col(pb, H);
        const Var pbF = t.bcast_col(pb, H - 1);
        const Var prH = t.bcast_col(pr, H);
        const Var zy = t.mul(t.bcast_col(z, H), t.bcast_row(y_row, n));
        const Var cost_f = t.mul_scalar(t.mul(pbF, t.square(delta_f)), 0.5 * cfg_.zeta_b);
        Var c = t.add(zy, b_state);
        c = t.sub(c, t.mul(pbH, bprime));
        c = t.sub(c, t.mul(prH, rent));
        c = t.sub(c, t.concat_cols({cost_f, t.zeros(n, 1)}));
        return std::pair<Var, Var>(c, delta_f);
    };

    const Var z = t.slice_cols(X, 0, 1);
    const Var b_state = t.slice_cols(X, 1, H);
    const auto d0 = decode(X);
    const auto [c0, delta0_f] = consume(z, b_state, d0.bond, d0.rent, d0.pb, d0.pr);
    const Var cg0 = t.max_scalar(c0, kConsumptionFloor);
    const Var cg0_f = t.slice_cols(cg0, 0, H - 1);

    // discounted expected marginal benefit of saving, by quadrature node
    const std::vector<double> zvals = t.value(z); // copy: node storage reallocates
    Var expectation{};
    const Var next_bstate = t.concat_cols({t.zeros(n, 1), d0.bond});
    for (int k = 0; k < rule_.order; ++k) {
        Mat zk(n, 1);
        for (int r = 0; r < n; ++r)
            zk(r, 0) = std::exp(cfg_.rho * std::log(zvals[r]) + cfg_.sigma * rule_.nodes[k]);
        const Var zkv = t.constant(zk);
        const Var Xk = t.concat_cols({zkv, next_bstate});
        const auto dk = decode(Xk);
        const auto [ck, deltak_f] = consume(zkv, next_bstate, dk.bond, dk.rent, dk.pb, dk.pr);
        const Var mu_next = t.pow_scalar(t.max_scalar(ck, kConsumptionFloor), -gamma);
        const Var pbkF = t.bcast_col(dk.pb, H - 1);
        const Var payoff_f =
            t.add_scalar(t.mul_scalar(t.mul(pbkF, deltak_f), cfg_.zeta_b), 1.0);
        const Var payoff = t.concat_cols({payoff_f, t.constant(Mat(n, 1, 1.0))});
        const Var gain = t.slice_cols(t.mul(mu_next, payoff), 1, H - 1);
        const Var term = t.mul_scalar(gain, rule_.weights[k]);
        expectation = k == 0 ? term : t.add(expectation, term);
    }

    const Var den =
        t.mul(t.bcast_col(d0.pb, H - 1),
              t.add_scalar(t.mul_scalar(delta0_f, cfg_.zeta_b), 1.0));
    const Var x_arg = t.max_scalar(t.div(t.mul_scalar(expectation, cfg_.beta), den),
                                   kInverseMarginalGuard);
    const Var euler_lhs = t.pow_scalar(x_arg, -1.0 / gamma);
    const Var ratio = t.div(euler_lhs, cg0_f);
    const Var fb_x = t.add_scalar(ratio, -1.0);
    const Var fb_y = t.div(t.add_scalar(d0.bond, -cfg_.b_lb), cg0_f);
    const Var err_bond = t.fischer_burmeister(fb_x, fb_y);

    const Var base = t.max_scalar(t.add_scalar(d0.rent, cfg_.h_floor), kInverseMarginalGuard);
    const Var vprime = t.mul(t.pow_scalar(base, -gamma), t.bcast_row(psi_row, n));
    const Var xr = t.max_scalar(t.div(vprime, t.bcast_col(d0.pr, H)), kInverseMarginalGuard);
    const Var err_rent = t.add_scalar(t.div(t.pow_scalar(xr, -1.0 / gamma), cg0), -1.0);

    Var loss = t.add(t.mul_scalar(t.sum_all(t.square(err_bond)), 1.0 / (double(n) * (H - 1))),
                     t.mul_scalar(t.sum_all(t.square(err_rent)), 1.0 / (double(n) * H)));

    Var lift{};
    if (mode_ == Mode::Solver) {
        const Var inv = t.pow_scalar(t.add_scalar(d0.braw, 1.0), -1.0);
        const Var gate =
            t.exp(t.mul_scalar(t.square(t.add_scalar(d0.bond, -cfg_.b_lb)), -1e5));
        const Var want = t.max_scalar(t.neg(fb_x), 0.0);
        lift = t.mul(t.mul(inv, gate), want);
        loss = t.add(loss,
                     t.mul_scalar(t.sum_all(t.square(lift)), 1.0 / (double(n) * (H - 1))));
    }

    const Var shortfall = t.max_scalar(t.add_scalar(t.neg(c0), kConsumptionFloor), 0.0);
    loss = t.add(loss, t.mul_scalar(t.sum_all(t.square(shortfall)),
                                    kConsumptionPenaltyWeight / double(n)));

    if (parts) {
        parts->err_bond = err_bond;
        parts->err_rent = err_rent;
        parts->c = c0;
        parts->p_b = d0.pb;
        parts->p_r = d0.pr;
        parts->bond_pol = d0.bond;
        parts->rent_pol = d0.rent;
        parts->lift = lift;
        parts->has_lift = mode_ == Mode::Solver;
    }
    return loss;
}

Var SingleModel::build_loss(Tape& tape, const nn::TapeNet& net, Var states) const {
    return build_loss_parts(tape, net, states, nullptr);
}

std::vector<ValueBlock> SingleModel::residuals(const nn::Mlp& mlp, const Mat& states) const {
    Tape t;
    const nn::TapeNet net = nn::make_tape_net(t, mlp);
    LossParts parts;
    build_loss_parts(t, net, t.constant(states), &parts);
    return {{"bond", 1, t.value_mat(parts.err_bond)}, {"rent", 1, t.value_mat(parts.err_rent)}};
}

std::vector<ValueBlock> SingleModel::profiles(const nn::Mlp& mlp, const Mat& states) const {
    Tape t;
    const nn::TapeNet net = nn::make_tape_net(t, mlp);
    LossParts parts;
    build_loss_parts(t, net, t.constant(states), &parts);
    const int n = states.rows;
    Mat bond_padded(n, cfg_.H, 0.0);
    const Mat bond = t.value_mat(parts.bond_pol);
    for (int r = 0; r < n; ++r)
        for (int h = 0; h < cfg_.H - 1; ++h) bond_padded(r, h) = bond(r, h);
    return {{"bond", 1, bond_padded},
            {"rent", 1, t.value_mat(parts.rent_pol)},
            {"consumption", 1, t.value_mat(parts.c)}};
}

double SingleModel::state_clearing_error(const Mat& states) const {
    double worst = 0.0;
    for (int r = 0; r < states.rows; ++r) {
        double sum = 0.0;
        for (int h = 1; h <= cfg_.H; ++h) sum += states(r, h);
        worst = std::max(worst, std::fabs(sum - cfg_.B));
        worst = std::max(worst, std::fabs(states(r, 1)));
    }
    return worst;
}

} // namespace mcl
