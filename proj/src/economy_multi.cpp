#include "mcl/economy_multi.hpp"

#include <cmath>
#include <stdexcept>

#include "mcl/clearing.hpp"
#include "mcl/rng.hpp"

namespace mcl {

void MultiAssetConfig::finalize() {
    if (H < 2) throw std::invalid_argument("economy.H must be >= 2");
    if (!(beta > 0.0 && beta < 1.0)) throw std::invalid_argument("economy.beta must be in (0,1)");
    if (!(gamma1 > 0.0) || !(gamma2 > 0.0))
        throw std::invalid_argument("economy.gamma1/gamma2 must be > 0");
    if (!(mu1 + mu2 > 0.0)) throw std::invalid_argument("economy.mu1+mu2 must be > 0");
    if (B < 0.0 || S < 0.0 || Ho < 0.0 || Hex < 0.0)
        throw std::invalid_argument("economy supplies must be >= 0");
    if (m_b < 0.0 || m_b > 1.0 || m_s < 0.0 || m_s > 1.0 || m_o < 0.0 || m_o > 1.0)
        throw std::invalid_argument("economy masks must be in [0,1]");
    if (w_b < 0.0 || w_s < 0.0 || w_o < 0.0 || w_r < 0.0)
        throw std::invalid_argument("economy loss weights must be >= 0");
    if (zeta_b < 0.0 || zeta_s < 0.0 || zeta_h < 0.0)
        throw std::invalid_argument("economy adjustment costs must be >= 0");
    if (sigma < 0.0) throw std::invalid_argument("economy.sigma must be >= 0");
    if (y.empty()) y = default_income_profile(H);
    if (psi.empty()) psi = default_housing_weight_profile(H);
    if (static_cast<int>(y.size()) != H)
        throw std::invalid_argument("economy.y has " + std::to_string(y.size()) +
                                    " entries, H = " + std::to_string(H));
    if (static_cast<int>(psi.size()) != H)
        throw std::invalid_argument("economy.psi has " + std::to_string(psi.size()) +
                                    " entries, H = " + std::to_string(H));
    const double mass = (mu1 + mu2) * (H - 1);
    if (mass * b_lb > B + 1e-12 || mass * s_lb > S + 1e-12 || mass * ho_lb > Ho + 1e-12)
        throw std::invalid_argument("economy short-sale bounds infeasible against supplies");
}

MultiModel::MultiModel(MultiAssetConfig cfg, QuadratureRule rule, Mode mode)
    : cfg_(std::move(cfg)), rule_(std::move(rule)), mode_(mode) {
    cfg_.finalize();
}

std::vector<nn::Head> MultiModel::make_heads(nn::Act policy_act) const {
    const int Hm1 = cfg_.H - 1;
    return {{"bond", 2 * Hm1, policy_act},  {"stock", 2 * Hm1, policy_act},
            {"housing", 2 * Hm1, policy_act}, {"rent", 2 * cfg_.H, nn::Act::Identity},
            {"p_b", 1, nn::Act::Softplus},  {"p_s", 1, nn::Act::Softplus},
            {"p_o", 1, nn::Act::Softplus},  {"p_r", 1, nn::Act::Softplus}};
}

namespace {
struct Offsets {
    int bond, stock, housing, aux;
};
Offsets state_offsets(int H) { return {1, 1 + 2 * H, 1 + 4 * H, 1 + 6 * H}; }

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

void MultiModel::anchor_output(nn::Mlp& mlp) const {
    scale_output_layer(mlp, 0.01);
    const double mass = (cfg_.mu1 + cfg_.mu2) * (cfg_.H - 1);
    const double c_bar = 1.0 / cfg_.H;
    const double h_bar = (cfg_.Ho + cfg_.Hex) / ((cfg_.mu1 + cfg_.mu2) * cfg_.H);
    double psi_bar = 0.0;
    for (double p : cfg_.psi) psi_bar += p;
    psi_bar /= cfg_.H;
    const double gamma_bar = 0.5 * (cfg_.gamma1 + cfg_.gamma2);
    const double p_r =
        std::max(psi_bar * std::pow((cfg_.h_floor + h_bar) / c_bar, -gamma_bar), 1e-3);
    set_head_bias(mlp, "bond", cfg_.B / mass);
    set_head_bias(mlp, "stock", cfg_.S / mass);
    set_head_bias(mlp, "housing", cfg_.Ho / mass);
    set_head_bias(mlp, "rent", h_bar);
    set_head_bias(mlp, "p_b", cfg_.beta);
    set_head_bias(mlp, "p_s", std::max(cfg_.beta * cfg_.d / (1.0 - cfg_.beta), 0.05));
    set_head_bias(mlp, "p_o", std::max(cfg_.beta * p_r / (1.0 - cfg_.beta), 0.05));
    set_head_bias(mlp, "p_r", p_r);
}

MultiModel::DecodedMulti MultiModel::decode_eval(const nn::Mlp& mlp, const Mat& states) const {
    const int H = cfg_.H;
    const int Hm1 = H - 1;
    const int n = states.rows;
    const Mat raw = nn::forward_eval(mlp, states);
    if (raw.cols != cfg_.output_dim())
        throw std::invalid_argument("decode: raw width " + std::to_string(raw.cols) +
                                    " != " + std::to_string(cfg_.output_dim()));

    std::vector<double> mu_a(2 * Hm1), mu_r(2 * H);
    for (int i = 0; i < Hm1; ++i) {
        mu_a[i] = cfg_.mu1;
        mu_a[Hm1 + i] = cfg_.mu2;
    }
    for (int i = 0; i < H; ++i) {
        mu_r[i] = cfg_.mu1;
        mu_r[H + i] = cfg_.mu2;
    }
    const double mu_a_sum = (cfg_.mu1 + cfg_.mu2) * Hm1;
    const double mu_r_sum = (cfg_.mu1 + cfg_.mu2) * H;

    DecodedMulti d{Mat(n, 2 * Hm1), Mat(n, 2 * Hm1), Mat(n, 2 * Hm1), Mat(n, 2 * H),
                   Mat(n, 1),       Mat(n, 1),       Mat(n, 1),       Mat(n, 1)};

    struct AssetSpec {
        const char* head;
        double mask, supply, lb;
        Mat* out;
    };
    const AssetSpec assets[3] = {{"bond", cfg_.m_b, cfg_.B, cfg_.b_lb, &d.bond},
                                 {"stock", cfg_.m_s, cfg_.S, cfg_.s_lb, &d.stock},
                                 {"housing", cfg_.m_o, cfg_.Ho, cfg_.ho_lb, &d.housing}};

    clearing::RowWorkspace ws;
    std::vector<uint8_t> active(2 * Hm1);
    std::vector<double> pre(2 * Hm1);
    for (const AssetSpec& as : assets) {
        const int off = mlp.head_offset(as.head);
        const std::vector<double> lb(2 * Hm1, as.lb);
        for (int r = 0; r < n; ++r) {
            const double* row = raw.row_ptr(r);
            for (int j = 0; j < 2 * Hm1; ++j) pre[j] = as.mask * row[off + j];
            if (mode_ == Mode::Simple) {
                clearing::simple_adjust_row(mu_a, mu_a_sum, pre, as.supply,
                                            {as.out->row_ptr(r), pre.size()});
            } else {
                double fm = 0.0;
                clearing::project_row(mu_a, pre, as.supply, lb, {as.out->row_ptr(r), pre.size()},
                                      active, &fm, ws, false);
            }
        }
    }
    const int rent_off = mlp.head_offset("rent");
    for (int r = 0; r < n; ++r) {
        const double* row = raw.row_ptr(r);
        clearing::simple_adjust_row(mu_r, mu_r_sum, {row + rent_off, static_cast<size_t>(2 * H)},
                                    cfg_.Ho + cfg_.Hex, {d.rent.row_ptr(r), static_cast<size_t>(2 * H)});
        d.p_b(r, 0) = row[mlp.head_offset("p_b")];
        d.p_s(r, 0) = row[mlp.head_offset("p_s")];
        d.p_o(r, 0) = row[mlp.head_offset("p_o")];
        d.p_r(r, 0) = row[mlp.head_offset("p_r")];
    }
    return d;
}

Mat MultiModel::transition(const Mat& states, const DecodedMulti& dec,
                           std::span<const double> z_next) const {
    const int H = cfg_.H;
    const Offsets off = state_offsets(H);
    Mat out(states.rows, states.cols);
    for (int r = 0; r < states.rows; ++r) {
        double* o = out.row_ptr(r);
        o[0] = z_next[r];
        for (int ti = 0; ti < 2; ++ti) {
            const int pol = ti * (H - 1);
            o[off.bond + ti * H] = 0.0;
            o[off.stock + ti * H] = 0.0;
            o[off.housing + ti * H] = 0.0;
            o[off.aux + ti * H] = 0.0;
            for (int h = 0; h < H - 1; ++h) {
                o[off.bond + ti * H + 1 + h] = dec.bond(r, pol + h);
                o[off.stock + ti * H + 1 + h] = dec.stock(r, pol + h);
                o[off.housing + ti * H + 1 + h] = dec.housing(r, pol + h);
                o[off.aux + ti * H + 1 + h] = dec.stock(r, pol + h) * cfg_.d * z_next[r];
            }
        }
    }
    return out;
}

Mat MultiModel::initial_state() const {
    Mat x(1, cfg_.input_dim());
    x(0, 0) = 1.0;
    const Offsets off = state_offsets(cfg_.H);
    const double mass = (cfg_.mu1 + cfg_.mu2) * (cfg_.H - 1);
    const double b0 = cfg_.B / mass, s0 = cfg_.S / mass, o0 = cfg_.Ho / mass;
    for (int ti = 0; ti < 2; ++ti)
        for (int h = 1; h < cfg_.H; ++h) {
            x(0, off.bond + ti * cfg_.H + h) = b0;
            x(0, off.stock + ti * cfg_.H + h) = s0;
            x(0, off.housing + ti * cfg_.H + h) = o0;
            x(0, off.aux + ti * cfg_.H + h) = s0 * cfg_.d * 1.0;
        }
    return x;
}

void MultiModel::simulate_step(const nn::Mlp& mlp, Mat& states, uint64_t step_seed) const {
    const DecodedMulti dec = decode_eval(mlp, states);
    std::vector<double> z_next(states.rows);
    for (int r = 0; r < states.rows; ++r) {
        Rng rng(mix_seed(step_seed, 0x7261, static_cast<uint64_t>(r)));
        z_next[r] = std::exp(cfg_.rho * std::log(states(r, 0)) + cfg_.sigma * rng.normal());
    }
    states = transition(states, dec, z_next);
}

void MultiModel::rescale_holdings(Mat& states, const std::string& asset, double old_supply,
                                  double new_supply) const {
    const int H = cfg_.H;
    const Offsets off = state_offsets(H);
    int base;
    if (asset == "stock") base = off.stock;
    else if (asset == "housing") base = off.housing;
    else if (asset == "bond") base = off.bond;
    else throw std::invalid_argument("rescale_holdings: unknown asset '" + asset + "'");

    if (old_supply == new_supply) return;
    const double per_capita = new_supply / ((cfg_.mu1 + cfg_.mu2) * (H - 1));
    for (int r = 0; r < states.rows; ++r) {
        double* row = states.row_ptr(r);
        for (int ti = 0; ti < 2; ++ti)
            for (int h = 1; h < H; ++h) {
                double& v = row[base + ti * H + h];
                v = old_supply > 0.0 ? v * (new_supply / old_supply) : per_capita;
            }
    }
    // aux tracks dividend income of the stock distribution
    for (int r = 0; r < states.rows; ++r) {
        double* row = states.row_ptr(r);
        const double z = row[0];
        for (int ti = 0; ti < 2; ++ti)
            for (int h = 0; h < H; ++h)
                row[off.aux + ti * H + h] = row[off.stock + ti * H + h] * cfg_.d * z;
    }
}

Var MultiModel::build_loss_parts(Tape& t, const nn::TapeNet& net, Var X,
                                 LossParts* parts) const {
    const int H = cfg_.H;
    const int Hm1 = H - 1;
    const int n = t.rows(X);
    const Offsets off = state_offsets(H);
    const double gammas[2] = {cfg_.gamma1, cfg_.gamma2};

    std::vector<double> mu_a(2 * Hm1), mu_r(2 * H);
    for (int i = 0; i < Hm1; ++i) {
        mu_a[i] = cfg_.mu1;
        mu_a[Hm1 + i] = cfg_.mu2;
    }
    for (int i = 0; i < H; ++i) {
        mu_r[i] = cfg_.mu1;
        mu_r[H + i] = cfg_.mu2;
    }

    const Var y_row = t.constant(Mat::row(cfg_.y));
    const Var psi_row = t.constant(Mat::row(cfg_.psi));

    struct Dec {
        Var braw, sraw, oraw;
        Var bond, stock, housing, rent;
        Var pb, ps, po, pr;
    };
    auto clear_asset = [&](Var raw_slice, double mask, double supply, double lb) {
        const Var pre = t.mul_scalar(raw_slice, mask);
        if (mode_ == Mode::Simple) return t.clearing_simple(pre, mu_a, supply);
        return t.clearing_project(pre, mu_a, supply, std::vector<double>(2 * Hm1, lb));
    };
    auto decode = [&](Var states) {
        Dec d;
        const Var raw = nn::forward_tape(t, net, states);
        d.braw = nn::head_slice(t, net, raw, "bond");
        d.sraw = nn::head_slice(t, net, raw, "stock");
        d.oraw = nn::head_slice(t, net, raw, "housing");
        d.bond = clear_asset(d.braw, cfg_.m_b, cfg_.B, cfg_.b_lb);
        d.stock = clear_asset(d.sraw, cfg_.m_s, cfg_.S, cfg_.s_lb);
        d.housing = clear_asset(d.oraw, cfg_.m_o, cfg_.Ho, cfg_.ho_lb);
        d.rent = t.clearing_simple(nn::head_slice(t, net, raw, "rent"), mu_r, cfg_.Ho + cfg_.Hex);
        d.pb = nn::head_slice(t, net, raw, "p_b");
        d.ps = nn::head_slice(t, net, raw, "p_s");
        d.po = nn::head_slice(t, net, raw, "p_o");
        d.pr = nn::head_slice(t, net, raw, "p_r");
        return d;
    };

    struct TypeVals {
        Var c, cg, cg_f;
        Var delta_b, delta_s, delta_o; // n x (H-1), choosing ages
    };
    // consumption for one type given state blocks and decoded outputs
    auto consume = [&](const Dec& d, Var z, Var bst, Var sst, Var host, int ti) {
        TypeVals tv;
        const Var bpol = t.slice_cols(d.bond, ti * Hm1, Hm1);
        const Var spol = t.slice_cols(d.stock, ti * Hm1, Hm1);
        const Var opol = t.slice_cols(d.housing, ti * Hm1, Hm1);
        const Var hr = t.slice_cols(d.rent, ti * H, H);
        tv.delta_b = t.sub(bpol, t.slice_cols(bst, 0, Hm1));
        tv.delta_s = t.sub(spol, t.slice_cols(sst, 0, Hm1));
        tv.delta_o = t.sub(opol, t.slice_cols(host, 0, Hm1));

        const Var zH = t.bcast_col(z, H);
        const Var income =
            t.add(t.add(t.mul(zH, t.bcast_row(y_row, n)), bst),
                  t.add(t.mul(sst, t.bcast_col(t.add(d.ps, t.mul_scalar(z, cfg_.d)), H)),
                        t.mul(host, t.bcast_col(t.add(d.po, d.pr), H))));

        const Var bprime = t.concat_cols({bpol, t.zeros(n, 1)});
        const Var sprime = t.concat_cols({spol, t.zeros(n, 1)});
        const Var oprime = t.concat_cols({opol, t.zeros(n, 1)});
        Var spend = t.add(t.add(t.mul(t.bcast_col(d.pb, H), bprime),
                                t.mul(t.bcast_col(d.ps, H), sprime)),
                          t.add(t.mul(t.bcast_col(d.po, H), oprime),
                                t.mul(t.bcast_col(d.pr, H), hr)));
        Var cost = t.mul_scalar(t.mul(t.bcast_col(d.pb, Hm1), t.square(tv.delta_b)),
                                0.5 * cfg_.zeta_b);
        cost = t.add(cost, t.mul_scalar(t.mul(t.bcast_col(d.ps, Hm1), t.square(tv.delta_s)),
                                        0.5 * cfg_.zeta_s));
        cost = t.add(cost, t.mul_scalar(t.mul(t.bcast_col(d.po, Hm1), t.square(tv.delta_o)),
                                        0.5 * cfg_.zeta_h));
        spend = t.add(spend, t.concat_cols({cost, t.zeros(n, 1)}));
        tv.c = t.sub(income, spend);
        tv.cg = t.max_scalar(tv.c, kConsumptionFloor);
        tv.cg_f = t.slice_cols(tv.cg, 0, Hm1);
        return tv;
    };

    const Var z = t.slice_cols(X, 0, 1);
    std::array<Var, 2> bst, sst, host;
    for (int ti = 0; ti < 2; ++ti) {
        bst[ti] = t.slice_cols(X, off.bond + ti * H, H);
        sst[ti] = t.slice_cols(X, off.stock + ti * H, H);
        host[ti] = t.slice_cols(X, off.housing + ti * H, H);
    }
    const Dec d0 = decode(X);
    std::array<TypeVals, 2> tv0 = {consume(d0, z, bst[0], sst[0], host[0], 0),
                                   consume(d0, z, bst[1], sst[1], host[1], 1)};

    // next-period state blocks shared across quadrature nodes
    std::array<Var, 2> nb, ns, nho;
    for (int ti = 0; ti < 2; ++ti) {
        nb[ti] = t.concat_cols({t.zeros(n, 1), t.slice_cols(d0.bond, ti * Hm1, Hm1)});
        ns[ti] = t.concat_cols({t.zeros(n, 1), t.slice_cols(d0.stock, ti * Hm1, Hm1)});
        nho[ti] = t.concat_cols({t.zeros(n, 1), t.slice_cols(d0.housing, ti * Hm1, Hm1)});
    }

    const std::vector<double> zvals = t.value(z); // copy: node storage reallocates
    std::array<Var, 2> E_bond{}, E_stock{}, E_housing{};
    for (int k = 0; k < rule_.order; ++k) {
        Mat zk(n, 1);
        for (int r = 0; r < n; ++r)
            zk(r, 0) = std::exp(cfg_.rho * std::log(zvals[r]) + cfg_.sigma * rule_.nodes[k]);
        const Var zkv = t.constant(zk);
        std::array<Var, 2> aux;
        for (int ti = 0; ti < 2; ++ti)
            aux[ti] = t.mul(ns[ti], t.bcast_col(t.mul_scalar(zkv, cfg_.d), H));
        const Var Xk = t.concat_cols(
            {zkv, nb[0], nb[1], ns[0], ns[1], nho[0], nho[1], aux[0], aux[1]});
        const Dec dk = decode(Xk);
        const Var ones = t.constant(Mat(n, 1, 1.0));
        const Var base_s = t.add(dk.ps, t.mul_scalar(zkv, cfg_.d));
        const Var base_o = t.add(dk.po, dk.pr);
        for (int ti = 0; ti < 2; ++ti) {
            const TypeVals tvk = consume(dk, zkv, nb[ti], ns[ti], nho[ti], ti);
            const Var mu_next = t.pow_scalar(tvk.cg, -gammas[ti]);
            const Var pay_b = t.concat_cols(
                {t.add_scalar(t.mul_scalar(t.mul(t.bcast_col(dk.pb, Hm1), tvk.delta_b),
                                           cfg_.zeta_b),
                              1.0),
                 ones});
            const Var pay_s =
                t.add(t.bcast_col(base_s, H),
                      t.concat_cols({t.mul_scalar(t.mul(t.bcast_col(dk.ps, Hm1), tvk.delta_s),
                                                  cfg_.zeta_s),
                                     t.zeros(n, 1)}));
            const Var pay_o =
                t.add(t.bcast_col(base_o, H),
                      t.concat_cols({t.mul_scalar(t.mul(t.bcast_col(dk.po, Hm1), tvk.delta_o),
                                                  cfg_.zeta_h),
                                     t.zeros(n, 1)}));
            const double w = rule_.weights[k];
            const Var gb = t.mul_scalar(t.slice_cols(t.mul(mu_next, pay_b), 1, Hm1), w);
            const Var gs = t.mul_scalar(t.slice_cols(t.mul(mu_next, pay_s), 1, Hm1), w);
            const Var go = t.mul_scalar(t.slice_cols(t.mul(mu_next, pay_o), 1, Hm1), w);
            E_bond[ti] = k == 0 ? gb : t.add(E_bond[ti], gb);
            E_stock[ti] = k == 0 ? gs : t.add(E_stock[ti], gs);
            E_housing[ti] = k == 0 ? go : t.add(E_housing[ti], go);
        }
    }

    auto asset_residual = [&](Var expectation, Var price, Var delta_f, Var pol_block, int ti,
                              double zeta, double lb, Var* fb_x_out) {
        const Var den = t.mul(t.bcast_col(price, Hm1),
                              t.add_scalar(t.mul_scalar(delta_f, zeta), 1.0));
        const Var arg = t.max_scalar(t.div(t.mul_scalar(expectation, cfg_.beta), den),
                                     kInverseMarginalGuard);
        const Var lhs = t.pow_scalar(arg, -1.0 / gammas[ti]);
        const Var ratio = t.div(lhs, tv0[ti].cg_f);
        const Var fb_x = t.add_scalar(ratio, -1.0);
        const Var pol = t.slice_cols(pol_block, ti * Hm1, Hm1);
        const Var fb_y = t.div(t.add_scalar(pol, -lb), tv0[ti].cg_f);
        if (fb_x_out) *fb_x_out = fb_x;
        return t.fischer_burmeister(fb_x, fb_y);
    };

    std::array<Var, 2> err_b, err_s, err_o, err_r, fbx_b, fbx_s, fbx_o;
    for (int ti = 0; ti < 2; ++ti) {
        err_b[ti] = asset_residual(E_bond[ti], d0.pb, tv0[ti].delta_b, d0.bond, ti, cfg_.zeta_b,
                                   cfg_.b_lb, &fbx_b[ti]);
        err_s[ti] = asset_residual(E_stock[ti], d0.ps, tv0[ti].delta_s, d0.stock, ti, cfg_.zeta_s,
                                   cfg_.s_lb, &fbx_s[ti]);
        err_o[ti] = asset_residual(E_housing[ti], d0.po, tv0[ti].delta_o, d0.housing, ti,
                                   cfg_.zeta_h, cfg_.ho_lb, &fbx_o[ti]);
        const Var hr = t.slice_cols(d0.rent, ti * H, H);
        const Var base = t.max_scalar(t.add_scalar(hr, cfg_.h_floor), kInverseMarginalGuard);
        const Var vprime = t.mul(t.pow_scalar(base, -gammas[ti]), t.bcast_row(psi_row, n));
        const Var xr = t.max_scalar(t.div(vprime, t.bcast_col(d0.pr, H)), kInverseMarginalGuard);
        err_r[ti] =
            t.add_scalar(t.div(t.pow_scalar(xr, -1.0 / gammas[ti]), tv0[ti].cg), -1.0);
    }

    const double na = double(n) * Hm1;
    const double nr = double(n) * H;
    auto mse2 = [&](const std::array<Var, 2>& e, double denct) {
        return t.mul_scalar(t.add(t.sum_all(t.square(e[0])), t.sum_all(t.square(e[1]))),
                            1.0 / denct);
    };
    Var loss = t.mul_scalar(mse2(err_b, na), cfg_.w_b);
    loss = t.add(loss, t.mul_scalar(mse2(err_s, na), cfg_.w_s));
    loss = t.add(loss, t.mul_scalar(mse2(err_o, na), cfg_.w_o));
    loss = t.add(loss, t.mul_scalar(mse2(err_r, nr), cfg_.w_r));

    if (mode_ == Mode::Solver) {
        // liftoff terms carry the same per-asset loss weights
        auto liftoff = [&](Var raw, Var pol_block, const std::array<Var, 2>& fbx, double mask,
                           double lb, double w) {
            if (w == 0.0) return;
            std::array<Var, 2> lifts;
            for (int ti = 0; ti < 2; ++ti) {
                const Var braw = t.mul_scalar(t.slice_cols(raw, ti * Hm1, Hm1), mask);
                const Var pol = t.slice_cols(pol_block, ti * Hm1, Hm1);
                const Var inv = t.pow_scalar(t.add_scalar(braw, 1.0), -1.0);
                const Var gate = t.exp(t.mul_scalar(t.square(t.add_scalar(pol, -lb)), -1e5));
                const Var want = t.max_scalar(t.neg(fbx[ti]), 0.0);
                lifts[ti] = t.mul(t.mul(inv, gate), want);
            }
            loss = t.add(loss, t.mul_scalar(mse2(lifts, na), w));
        };
        liftoff(d0.braw, d0.bond, fbx_b, cfg_.m_b, cfg_.b_lb, cfg_.w_b);
        liftoff(d0.sraw, d0.stock, fbx_s, cfg_.m_s, cfg_.s_lb, cfg_.w_s);
        liftoff(d0.oraw, d0.housing, fbx_o, cfg_.m_o, cfg_.ho_lb, cfg_.w_o);
    }

    loss = t.mul_scalar(loss, 0.5);

    for (int ti = 0; ti < 2; ++ti) {
        const Var shortfall =
            t.max_scalar(t.add_scalar(t.neg(tv0[ti].c), kConsumptionFloor), 0.0);
        loss = t.add(loss, t.mul_scalar(t.sum_all(t.square(shortfall)),
                                        kConsumptionPenaltyWeight / double(n)));
    }

    if (parts) {
        for (int ti = 0; ti < 2; ++ti) {
            parts->err_bond[ti] = err_b[ti];
            parts->err_stock[ti] = err_s[ti];
            parts->err_housing[ti] = err_o[ti];
            parts->err_rent[ti] = err_r[ti];
            parts->c[ti] = tv0[ti].c;
            parts->bond_pol[ti] = t.slice_cols(d0.bond, ti * Hm1, Hm1);
            parts->stock_pol[ti] = t.slice_cols(d0.stock, ti * Hm1, Hm1);
            parts->housing_pol[ti] = t.slice_cols(d0.housing, ti * Hm1, Hm1);
            parts->rent_pol[ti] = t.slice_cols(d0.rent, ti * H, H);
        }
        parts->p_b = d0.pb;
        parts->p_s = d0.ps;
        parts->p_o = d0.po;
        parts->p_r = d0.pr;
    }
    return loss;
}

Var MultiModel::build_loss(Tape& tape, const nn::TapeNet& net, Var states) const {
    return build_loss_parts(tape, net, states, nullptr);
}

std::vector<ValueBlock> MultiModel::residuals(const nn::Mlp& mlp, const Mat& states) const {
    Tape t;
    const nn::TapeNet net = nn::make_tape_net(t, mlp);
    LossParts parts;
    build_loss_parts(t, net, t.constant(states), &parts);
    std::vector<ValueBlock> out;
    for (int ti = 0; ti < 2; ++ti) {
        out.push_back({"bond", ti + 1, t.value_mat(parts.err_bond[ti])});
        out.push_back({"stock", ti + 1, t.value_mat(parts.err_stock[ti])});
        out.push_back({"housing", ti + 1, t.value_mat(parts.err_housing[ti])});
        out.push_back({"rent", ti + 1, t.value_mat(parts.err_rent[ti])});
    }
    return out;
}

std::vector<ValueBlock> MultiModel::profiles(const nn::Mlp& mlp, const Mat& states) const {
    Tape t;
    const nn::TapeNet net = nn::make_tape_net(t, mlp);
    LossParts parts;
    build_loss_parts(t, net, t.constant(states), &parts);
    const int n = states.rows;
    std::vector<ValueBlock> out;
    auto padded = [&](Var v) {
        Mat m(n, cfg_.H, 0.0);
        const Mat src = t.value_mat(v);
        for (int r = 0; r < n; ++r)
            for (int h = 0; h < cfg_.H - 1; ++h) m(r, h) = src(r, h);
        return m;
    };
    for (int ti = 0; ti < 2; ++ti) {
        out.push_back({"bond", ti + 1, padded(parts.bond_pol[ti])});
        out.push_back({"stock", ti + 1, padded(parts.stock_pol[ti])});
        out.push_back({"housing", ti + 1, padded(parts.housing_pol[ti])});
        out.push_back({"rent", ti + 1, t.value_mat(parts.rent_pol[ti])});
        out.push_back({"consumption", ti + 1, t.value_mat(parts.c[ti])});
    }
    return out;
}

double MultiModel::state_clearing_error(const Mat& states) const {
    const int H = cfg_.H;
    const Offsets off = state_offsets(H);
    double worst = 0.0;
    const double mus[2] = {cfg_.mu1, cfg_.mu2};
    for (int r = 0; r < states.rows; ++r) {
        const double* row = states.row_ptr(r);
        double sb = 0.0, ss = 0.0, so = 0.0;
        for (int ti = 0; ti < 2; ++ti) {
            worst = std::max({worst, std::fabs(row[off.bond + ti * H]),
                              std::fabs(row[off.stock + ti * H]),
                              std::fabs(row[off.housing + ti * H])});
            for (int h = 0; h < H; ++h) {
                sb += mus[ti] * row[off.bond + ti * H + h];
                ss += mus[ti] * row[off.stock + ti * H + h];
                so += mus[ti] * row[off.housing + ti * H + h];
                worst = std::max(worst, std::fabs(row[off.aux + ti * H + h] -
                                                  row[off.stock + ti * H + h] * cfg_.d * row[0]));
            }
        }
        worst = std::max({worst, std::fabs(sb - cfg_.B), std::fabs(ss - cfg_.S),
                          std::fabs(so - cfg_.Ho)});
    }
    return worst;
}

} // namespace mcl
