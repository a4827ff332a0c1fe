#pragma once

// Straight-line scalar implementation of the bond+rent two-type loss exactly
// as the multi-asset display nests it at weights (1,0,0,1) with stock and
// housing masked to zero: the half prefactor stays, the masked terms vanish.
// Used by tests only, as an independent route against the batched tape.

#include <array>
#include <cmath>
#include <vector>

#include "mcl/economy_multi.hpp"
#include "mcl/quadrature.hpp"

namespace mcl::test_reference {

inline double nested_two_type_loss(const MultiModel& model, const nn::Mlp& mlp,
                                   const Mat& states, const QuadratureRule& rule) {
    const MultiAssetConfig& cfg = model.config();
    const int H = cfg.H;
    const double gammas[2] = {cfg.gamma1, cfg.gamma2};
    const auto dec = model.decode_eval(mlp, states);

    double total = 0.0;
    for (int r = 0; r < states.rows; ++r) {
        const double z = states(r, 0);
        const double pb = dec.p_b(r, 0), pr = dec.p_r(r, 0);

        auto consume_row = [&](const double* bst, const double* pol, const double* hr, double zz,
                               double pbv, double prv) {
            std::vector<double> c(H);
            for (int h = 0; h < H; ++h) {
                double v = zz * cfg.y[h] + bst[h] - prv * hr[h];
                if (h < H - 1) {
                    const double delta = pol[h] - bst[h];
                    v -= pbv * pol[h] + pbv * cfg.zeta_b * 0.5 * delta * delta;
                }
                c[h] = v;
            }
            return c;
        };

        std::array<std::vector<double>, 2> c0, pol0, hr0, bst0;
        for (int ti = 0; ti < 2; ++ti) {
            bst0[ti].assign(states.row_ptr(r) + 1 + ti * H, states.row_ptr(r) + 1 + (ti + 1) * H);
            pol0[ti].resize(H - 1);
            for (int h = 0; h < H - 1; ++h) pol0[ti][h] = dec.bond(r, ti * (H - 1) + h);
            hr0[ti].resize(H);
            for (int h = 0; h < H; ++h) hr0[ti][h] = dec.rent(r, ti * H + h);
            c0[ti] = consume_row(bst0[ti].data(), pol0[ti].data(), hr0[ti].data(), z, pb, pr);
        }

        std::array<std::vector<double>, 2> E;
        E[0].assign(H - 1, 0.0);
        E[1].assign(H - 1, 0.0);
        for (int k = 0; k < rule.order; ++k) {
            const double zk = std::exp(cfg.rho * std::log(z) + cfg.sigma * rule.nodes[k]);
            Mat next(1, cfg.input_dim());
            next(0, 0) = zk;
            for (int ti = 0; ti < 2; ++ti)
                for (int h = 0; h < H - 1; ++h) next(0, 1 + ti * H + 1 + h) = pol0[ti][h];
            const auto dk = model.decode_eval(mlp, next);
            for (int ti = 0; ti < 2; ++ti) {
                std::vector<double> nbst(next.row_ptr(0) + 1 + ti * H,
                                         next.row_ptr(0) + 1 + (ti + 1) * H);
                std::vector<double> npol(H - 1), nhr(H);
                for (int h = 0; h < H - 1; ++h) npol[h] = dk.bond(0, ti * (H - 1) + h);
                for (int h = 0; h < H; ++h) nhr[h] = dk.rent(0, ti * H + h);
                const auto ck =
                    consume_row(nbst.data(), npol.data(), nhr.data(), zk, dk.p_b(0, 0), dk.p_r(0, 0));
                for (int h = 0; h < H - 1; ++h) {
                    const double cnext = std::max(ck[h + 1], kConsumptionFloor);
                    const double delta_next = h + 1 < H - 1 ? npol[h + 1] - pol0[ti][h] : 0.0;
                    const double payoff = 1.0 + dk.p_b(0, 0) * cfg.zeta_b * delta_next;
                    E[ti][h] += rule.weights[k] * std::pow(cnext, -gammas[ti]) * payoff;
                }
            }
        }

        double bond_sq = 0.0, rent_sq = 0.0;
        for (int ti = 0; ti < 2; ++ti) {
            for (int h = 0; h < H - 1; ++h) {
                const double cg = std::max(c0[ti][h], kConsumptionFloor);
                const double den = pb * (1.0 + cfg.zeta_b * (pol0[ti][h] - bst0[ti][h]));
                const double arg = std::max(cfg.beta * E[ti][h] / den, kInverseMarginalGuard);
                const double ratio = std::pow(arg, -1.0 / gammas[ti]) / cg;
                const double res = fischer_burmeister(ratio - 1.0, (pol0[ti][h] - cfg.b_lb) / cg);
                bond_sq += res * res;
            }
            for (int h = 0; h < H; ++h) {
                const double cg = std::max(c0[ti][h], kConsumptionFloor);
                const double base = std::max(cfg.h_floor + hr0[ti][h], kInverseMarginalGuard);
                const double arg =
                    std::max(cfg.psi[h] * std::pow(base, -gammas[ti]) / pr, kInverseMarginalGuard);
                const double res = std::pow(arg, -1.0 / gammas[ti]) / cg - 1.0;
                rent_sq += res * res;
            }
        }
        total += 0.5 * (bond_sq / (H - 1) + rent_sq / H);
    }
    return total / states.rows;
}

} // namespace mcl::test_reference
