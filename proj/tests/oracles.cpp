#include "oracles.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace mcl::oracles {

std::vector<double> qp_oracle(const clearing::ClearingProblem& p) {
    const int H = static_cast<int>(p.mu.size());
    if (H > 12) throw std::invalid_argument("qp_oracle: H too large for enumeration");
    if (!p.lower_bounds) throw std::invalid_argument("qp_oracle: bounds required");
    const std::vector<double>& lb = *p.lower_bounds;

    double best_obj = std::numeric_limits<double>::infinity();
    std::vector<double> best;
    const double ftol = 1e-10;

    for (unsigned mask = 0; mask < (1u << H); ++mask) {
        // mask bit i set = agent i clamped to its bound
        double M = 0.0, rem = p.supply;
        for (int i = 0; i < H; ++i) {
            if (mask & (1u << i))
                rem -= p.mu[i] * lb[i];
            else {
                M += p.mu[i];
                rem -= p.mu[i] * p.b_tilde[i];
            }
        }
        std::vector<double> b(H);
        double lambda = 0.0;
        if (M > 0.0) {
            lambda = rem / M;
        } else if (std::fabs(rem) > ftol * std::max(1.0, std::fabs(p.supply))) {
            continue; // all clamped but the bounds don't add up to the supply
        }
        bool feasible = true;
        for (int i = 0; i < H; ++i) {
            if (mask & (1u << i)) {
                b[i] = lb[i];
                // stationarity multiplier nu_i = mu_i (lb_i - b~_i - lambda) >= 0
                if (lb[i] - p.b_tilde[i] - lambda < -1e-12) feasible = false;
            } else {
                b[i] = p.b_tilde[i] + lambda;
                if (b[i] < lb[i] - 1e-12) feasible = false;
            }
        }
        if (!feasible) continue;
        double obj = 0.0;
        for (int i = 0; i < H; ++i)
            obj += 0.5 * p.mu[i] * (b[i] - p.b_tilde[i]) * (b[i] - p.b_tilde[i]);
        if (obj < best_obj) {
            best_obj = obj;
            best = b;
        }
    }
    if (best.empty()) throw std::runtime_error("qp_oracle: no feasible active set found");
    return best;
}

std::vector<double> fd_gradient(const std::function<double(const std::vector<double>&)>& f,
                                std::vector<double> point, double step) {
    std::vector<double> g(point.size());
    for (size_t i = 0; i < point.size(); ++i) {
        const double orig = point[i];
        point[i] = orig + step;
        const double fp = f(point);
        point[i] = orig - step;
        const double fm = f(point);
        point[i] = orig;
        g[i] = (fp - fm) / (2.0 * step);
    }
    return g;
}

double gaussian_moment(int k) {
    if (k % 2 == 1) return 0.0;
    double v = 1.0;
    for (int i = k - 1; i > 1; i -= 2) v *= i; // (k-1)!!
    return v;
}

} // namespace mcl::oracles
