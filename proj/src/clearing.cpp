#include "mcl/clearing.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iostream>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <string>

namespace mcl::clearing {

namespace {

std::atomic<long> g_all_clamped{0};
std::once_flag g_all_clamped_notice;

void validate(const ClearingProblem& p) {
    if (p.mu.size() != p.b_tilde.size())
        throw std::invalid_argument("clearing: mu and b_tilde length mismatch");
    if (p.mu.empty()) throw std::invalid_argument("clearing: empty problem");
    for (double m : p.mu)
        if (!(m > 0.0)) throw std::invalid_argument("clearing: population weights must be > 0");
    if (p.lower_bounds) {
        if (p.lower_bounds->size() != p.mu.size())
            throw std::invalid_argument("clearing: lower_bounds length mismatch");
        double need = 0.0;
        for (size_t i = 0; i < p.mu.size(); ++i) need += p.mu[i] * (*p.lower_bounds)[i];
        if (need > p.supply + 1e-12 * std::max(1.0, std::fabs(p.supply)))
            throw std::invalid_argument(
                "clearing: infeasible bounds, sum(mu*lb) = " + std::to_string(need) +
                " exceeds supply = " + std::to_string(p.supply));
    }
}

} // namespace

void simple_adjust_row(std::span<const double> mu, double mu_sum, std::span<const double> b_tilde,
                       double supply, std::span<double> out) {
    double demand = 0.0;
    for (size_t i = 0; i < mu.size(); ++i) demand += mu[i] * b_tilde[i];
    const double shift = (demand - supply) / mu_sum;
    for (size_t i = 0; i < mu.size(); ++i) out[i] = b_tilde[i] - shift;
}

double project_row(std::span<const double> mu, std::span<const double> b_tilde, double supply,
                   std::span<const double> lb, std::span<double> out, std::span<uint8_t> active,
                   double* free_mass, RowWorkspace& ws, bool bisection, double tol, int max_iter) {
    const size_t H = mu.size();
    ws.breakpoints.resize(H);
    for (size_t i = 0; i < H; ++i) ws.breakpoints[i] = lb[i] - b_tilde[i];

    double lambda = 0.0;
    if (!bisection) {
        // Sorted sweep over breakpoints t_i = lb_i - b~_i: for lambda in
        // [t_(j), t_(j+1)) exactly the j smallest-t agents are free.
        ws.order.resize(H);
        std::iota(ws.order.begin(), ws.order.end(), 0);
        std::sort(ws.order.begin(), ws.order.end(),
                  [&](int a, int b) { return ws.breakpoints[a] < ws.breakpoints[b]; });

        double clamped_supply = 0.0; // sum mu*lb over clamped agents
        for (size_t i = 0; i < H; ++i) clamped_supply += mu[i] * lb[i];
        double free_demand = 0.0; // sum mu*b~ over free agents
        double M = 0.0;

        bool found = false;
        for (size_t j = 0; j < H; ++j) {
            const int idx = ws.order[j];
            clamped_supply -= mu[idx] * lb[idx];
            free_demand += mu[idx] * b_tilde[idx];
            M += mu[idx];
            const double cand = (supply - clamped_supply - free_demand) / M;
            const double seg_lo = ws.breakpoints[idx];
            const double seg_hi =
                (j + 1 < H) ? ws.breakpoints[ws.order[j + 1]] : std::numeric_limits<double>::infinity();
            if (cand >= seg_lo && cand <= seg_hi) {
                lambda = cand;
                found = true;
                break;
            }
        }
        if (!found) {
            // Only reachable when sum(mu*lb) == supply up to rounding: everyone
            // sits on the bound and lambda is any value below the lowest breakpoint.
            lambda = ws.breakpoints[ws.order[0]];
        }
    } else {
        // The monotone map s(lambda) = sum mu_i max(b~_i + lambda, lb_i) - supply
        // has s <= 0 at min_t and s >= 0 at the unconstrained shift -dB/M.
        double mu_sum = 0.0, demand = 0.0, min_t = ws.breakpoints[0];
        for (size_t i = 0; i < H; ++i) {
            mu_sum += mu[i];
            demand += mu[i] * b_tilde[i];
            min_t = std::min(min_t, ws.breakpoints[i]);
        }
        const double lambda_free = (supply - demand) / mu_sum;
        double lo = std::min(min_t, lambda_free);
        double hi = std::max(min_t, lambda_free);
        auto excess = [&](double l) {
            double s = -supply;
            for (size_t i = 0; i < H; ++i) s += mu[i] * std::max(b_tilde[i] + l, lb[i]);
            return s;
        };
        for (int it = 0; it < max_iter && hi - lo > tol; ++it) {
            const double mid = 0.5 * (lo + hi);
            if (excess(mid) < 0.0)
                lo = mid;
            else
                hi = mid;
        }
        lambda = 0.5 * (lo + hi);
    }

    // Fix the active set implied by lambda, then re-solve the shift exactly on
    // it so the clearing identity holds to rounding.
    double M = 0.0, rem = supply;
    for (size_t i = 0; i < H; ++i) {
        if (b_tilde[i] + lambda < lb[i]) {
            active[i] = 1;
            rem -= mu[i] * lb[i];
        } else {
            active[i] = 0;
            M += mu[i];
            rem -= mu[i] * b_tilde[i];
        }
    }
    if (M > 0.0) lambda = rem / M;
    *free_mass = M;
    for (size_t i = 0; i < H; ++i) out[i] = active[i] ? lb[i] : b_tilde[i] + lambda;
    return lambda;
}

std::vector<double> simple_adjust(const ClearingProblem& p) {
    validate(p);
    const double mu_sum = std::accumulate(p.mu.begin(), p.mu.end(), 0.0);
    std::vector<double> out(p.mu.size());
    simple_adjust_row(p.mu, mu_sum, p.b_tilde, p.supply, out);
    return out;
}

namespace {
ProjectionResult project_impl(const ClearingProblem& p, bool bisection, double tol, int max_iter) {
    validate(p);
    if (!p.lower_bounds)
        throw std::invalid_argument("project_with_bounds: lower_bounds required");
    const size_t H = p.mu.size();
    ProjectionResult r;
    r.b.resize(H);
    std::vector<uint8_t> active(H, 0);
    double free_mass = 0.0;
    RowWorkspace ws;
    r.lambda = project_row(p.mu, p.b_tilde, p.supply, *p.lower_bounds, r.b, active, &free_mass, ws,
                           bisection, tol, max_iter);
    for (size_t i = 0; i < H; ++i)
        if (active[i]) r.active_set.push_back(static_cast<int>(i));
    return r;
}
} // namespace

ProjectionResult project_with_bounds(const ClearingProblem& p) {
    return project_impl(p, false, 0.0, 0);
}

ProjectionResult project_with_bounds_bisection(const ClearingProblem& p, double tol, int max_iter) {
    return project_impl(p, true, tol, max_iter);
}

std::vector<double> project_backward(std::span<const double> mu, std::span<const int> active_set,
                                     std::span<const double> upstream) {
    const size_t H = mu.size();
    std::vector<uint8_t> active(H, 0);
    for (int i : active_set) active[i] = 1;
    double M = 0.0, gsum = 0.0;
    for (size_t i = 0; i < H; ++i) {
        if (!active[i]) {
            M += mu[i];
            gsum += upstream[i];
        }
    }
    std::vector<double> g(H, 0.0);
    if (M == 0.0) {
        if (g_all_clamped.fetch_add(1) == 0)
            std::call_once(g_all_clamped_notice, [] {
                std::cerr << "[clearing] all agents clamped; projection gradient set to zero\n";
            });
        return g;
    }
    for (size_t i = 0; i < H; ++i)
        if (!active[i]) g[i] = upstream[i] - mu[i] * gsum / M;
    return g;
}

std::vector<double> simple_adjust_backward(std::span<const double> mu,
                                           std::span<const double> upstream) {
    return project_backward(mu, {}, upstream);
}

double liftoff_residual(double b_tilde, double b, double lb, double euler_lhs,
                        double consumption) {
    const double ratio = euler_lhs / consumption;
    const double slack = b - lb;
    const double gate = std::exp(-(slack * slack) / 1e-5);
    const double want = std::max(-(ratio - 1.0), 0.0);
    return (1.0 / (1.0 + b_tilde)) * gate * want;
}

long all_clamped_backward_count() { return g_all_clamped.load(); }

} // namespace mcl::clearing
