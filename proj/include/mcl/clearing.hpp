#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace mcl::clearing {

// One market: population weights mu_i > 0, pre-adjustment demands b~_i,
// aggregate supply, and optional per-agent lower bounds.
struct ClearingProblem {
    std::vector<double> mu;
    std::vector<double> b_tilde;
    double supply = 0.0;
    std::optional<std::vector<double>> lower_bounds;
};

struct ProjectionResult {
    std::vector<double> b;
    double lambda = 0.0;
    std::vector<int> active_set; // indices clamped to their bound, ascending
};

// Closed-form equal-shift adjustment: b_i = b~_i - dB / sum(mu). Reduces to
// b_i = b~_i - dB at unit total mass.
std::vector<double> simple_adjust(const ClearingProblem& p);

// Exact minimizer of 1/2 sum mu_i (b_i - b~_i)^2 s.t. sum mu_i b_i = supply,
// b_i >= lb_i, via the sorted-breakpoint sweep (default) or bisection on the
// shift lambda. Both re-solve lambda exactly on the final active set.
ProjectionResult project_with_bounds(const ClearingProblem& p);
ProjectionResult project_with_bounds_bisection(const ClearingProblem& p, double tol = 1e-12,
                                               int max_iter = 200);

// Vector-Jacobian product of the projection with the active set held fixed:
// free coordinates share the shift, clamped rows/columns pass nothing.
// With all agents clamped the gradient is defined as zero.
std::vector<double> project_backward(std::span<const double> mu, std::span<const int> active_set,
                                     std::span<const double> upstream);

// simple_adjust is the empty-active-set case of the same rule.
std::vector<double> simple_adjust_backward(std::span<const double> mu,
                                           std::span<const double> upstream);

// Auxiliary loss term restoring gradient flow to agents the projection pinned
// to their bound even though their Euler condition says they should save more.
double liftoff_residual(double b_tilde, double b, double lb, double euler_lhs,
                        double consumption);

// Count of backward calls that hit the all-clamped (zero-gradient) case; a
// diagnostic is logged once per process when it first happens.
long all_clamped_backward_count();

// Row-wise helpers used by the tape ops (no allocation per call beyond `out`).
struct RowWorkspace {
    std::vector<double> breakpoints;
    std::vector<int> order;
};

void simple_adjust_row(std::span<const double> mu, double mu_sum, std::span<const double> b_tilde,
                       double supply, std::span<double> out);
// Returns lambda; fills out, marks active flags (1 = clamped) and the free mass.
double project_row(std::span<const double> mu, std::span<const double> b_tilde, double supply,
                   std::span<const double> lb, std::span<double> out, std::span<uint8_t> active,
                   double* free_mass, RowWorkspace& ws, bool bisection, double tol = 1e-12,
                   int max_iter = 200);

} // namespace mcl::clearing
