#pragma once

#include <vector>

namespace mcl {

// Gauss-Hermite rule transformed for a standard normal variate:
// E[f(eps)] ~= sum_k weights[k] * f(nodes[k]).
struct QuadratureRule {
    std::vector<double> nodes;
    std::vector<double> weights;
    int order = 0;
};

// Nodes/weights from the Golub-Welsch symmetric tridiagonal eigenproblem,
// then mapped by eps = sqrt(2) t, w = w_hat / sqrt(pi). Nodes are exactly
// symmetric about zero and weights sum to one.
QuadratureRule gauss_hermite(int order);

// z'_k = exp(rho ln z + sigma eps_k) for each node of the rule.
std::vector<double> next_shocks(double z, const QuadratureRule& rule, double rho, double sigma);

} // namespace mcl
