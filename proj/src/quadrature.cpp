#include "mcl/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace mcl {

namespace {

// Eigenvalues and first eigenvector components of a symmetric tridiagonal
// matrix (diag d, off-diag e), QL with implicit shifts. z must come in as the
// first row of the identity; on return z[k] is the first component of the
// k-th eigenvector.
void tql_first_row(std::vector<double>& d, std::vector<double>& e, std::vector<double>& z) {
    const int n = static_cast<int>(d.size());
    if (n == 1) return;
    for (int i = 1; i < n; ++i) e[i - 1] = e[i];
    e[n - 1] = 0.0;
    for (int l = 0; l < n; ++l) {
        int iter = 0;
        int m;
        do {
            for (m = l; m < n - 1; ++m) {
                const double dd = std::fabs(d[m]) + std::fabs(d[m + 1]);
                if (std::fabs(e[m]) <= 1e-300 + 2.3e-16 * dd) break;
            }
            if (m != l) {
                if (iter++ == 50) throw std::runtime_error("gauss_hermite: eigensolver stalled");
                double g = (d[l + 1] - d[l]) / (2.0 * e[l]);
                double r = std::hypot(g, 1.0);
                g = d[m] - d[l] + e[l] / (g + std::copysign(r, g));
                double s = 1.0, c = 1.0, p = 0.0;
                bool underflow = false;
                for (int i = m - 1; i >= l; --i) {
                    double f = s * e[i];
                    const double b = c * e[i];
                    r = std::hypot(f, g);
                    e[i + 1] = r;
                    if (r == 0.0) {
                        d[i + 1] -= p;
                        e[m] = 0.0;
                        underflow = true;
                        break;
                    }
                    s = f / r;
                    c = g / r;
                    g = d[i + 1] - p;
                    r = (d[i] - g) * s + 2.0 * c * b;
                    p = s * r;
                    d[i + 1] = g + p;
                    g = c * r - b;
                    f = z[i + 1];
                    z[i + 1] = s * z[i] + c * f;
                    z[i] = c * z[i] - s * f;
                }
                if (underflow) continue;
                d[l] -= p;
                e[l] = g;
                e[m] = 0.0;
            }
        } while (m != l);
    }
}

} // namespace

QuadratureRule gauss_hermite(int order) {
    if (order < 1 || order > 64)
        throw std::invalid_argument("gauss_hermite: order must be in [1,64], got " +
                                    std::to_string(order));
    QuadratureRule rule;
    rule.order = order;
    if (order == 1) {
        rule.nodes = {0.0};
        rule.weights = {1.0};
        return rule;
    }

    // Jacobi matrix for physicists' Hermite: diag 0, off-diag sqrt(k/2).
    std::vector<double> d(order, 0.0), e(order, 0.0), z(order, 0.0);
    for (int k = 1; k < order; ++k) e[k] = std::sqrt(k / 2.0);
    z[0] = 1.0;
    // tql expects e shifted; pass e with e[0] unused convention handled inside
    {
        std::vector<double> esub(order, 0.0);
        for (int k = 1; k < order; ++k) esub[k] = e[k];
        tql_first_row(d, esub, z);
    }

    std::vector<int> idx(order);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) { return d[a] < d[b]; });

    rule.nodes.resize(order);
    rule.weights.resize(order);
    for (int k = 0; k < order; ++k) {
        rule.nodes[k] = std::sqrt(2.0) * d[idx[k]];
        rule.weights[k] = z[idx[k]] * z[idx[k]]; // w_hat/sqrt(pi) since sum z^2 = 1
    }

    // Symmetrize pairs so nodes are exact mirrors and odd moments vanish by
    // construction; renormalize the weight sum to one.
    for (int k = 0; k < order / 2; ++k) {
        const int j = order - 1 - k;
        const double t = 0.5 * (rule.nodes[j] - rule.nodes[k]);
        rule.nodes[k] = -t;
        rule.nodes[j] = t;
        const double w = 0.5 * (rule.weights[k] + rule.weights[j]);
        rule.weights[k] = rule.weights[j] = w;
    }
    if (order % 2 == 1) rule.nodes[order / 2] = 0.0;
    const double wsum = std::accumulate(rule.weights.begin(), rule.weights.end(), 0.0);
    for (double& w : rule.weights) w /= wsum;
    return rule;
}

std::vector<double> next_shocks(double z, const QuadratureRule& rule, double rho, double sigma) {
    if (!(z > 0.0)) throw std::invalid_argument("next_shocks: z must be > 0");
    const double lz = std::log(z);
    std::vector<double> out(rule.nodes.size());
    for (size_t k = 0; k < rule.nodes.size(); ++k)
        out[k] = std::exp(rho * lz + sigma * rule.nodes[k]);
    return out;
}

} // namespace mcl
