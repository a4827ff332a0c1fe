#include "mcl/kernels.hpp"

#include <atomic>
#include <cstring>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mcl::kernels {

namespace {
std::atomic<int> g_threads{0}; // 0 = hardware default

int effective_threads() {
#ifdef _OPENMP
    const int n = g_threads.load(std::memory_order_relaxed);
    return n > 0 ? n : omp_get_max_threads();
#else
    return 1;
#endif
}

// Work is parallelized over output rows only; every C element is written by a
// single thread with k-ascending accumulation, identical to the ref loops.
constexpr long kParallelFlopCutoff = 64 * 1024;
} // namespace

void set_threads(int n) { g_threads.store(n < 0 ? 0 : n, std::memory_order_relaxed); }

int threads() { return effective_threads(); }

namespace ref {

void matmul_nn(const double* A, const double* B, double* C, int m, int k, int n, bool accumulate) {
    for (int i = 0; i < m; ++i) {
        double* Ci = C + static_cast<size_t>(i) * n;
        if (!accumulate)
            for (int j = 0; j < n; ++j) Ci[j] = 0.0;
        const double* Ai = A + static_cast<size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const double a = Ai[p];
            const double* Bp = B + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) Ci[j] += a * Bp[j];
        }
    }
}

void matmul_nt(const double* A, const double* B, double* C, int m, int k, int n, bool accumulate) {
    for (int i = 0; i < m; ++i) {
        const double* Ai = A + static_cast<size_t>(i) * k;
        double* Ci = C + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* Bj = B + static_cast<size_t>(j) * k;
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += Ai[p] * Bj[p];
            if (accumulate)
                Ci[j] += acc;
            else
                Ci[j] = acc;
        }
    }
}

void matmul_tn(const double* A, const double* B, double* C, int m, int k, int n, bool accumulate) {
    for (int i = 0; i < m; ++i) {
        double* Ci = C + static_cast<size_t>(i) * n;
        if (!accumulate)
            for (int j = 0; j < n; ++j) Ci[j] = 0.0;
        for (int p = 0; p < k; ++p) {
            const double a = A[static_cast<size_t>(p) * m + i];
            const double* Bp = B + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) Ci[j] += a * Bp[j];
        }
    }
}

} // namespace ref

void matmul_nn(const double* A, const double* B, double* C, int m, int k, int n, bool accumulate) {
    const long flops = 2L * m * k * n;
    const int nt = effective_threads();
    if (nt <= 1 || flops < kParallelFlopCutoff || m < 2) {
        ref::matmul_nn(A, B, C, m, k, n, accumulate);
        return;
    }
#pragma omp parallel for schedule(static) num_threads(nt)
    for (int i = 0; i < m; ++i)
        ref::matmul_nn(A + static_cast<size_t>(i) * k, B, C + static_cast<size_t>(i) * n, 1, k, n, accumulate);
}

void matmul_nt(const double* A, const double* B, double* C, int m, int k, int n, bool accumulate) {
    const long flops = 2L * m * k * n;
    const int nt = effective_threads();
    if (nt <= 1 || flops < kParallelFlopCutoff || m < 2) {
        ref::matmul_nt(A, B, C, m, k, n, accumulate);
        return;
    }
#pragma omp parallel for schedule(static) num_threads(nt)
    for (int i = 0; i < m; ++i)
        ref::matmul_nt(A + static_cast<size_t>(i) * k, B, C + static_cast<size_t>(i) * n, 1, k, n, accumulate);
}

void matmul_tn(const double* A, const double* B, double* C, int m, int k, int n, bool accumulate) {
    const long flops = 2L * m * k * n;
    const int nt = effective_threads();
    if (nt <= 1 || flops < kParallelFlopCutoff || m < 2) {
        ref::matmul_tn(A, B, C, m, k, n, accumulate);
        return;
    }
    // Parallel over output rows i (columns of A); strided reads, single writer per row.
#pragma omp parallel for schedule(static) num_threads(nt)
    for (int i = 0; i < m; ++i) {
        double* Ci = C + static_cast<size_t>(i) * n;
        if (!accumulate)
            for (int j = 0; j < n; ++j) Ci[j] = 0.0;
        for (int p = 0; p < k; ++p) {
            const double a = A[static_cast<size_t>(p) * m + i];
            const double* Bp = B + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) Ci[j] += a * Bp[j];
        }
    }
}

} // namespace mcl::kernels
