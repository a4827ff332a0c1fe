#pragma once

// Dense kernels backing the tape. Each kernel has an OpenMP-parallel version
// (the production path, honoring set_threads) and a plain serial reference in
// kernels::ref used by tests and the benchmark. Parallel versions assign each
// output element to exactly one thread and accumulate in the same order as the
// reference, so both paths produce bitwise-identical results.

namespace mcl::kernels {

void set_threads(int n); // n >= 1; 0 restores the hardware default
int threads();

// C[m x n] = A[m x k] * B[k x n]           (+= when accumulate)
void matmul_nn(const double* A, const double* B, double* C, int m, int k, int n, bool accumulate = false);
// C[m x n] = A[m x k] * B[n x k]^T
void matmul_nt(const double* A, const double* B, double* C, int m, int k, int n, bool accumulate = false);
// C[m x n] = A[k x m]^T * B[k x n]
void matmul_tn(const double* A, const double* B, double* C, int m, int k, int n, bool accumulate = false);

namespace ref {
void matmul_nn(const double* A, const double* B, double* C, int m, int k, int n, bool accumulate = false);
void matmul_nt(const double* A, const double* B, double* C, int m, int k, int n, bool accumulate = false);
void matmul_tn(const double* A, const double* B, double* C, int m, int k, int n, bool accumulate = false);
} // namespace ref

} // namespace mcl::kernels
