#pragma once

#include <cstddef>

namespace kedit::kernels {

enum class Backend { serial, openmp };

// Process-wide default. The OpenMP path partitions output entries only, so
// both backends perform identical arithmetic per entry and agree bitwise.
Backend default_backend();
void set_default_backend(Backend b);
void set_threads(int n);
int max_threads();

// All matrices are dense row-major. Outputs are overwritten.

// C[m x n] = A[m x k] * B[n x k]^T
template <class T>
void matmul_nt(const T* A, const T* B, T* C, std::size_t m, std::size_t k, std::size_t n,
               Backend b = default_backend());

// C[m x n] = A[m x k] * B[k x n]
template <class T>
void matmul_nn(const T* A, const T* B, T* C, std::size_t m, std::size_t k, std::size_t n,
               Backend b = default_backend());

// C[m x n] = A[k x m]^T * B[k x n]
template <class T>
void matmul_tn(const T* A, const T* B, T* C, std::size_t m, std::size_t k, std::size_t n,
               Backend b = default_backend());

// G[n x n] += X[rows x n]^T X, summing rows in index order.
template <class T>
void gram_accumulate(const T* X, std::size_t rows, std::size_t n, T* G,
                     Backend b = default_backend());

}  // namespace kedit::kernels
