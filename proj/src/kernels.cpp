#include "kedit/kernels.hpp"

#include <atomic>

#include <omp.h>

namespace kedit::kernels {

namespace {
std::atomic<Backend> g_backend{Backend::openmp};

// Below this many multiply-adds the fork/join costs more than it saves.
constexpr std::size_t kParallelWork = 1u << 15;
}  // namespace

Backend default_backend() { return g_backend.load(); }
void set_default_backend(Backend b) { g_backend.store(b); }
void set_threads(int n) {
    if (n > 0) omp_set_num_threads(n);
}
int max_threads() { return omp_get_max_threads(); }

template <class T>
static inline T dot_nt(const T* a, const T* b, std::size_t k) {
    T s = 0;
    for (std::size_t p = 0; p < k; ++p) s += a[p] * b[p];
    return s;
}

template <class T>
void matmul_nt(const T* A, const T* B, T* C, std::size_t m, std::size_t k, std::size_t n,
               Backend b) {
    const long long total = static_cast<long long>(m * n);
    if (b == Backend::openmp && m * n * k >= kParallelWork) {
#pragma omp parallel for schedule(static)
        for (long long idx = 0; idx < total; ++idx) {
            std::size_t i = static_cast<std::size_t>(idx) / n, j = static_cast<std::size_t>(idx) % n;
            C[i * n + j] = dot_nt(A + i * k, B + j * k, k);
        }
        return;
    }
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) C[i * n + j] = dot_nt(A + i * k, B + j * k, k);
}

template <class T>
static inline void row_nn(const T* a, const T* B, T* c, std::size_t k, std::size_t n) {
    for (std::size_t j = 0; j < n; ++j) c[j] = 0;
    for (std::size_t p = 0; p < k; ++p) {
        const T av = a[p];
        const T* brow = B + p * n;
        for (std::size_t j = 0; j < n; ++j) c[j] += av * brow[j];
    }
}

template <class T>
void matmul_nn(const T* A, const T* B, T* C, std::size_t m, std::size_t k, std::size_t n,
               Backend b) {
    if (b == Backend::openmp && m * n * k >= kParallelWork && m > 1) {
#pragma omp parallel for schedule(static)
        for (long long i = 0; i < static_cast<long long>(m); ++i)
            row_nn(A + i * k, B, C + i * n, k, n);
        return;
    }
    for (std::size_t i = 0; i < m; ++i) row_nn(A + i * k, B, C + i * n, k, n);
}

template <class T>
static inline void row_tn(const T* A, const T* B, T* c, std::size_t i, std::size_t m,
                          std::size_t k, std::size_t n) {
    for (std::size_t j = 0; j < n; ++j) c[j] = 0;
    for (std::size_t p = 0; p < k; ++p) {
        const T av = A[p * m + i];
        const T* brow = B + p * n;
        for (std::size_t j = 0; j < n; ++j) c[j] += av * brow[j];
    }
}

template <class T>
void matmul_tn(const T* A, const T* B, T* C, std::size_t m, std::size_t k, std::size_t n,
               Backend b) {
    if (b == Backend::openmp && m * n * k >= kParallelWork && m > 1) {
#pragma omp parallel for schedule(static)
        for (long long i = 0; i < static_cast<long long>(m); ++i)
            row_tn(A, B, C + i * n, static_cast<std::size_t>(i), m, k, n);
        return;
    }
    for (std::size_t i = 0; i < m; ++i) row_tn(A, B, C + i * n, i, m, k, n);
}

template <class T>
static inline void gram_row(const T* X, std::size_t rows, std::size_t n, T* G, std::size_t i) {
    T* g = G + i * n;
    for (std::size_t r = 0; r < rows; ++r) {
        const T* x = X + r * n;
        const T xi = x[i];
        if (xi == T(0)) continue;
        for (std::size_t j = 0; j < n; ++j) g[j] += xi * x[j];
    }
}

template <class T>
void gram_accumulate(const T* X, std::size_t rows, std::size_t n, T* G, Backend b) {
    if (b == Backend::openmp && rows * n * n >= kParallelWork) {
#pragma omp parallel for schedule(static)
        for (long long i = 0; i < static_cast<long long>(n); ++i)
            gram_row(X, rows, n, G, static_cast<std::size_t>(i));
        return;
    }
    for (std::size_t i = 0; i < n; ++i) gram_row(X, rows, n, G, i);
}

#define KEDIT_KERNELS(T)                                                                        \
    template void matmul_nt<T>(const T*, const T*, T*, std::size_t, std::size_t, std::size_t,   \
                               Backend);                                                        \
    template void matmul_nn<T>(const T*, const T*, T*, std::size_t, std::size_t, std::size_t,   \
                               Backend);                                                        \
    template void matmul_tn<T>(const T*, const T*, T*, std::size_t, std::size_t, std::size_t,   \
                               Backend);                                                        \
    template void gram_accumulate<T>(const T*, std::size_t, std::size_t, T*, Backend);

KEDIT_KERNELS(float)
KEDIT_KERNELS(double)

}  // namespace kedit::kernels
