#pragma once
// Row-major dense products shared by the conv and linear kernels. Backed by
// cblas when built with EMGDIS_USE_CBLAS, otherwise by small blocked loops.
// Both paths are single threaded and run-to-run deterministic.

#ifdef EMGDIS_USE_CBLAS
#include <cblas.h>
#endif

namespace emgdis::ad::detail {

#ifdef EMGDIS_USE_CBLAS

inline const bool kSingleThreadedBlas = [] {
    openblas_set_num_threads(1);
    return true;
}();

// C (m x n) = A (m x k) * B (n x k)^T + beta * C
inline void gemm_nt(int m, int n, int k, const float* a, const float* b, float* c, float beta) {
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, m, n, k, 1.0f, a, k, b, k, beta, c, n);
}
inline void gemm_nt(int m, int n, int k, const double* a, const double* b, double* c, double beta) {
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, m, n, k, 1.0, a, k, b, k, beta, c, n);
}

// C (m x n) = A (m x k) * B (k x n) + beta * C
inline void gemm_nn(int m, int n, int k, const float* a, const float* b, float* c, float beta) {
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, m, n, k, 1.0f, a, k, b, n, beta, c, n);
}
inline void gemm_nn(int m, int n, int k, const double* a, const double* b, double* c, double beta) {
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, m, n, k, 1.0, a, k, b, n, beta, c, n);
}

// C (m x n) = A (k x m)^T * B (k x n) + beta * C
inline void gemm_tn(int m, int n, int k, const float* a, const float* b, float* c, float beta) {
    cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, m, n, k, 1.0f, a, m, b, n, beta, c, n);
}
inline void gemm_tn(int m, int n, int k, const double* a, const double* b, double* c, double beta) {
    cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, m, n, k, 1.0, a, m, b, n, beta, c, n);
}

#else

template <typename T>
void gemm_nt(int m, int n, int k, const T* a, const T* b, T* c, T beta) {
    for (int i = 0; i < m; ++i) {
        const T* ai = a + static_cast<size_t>(i) * k;
        T* ci = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const T* bj = b + static_cast<size_t>(j) * k;
            T acc = 0;
            for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
            ci[j] = beta * ci[j] + acc;
        }
    }
}

template <typename T>
void gemm_nn(int m, int n, int k, const T* a, const T* b, T* c, T beta) {
    for (int i = 0; i < m; ++i) {
        T* ci = c + static_cast<size_t>(i) * n;
        if (beta == T(0)) {
            for (int j = 0; j < n; ++j) ci[j] = 0;
        } else if (beta != T(1)) {
            for (int j = 0; j < n; ++j) ci[j] *= beta;
        }
        const T* ai = a + static_cast<size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const T aval = ai[p];
            const T* bp = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) ci[j] += aval * bp[j];
        }
    }
}

template <typename T>
void gemm_tn(int m, int n, int k, const T* a, const T* b, T* c, T beta) {
    if (beta == T(0)) {
        for (size_t i = 0; i < static_cast<size_t>(m) * n; ++i) c[i] = 0;
    } else if (beta != T(1)) {
        for (size_t i = 0; i < static_cast<size_t>(m) * n; ++i) c[i] *= beta;
    }
    for (int p = 0; p < k; ++p) {
        const T* ap = a + static_cast<size_t>(p) * m;
        const T* bp = b + static_cast<size_t>(p) * n;
        for (int i = 0; i < m; ++i) {
            const T aval = ap[i];
            if (aval == T(0)) continue;
            T* ci = c + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) ci[j] += aval * bp[j];
        }
    }
}

#endif

}  // namespace emgdis::ad::detail
