#pragma once

// Raw row-major kernels shared by the numeric core and the encoder, backed by
// Eigen maps over caller-owned storage.

#include <cstddef>

#include <Eigen/Core>

namespace bdlab::kernels {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

// c[m x n] (+)= a[m x k] * b[k x n]
inline void gemm(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
                 double* c, bool accumulate = false) {
    const auto M = static_cast<Eigen::Index>(m);
    const auto K = static_cast<Eigen::Index>(k);
    const auto N = static_cast<Eigen::Index>(n);
    MutMap C(c, M, N);
    if (k == 0) {
        if (!accumulate) C.setZero();
        return;
    }
    if (accumulate) {
        C.noalias() += ConstMap(a, M, K) * ConstMap(b, K, N);
    } else {
        C.noalias() = ConstMap(a, M, K) * ConstMap(b, K, N);
    }
}

// c[k x n] += a[m x k]^T * b[m x n]
inline void gemm_at_acc(std::size_t m, std::size_t k, std::size_t n, const double* a,
                        const double* b, double* c) {
    const auto M = static_cast<Eigen::Index>(m);
    const auto K = static_cast<Eigen::Index>(k);
    const auto N = static_cast<Eigen::Index>(n);
    MutMap(c, K, N).noalias() += ConstMap(a, M, K).transpose() * ConstMap(b, M, N);
}

// c[m x n] (+)= a[m x k] * b[n x k]^T
inline void gemm_bt(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
                    double* c, bool accumulate = false) {
    const auto M = static_cast<Eigen::Index>(m);
    const auto K = static_cast<Eigen::Index>(k);
    const auto N = static_cast<Eigen::Index>(n);
    MutMap C(c, M, N);
    if (accumulate) {
        C.noalias() += ConstMap(a, M, K) * ConstMap(b, N, K).transpose();
    } else {
        C.noalias() = ConstMap(a, M, K) * ConstMap(b, N, K).transpose();
    }
}

// dst[cols x rows] = src[rows x cols]^T
inline void transpose(std::size_t rows, std::size_t cols, const double* src, double* dst) {
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
}

inline void add_row_bias(std::size_t m, std::size_t n, const double* bias, double* c) {
    for (std::size_t i = 0; i < m; ++i) {
        double* cr = c + i * n;
        for (std::size_t j = 0; j < n; ++j) cr[j] += bias[j];
    }
}

inline void sum_rows_acc(std::size_t m, std::size_t n, const double* a, double* out) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ar = a + i * n;
        for (std::size_t j = 0; j < n; ++j) out[j] += ar[j];
    }
}

}  // namespace bdlab::kernels
