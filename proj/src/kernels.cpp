// SPDX-License-Identifier: Apache-2.0
#include "ft/kernels.hpp"

#include <cmath>
#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace ft::kernels {

namespace {

// Below these sizes the OpenMP fork/join overhead dominates; the serial
// path is used instead. Thresholds never change results: both paths run
// the same per-element code in the same order.
constexpr std::size_t kMatmulParallelFlops = 1u << 15;
constexpr std::size_t kElementwiseParallelMin = 1u << 16;
constexpr std::size_t kRowParallelMin = 256;

inline double dot_strided(const double* a, std::size_t stride_a,
                          const double* b, std::size_t stride_b, std::size_t k) {
    double acc = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        acc += a[i * stride_a] * b[i * stride_b];
    }
    return acc;
}

// One output row of c; shared by serial and parallel paths so the
// accumulation order is identical in both.
inline void matmul_row(const double* a, const double* b, double* c_row,
                       std::size_t i, std::size_t m, std::size_t k, std::size_t n,
                       bool trans_a, bool trans_b) {
    const double* a_i = trans_a ? a + i : a + i * k;
    const std::size_t a_stride = trans_a ? m : 1;
    for (std::size_t j = 0; j < n; ++j) {
        const double* b_j = trans_b ? b + j * k : b + j;
        const std::size_t b_stride = trans_b ? 1 : n;
        c_row[j] = dot_strided(a_i, a_stride, b_j, b_stride, k);
    }
}

inline void softmax_row(const double* x, double* y, std::size_t cols) {
    double mx = x[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
        y[j] = std::exp(x[j] - mx);
        sum += y[j];
    }
    double inv = 1.0 / sum;
    for (std::size_t j = 0; j < cols; ++j) y[j] *= inv;
}

inline void layernorm_row(const double* x, double* y, std::size_t cols, double eps) {
    double mean = 0.0;
    for (std::size_t j = 0; j < cols; ++j) mean += x[j];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
        double d = x[j] - mean;
        var += d * d;
    }
    var /= static_cast<double>(cols);
    double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < cols; ++j) y[j] = (x[j] - mean) * inv;
}

}  // namespace

namespace ref {

void matmul(const double* a, const double* b, double* c,
            std::size_t m, std::size_t k, std::size_t n,
            bool trans_a, bool trans_b) {
    for (std::size_t i = 0; i < m; ++i) {
        matmul_row(a, b, c + i * n, i, m, k, n, trans_a, trans_b);
    }
}

void add(const double* a, const double* b, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}

void relu(const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void add_row_bias(const double* x, const double* bias, double* y,
                  std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x + r * cols;
        double* yr = y + r * cols;
        for (std::size_t j = 0; j < cols; ++j) yr[j] = xr[j] + bias[j];
    }
}

void row_softmax(const double* x, double* y, std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) softmax_row(x + r * cols, y + r * cols, cols);
}

void row_layernorm(const double* x, double* y, std::size_t rows, std::size_t cols,
                   double eps) {
    for (std::size_t r = 0; r < rows; ++r) layernorm_row(x + r * cols, y + r * cols, cols, eps);
}

}  // namespace ref

void matmul(const double* a, const double* b, double* c,
            std::size_t m, std::size_t k, std::size_t n,
            bool trans_a, bool trans_b) {
#ifdef _OPENMP
    if (m * k * n >= kMatmulParallelFlops && m > 1) {
        const std::int64_t im = static_cast<std::int64_t>(m);
#pragma omp parallel for schedule(static)
        for (std::int64_t i = 0; i < im; ++i) {
            matmul_row(a, b, c + static_cast<std::size_t>(i) * n,
                       static_cast<std::size_t>(i), m, k, n, trans_a, trans_b);
        }
        return;
    }
#endif
    ref::matmul(a, b, c, m, k, n, trans_a, trans_b);
}

void add(const double* a, const double* b, double* y, std::size_t n) {
#ifdef _OPENMP
    if (n >= kElementwiseParallelMin) {
        const std::int64_t in = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(static)
        for (std::int64_t i = 0; i < in; ++i) y[i] = a[i] + b[i];
        return;
    }
#endif
    ref::add(a, b, y, n);
}

void relu(const double* x, double* y, std::size_t n) {
#ifdef _OPENMP
    if (n >= kElementwiseParallelMin) {
        const std::int64_t in = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(static)
        for (std::int64_t i = 0; i < in; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
        return;
    }
#endif
    ref::relu(x, y, n);
}

void add_row_bias(const double* x, const double* bias, double* y,
                  std::size_t rows, std::size_t cols) {
#ifdef _OPENMP
    if (rows >= kRowParallelMin && rows * cols >= kElementwiseParallelMin) {
        const std::int64_t ir = static_cast<std::int64_t>(rows);
#pragma omp parallel for schedule(static)
        for (std::int64_t r = 0; r < ir; ++r) {
            const double* xr = x + static_cast<std::size_t>(r) * cols;
            double* yr = y + static_cast<std::size_t>(r) * cols;
            for (std::size_t j = 0; j < cols; ++j) yr[j] = xr[j] + bias[j];
        }
        return;
    }
#endif
    ref::add_row_bias(x, bias, y, rows, cols);
}

void row_softmax(const double* x, double* y, std::size_t rows, std::size_t cols) {
#ifdef _OPENMP
    if (rows >= kRowParallelMin) {
        const std::int64_t ir = static_cast<std::int64_t>(rows);
#pragma omp parallel for schedule(static)
        for (std::int64_t r = 0; r < ir; ++r) {
            softmax_row(x + static_cast<std::size_t>(r) * cols,
                        y + static_cast<std::size_t>(r) * cols, cols);
        }
        return;
    }
#endif
    ref::row_softmax(x, y, rows, cols);
}

void row_layernorm(const double* x, double* y, std::size_t rows, std::size_t cols,
                   double eps) {
#ifdef _OPENMP
    if (rows >= kRowParallelMin) {
        const std::int64_t ir = static_cast<std::int64_t>(rows);
#pragma omp parallel for schedule(static)
        for (std::int64_t r = 0; r < ir; ++r) {
            layernorm_row(x + static_cast<std::size_t>(r) * cols,
                          y + static_cast<std::size_t>(r) * cols, cols, eps);
        }
        return;
    }
#endif
    ref::row_layernorm(x, y, rows, cols, eps);
}

void batched_matmul(const double* a, const double* b, double* c,
                    std::size_t batch, std::size_t m, std::size_t k, std::size_t n,
                    bool trans_a, bool trans_b) {
    const std::size_t a_slice = m * k;
    const std::size_t b_slice = k * n;
    const std::size_t c_slice = m * n;
#ifdef _OPENMP
    if (batch * m * k * n >= kMatmulParallelFlops && batch > 1) {
        const std::int64_t ib = static_cast<std::int64_t>(batch);
#pragma omp parallel for schedule(static)
        for (std::int64_t s = 0; s < ib; ++s) {
            const std::size_t u = static_cast<std::size_t>(s);
            ref::matmul(a + u * a_slice, b + u * b_slice, c + u * c_slice,
                        m, k, n, trans_a, trans_b);
        }
        return;
    }
#endif
    for (std::size_t s = 0; s < batch; ++s) {
        ref::matmul(a + s * a_slice, b + s * b_slice, c + s * c_slice,
                    m, k, n, trans_a, trans_b);
    }
}

}  // namespace ft::kernels
