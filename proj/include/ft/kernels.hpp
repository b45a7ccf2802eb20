// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>

namespace ft::kernels {

// Serial reference implementations. Kept for tests and benchmarks: the
// parallel fronts below must produce bit-identical output because both
// paths accumulate every output element in the same index order.
namespace ref {

// c[m x n] = op_a(a) * op_b(b), where op transposes when the flag is set.
// a is m x k (or k x m when trans_a), b is k x n (or n x k when trans_b).
void matmul(const double* a, const double* b, double* c,
            std::size_t m, std::size_t k, std::size_t n,
            bool trans_a, bool trans_b);

void add(const double* a, const double* b, double* y, std::size_t n);
void relu(const double* x, double* y, std::size_t n);

// y[r,:] = x[r,:] + bias for every row.
void add_row_bias(const double* x, const double* bias, double* y,
                  std::size_t rows, std::size_t cols);

void row_softmax(const double* x, double* y, std::size_t rows, std::size_t cols);
void row_layernorm(const double* x, double* y, std::size_t rows, std::size_t cols,
                   double eps);

}  // namespace ref

// Parallel fronts. Dispatch to OpenMP loops over independent output slots
// when the problem is big enough, otherwise fall through to ref.
void matmul(const double* a, const double* b, double* c,
            std::size_t m, std::size_t k, std::size_t n,
            bool trans_a, bool trans_b);
void add(const double* a, const double* b, double* y, std::size_t n);
void relu(const double* x, double* y, std::size_t n);
void add_row_bias(const double* x, const double* bias, double* y,
                  std::size_t rows, std::size_t cols);
void row_softmax(const double* x, double* y, std::size_t rows, std::size_t cols);
void row_layernorm(const double* x, double* y, std::size_t rows, std::size_t cols,
                   double eps);

// Batched matmul over a leading batch axis; each slice is an independent
// 2-D matmul, parallelized across slices.
void batched_matmul(const double* a, const double* b, double* c,
                    std::size_t batch, std::size_t m, std::size_t k, std::size_t n,
                    bool trans_a, bool trans_b);

}  // namespace ft::kernels
