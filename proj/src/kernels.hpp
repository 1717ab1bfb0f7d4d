#pragma once

#include <cstddef>

// CPU kernels for the forward pass.
//
// Every output element is produced by the same sequence of float operations no
// matter how many rows are processed together, so a row computed inside a
// batch is bit-identical to the same row computed alone. Incremental decoding
// and single-position re-runs depend on this. The project is compiled with
// -ffp-contract=off to keep the compiler from fusing multiply-adds differently
// in different loops.
namespace steerlab::kernels {

// Sum of a[i]*b[i] with eight fixed interleaved partial sums.
float dot(const float* a, const float* b, int n);

// Row-wise y = x @ w + bias. x is [rows, in] (row stride x_stride), w is
// [in, out] row-major, y is [rows, out] (row stride y_stride). bias may be null.
void matmul(const float* x, int rows, int in, size_t x_stride, const float* w, int out, const float* bias, float* y,
            size_t y_stride);

// out[r][v] = dot(x[r], table[v]) for a [n_vectors, n] table.
void dot_table(const float* x, int rows, size_t x_stride, const float* table, int n_vectors, int n, float* out,
               size_t out_stride);

void layer_norm(const float* x, const float* gain, const float* bias, float* y, int n, float eps);

// tanh-approximated GELU, in place.
void gelu(float* x, size_t n);

// In-place softmax over n entries.
void softmax(float* x, int n);

}  // namespace steerlab::kernels
