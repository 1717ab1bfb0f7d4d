#include "kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace steerlab::kernels {

namespace {

typedef float v8 __attribute__((vector_size(32)));

inline v8 load8(const float* p) {
    v8 v;
    std::memcpy(&v, p, sizeof(v));
    return v;
}

inline void store8(float* p, v8 v) { std::memcpy(p, &v, sizeof(v)); }

inline v8 splat8(float a) { return v8{a, a, a, a, a, a, a, a}; }

inline float reduce8(v8 acc) {
    return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

constexpr int kColBlock = 16;

// R rows x 16 columns, accumulators held in registers across the whole k loop.
template <int R>
void matmul_tile(const float* x, size_t x_stride, int in, const float* w, int out, const float* bias, float* y,
                 size_t y_stride) {
    v8 acc0[R];
    v8 acc1[R];
    for (int r = 0; r < R; ++r) {
        acc0[r] = splat8(0.0f);
        acc1[r] = splat8(0.0f);
    }
    for (int k = 0; k < in; ++k) {
        const float* wk = w + size_t(k) * size_t(out);
        const v8 w0 = load8(wk);
        const v8 w1 = load8(wk + 8);
        for (int r = 0; r < R; ++r) {
            const v8 a = splat8(x[size_t(r) * x_stride + size_t(k)]);
            acc0[r] = acc0[r] + a * w0;
            acc1[r] = acc1[r] + a * w1;
        }
    }
    for (int r = 0; r < R; ++r) {
        if (bias != nullptr) {
            acc0[r] = acc0[r] + load8(bias);
            acc1[r] = acc1[r] + load8(bias + 8);
        }
        store8(y + size_t(r) * y_stride, acc0[r]);
        store8(y + size_t(r) * y_stride + 8, acc1[r]);
    }
}

// Column remainder; same per-element operation order as the tiles.
void matmul_scalar_cols(const float* x, int rows, size_t x_stride, int in, const float* w, int out, int j_begin,
                        const float* bias, float* y, size_t y_stride) {
    for (int r = 0; r < rows; ++r) {
        for (int j = j_begin; j < out; ++j) {
            float acc = 0.0f;
            for (int k = 0; k < in; ++k) {
                acc = acc + x[size_t(r) * x_stride + size_t(k)] * w[size_t(k) * size_t(out) + size_t(j)];
            }
            if (bias != nullptr) acc = acc + bias[j];
            y[size_t(r) * y_stride + size_t(j)] = acc;
        }
    }
}

template <int R>
void dot_rows(const float* x, size_t x_stride, const float* v, int n, float* out, size_t out_stride) {
    v8 acc[R];
    for (int r = 0; r < R; ++r) acc[r] = splat8(0.0f);
    int k = 0;
    for (; k + 8 <= n; k += 8) {
        const v8 b = load8(v + k);
        for (int r = 0; r < R; ++r) acc[r] = acc[r] + load8(x + size_t(r) * x_stride + size_t(k)) * b;
    }
    for (int r = 0; r < R; ++r) {
        float s = reduce8(acc[r]);
        for (int kk = k; kk < n; ++kk) s = s + x[size_t(r) * x_stride + size_t(kk)] * v[kk];
        out[size_t(r) * out_stride] = s;
    }
}

}  // namespace

float dot(const float* a, const float* b, int n) {
    v8 acc = splat8(0.0f);
    int k = 0;
    for (; k + 8 <= n; k += 8) acc = acc + load8(a + k) * load8(b + k);
    float s = reduce8(acc);
    for (; k < n; ++k) s = s + a[k] * b[k];
    return s;
}

void matmul(const float* x, int rows, int in, size_t x_stride, const float* w, int out, const float* bias, float* y,
            size_t y_stride) {
    const int full_cols = out - out % kColBlock;
    // Column strips outermost so one strip of w stays cache-resident while all
    // row blocks pass over it.
    for (int j0 = 0; j0 < full_cols; j0 += kColBlock) {
        const float* wj = w + j0;
        const float* bj = bias != nullptr ? bias + j0 : nullptr;
        int r0 = 0;
        for (; r0 + 4 <= rows; r0 += 4) {
            matmul_tile<4>(x + size_t(r0) * x_stride, x_stride, in, wj, out, bj, y + size_t(r0) * y_stride + j0,
                           y_stride);
        }
        const float* xr = x + size_t(r0) * x_stride;
        float* yr = y + size_t(r0) * y_stride + j0;
        switch (rows - r0) {
            case 3: matmul_tile<3>(xr, x_stride, in, wj, out, bj, yr, y_stride); break;
            case 2: matmul_tile<2>(xr, x_stride, in, wj, out, bj, yr, y_stride); break;
            case 1: matmul_tile<1>(xr, x_stride, in, wj, out, bj, yr, y_stride); break;
            default: break;
        }
    }
    if (full_cols < out) {
        matmul_scalar_cols(x, rows, x_stride, in, w, out, full_cols, bias, y, y_stride);
    }
}

void dot_table(const float* x, int rows, size_t x_stride, const float* table, int n_vectors, int n, float* out,
               size_t out_stride) {
    for (int v = 0; v < n_vectors; ++v) {
        const float* tv = table + size_t(v) * size_t(n);
        int r0 = 0;
        for (; r0 + 4 <= rows; r0 += 4) {
            dot_rows<4>(x + size_t(r0) * x_stride, x_stride, tv, n, out + size_t(r0) * out_stride + v, out_stride);
        }
        for (; r0 < rows; ++r0) {
            dot_rows<1>(x + size_t(r0) * x_stride, x_stride, tv, n, out + size_t(r0) * out_stride + v, out_stride);
        }
    }
}

void layer_norm(const float* x, const float* gain, const float* bias, float* y, int n, float eps) {
    v8 acc = splat8(0.0f);
    int k = 0;
    for (; k + 8 <= n; k += 8) acc = acc + load8(x + k);
    float sum = reduce8(acc);
    for (; k < n; ++k) sum = sum + x[k];
    const float mean = sum / float(n);

    acc = splat8(0.0f);
    const v8 m8 = splat8(mean);
    k = 0;
    for (; k + 8 <= n; k += 8) {
        const v8 d = load8(x + k) - m8;
        acc = acc + d * d;
    }
    float sq = reduce8(acc);
    for (; k < n; ++k) {
        const float d = x[k] - mean;
        sq = sq + d * d;
    }
    const float var = sq / float(n);
    const float inv = 1.0f / std::sqrt(var + eps);
    for (int i = 0; i < n; ++i) {
        y[i] = (x[i] - mean) * inv * gain[i] + bias[i];
    }
}

void gelu(float* x, size_t n) {
    constexpr float kSqrt2OverPi = 0.7978845608028654f;
    for (size_t i = 0; i < n; ++i) {
        const float v = x[i];
        x[i] = 0.5f * v * (1.0f + std::tanh(kSqrt2OverPi * (v + 0.044715f * v * v * v)));
    }
}

void softmax(float* x, int n) {
    float m = x[0];
    for (int i = 1; i < n; ++i) m = std::max(m, x[i]);
    float sum = 0.0f;
    for (int i = 0; i < n; ++i) {
        x[i] = std::exp(x[i] - m);
        sum = sum + x[i];
    }
    const float inv = 1.0f / sum;
    for (int i = 0; i < n; ++i) x[i] = x[i] * inv;
}

}  // namespace steerlab::kernels
