#pragma once

// Differentiable primitives used by the classifier and the alignment losses.
// Every op is a pure forward function paired with a hand-written backward that
// maps an upstream gradient to gradients of the op's inputs.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "metadefa/tensor.hpp"

namespace metadefa {

inline constexpr std::size_t kConvKernel = 3;

// ---------------------------------------------------------------------------
// conv2d: 3x3, stride 1, zero padding 1
// ---------------------------------------------------------------------------

namespace detail {

inline void check_conv_shapes(const Tensor& input, const Tensor& kernel, const Tensor& bias) {
    require_rank(input, 3, "conv2d input");
    require_rank(kernel, 4, "conv2d kernel");
    require_rank(bias, 1, "conv2d bias");
    if (kernel.dim(2) != kConvKernel || kernel.dim(3) != kConvKernel) {
        throw std::invalid_argument("conv2d: kernel must be Cout x Cin x 3 x 3, got " + shape_str(kernel.shape()));
    }
    if (kernel.dim(1) != input.dim(0)) {
        throw std::invalid_argument("conv2d: kernel expects " + std::to_string(kernel.dim(1)) +
                                    " input channels, input has " + std::to_string(input.dim(0)));
    }
    if (bias.dim(0) != kernel.dim(0)) {
        throw std::invalid_argument("conv2d: bias length " + std::to_string(bias.dim(0)) +
                                    " does not match " + std::to_string(kernel.dim(0)) + " output channels");
    }
    if (input.dim(1) == 0 || input.dim(2) == 0) throw std::invalid_argument("conv2d: empty spatial extent");
}

// Output rows/cols [lo, hi) for which the tap at offset (k - 1) stays inside the input.
inline std::pair<std::size_t, std::size_t> tap_range(std::size_t k, std::size_t extent) {
    const std::size_t lo = k == 0 ? 1 : 0;
    const std::size_t hi = k == 2 ? extent - 1 : extent;
    return {lo, hi};
}

/// C[M x N] += A[M x K] * B[K x N], all row-major and contiguous. Register-blocked
/// 4 x 8; every k-sum runs in order, so results are reproducible.
/// With Accumulate = false, C is overwritten and need not be initialised.
template <bool Accumulate = true>
inline void gemm_acc(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
    using v4 = double __attribute__((vector_size(32)));
    auto load = [](const double* p) {
        v4 v;
        std::memcpy(&v, p, sizeof v);
        return v;
    };
    auto store = [](double* p, v4 v) { std::memcpy(p, &v, sizeof v); };
    const v4 zero{0.0, 0.0, 0.0, 0.0};
    auto init = [&](const double* p) { return Accumulate ? load(p) : zero; };
    auto init1 = [](const double* p) { return Accumulate ? *p : 0.0; };
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
        const double* a0 = a + i * k;
        const double* a1 = a0 + k;
        const double* a2 = a1 + k;
        const double* a3 = a2 + k;
        double* c0 = c + i * n;
        double* c1 = c0 + n;
        double* c2 = c1 + n;
        double* c3 = c2 + n;
        std::size_t j = 0;
        for (; j + 8 <= n; j += 8) {
            v4 x00 = init(c0 + j), x01 = init(c0 + j + 4);
            v4 x10 = init(c1 + j), x11 = init(c1 + j + 4);
            v4 x20 = init(c2 + j), x21 = init(c2 + j + 4);
            v4 x30 = init(c3 + j), x31 = init(c3 + j + 4);
            for (std::size_t p = 0; p < k; ++p) {
                const v4 b0 = load(b + p * n + j), b1 = load(b + p * n + j + 4);
                const double s0 = a0[p], s1 = a1[p], s2 = a2[p], s3 = a3[p];
                x00 += s0 * b0;
                x01 += s0 * b1;
                x10 += s1 * b0;
                x11 += s1 * b1;
                x20 += s2 * b0;
                x21 += s2 * b1;
                x30 += s3 * b0;
                x31 += s3 * b1;
            }
            store(c0 + j, x00), store(c0 + j + 4, x01);
            store(c1 + j, x10), store(c1 + j + 4, x11);
            store(c2 + j, x20), store(c2 + j + 4, x21);
            store(c3 + j, x30), store(c3 + j + 4, x31);
        }
        for (; j < n; ++j) {
            double s0 = init1(c0 + j), s1 = init1(c1 + j), s2 = init1(c2 + j), s3 = init1(c3 + j);
            for (std::size_t p = 0; p < k; ++p) {
                const double bv = b[p * n + j];
                s0 += a0[p] * bv;
                s1 += a1[p] * bv;
                s2 += a2[p] * bv;
                s3 += a3[p] * bv;
            }
            c0[j] = s0, c1[j] = s1, c2[j] = s2, c3[j] = s3;
        }
    }
    for (; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = init1(c + i * n + j);
            for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
            c[i * n + j] = s;
        }
}

/// C[M x N] += A[M x K] * B[N x K]^T: every entry is a dot product of two contiguous rows.
inline void gemm_abt_acc(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
    using v4 = double __attribute__((vector_size(32)));
    auto load = [](const double* p) {
        v4 v;
        std::memcpy(&v, p, sizeof v);
        return v;
    };
    auto hsum = [](v4 v) { return (v[0] + v[1]) + (v[2] + v[3]); };
    const std::size_t k4 = k - k % 4;
    std::size_t i = 0;
    for (; i + 2 <= m; i += 2) {
        const double* a0 = a + i * k;
        const double* a1 = a0 + k;
        std::size_t j = 0;
        for (; j + 2 <= n; j += 2) {
            const double* b0 = b + j * k;
            const double* b1 = b0 + k;
            v4 x00{}, x01{}, x10{}, x11{};
            for (std::size_t p = 0; p < k4; p += 4) {
                const v4 u0 = load(a0 + p), u1 = load(a1 + p), w0 = load(b0 + p), w1 = load(b1 + p);
                x00 += u0 * w0;
                x01 += u0 * w1;
                x10 += u1 * w0;
                x11 += u1 * w1;
            }
            double s00 = hsum(x00), s01 = hsum(x01), s10 = hsum(x10), s11 = hsum(x11);
            for (std::size_t p = k4; p < k; ++p) {
                s00 += a0[p] * b0[p];
                s01 += a0[p] * b1[p];
                s10 += a1[p] * b0[p];
                s11 += a1[p] * b1[p];
            }
            c[i * n + j] += s00;
            c[i * n + j + 1] += s01;
            c[(i + 1) * n + j] += s10;
            c[(i + 1) * n + j + 1] += s11;
        }
        for (; j < n; ++j)
            for (std::size_t r = 0; r < 2; ++r) {
                double s = 0.0;
                for (std::size_t p = 0; p < k; ++p) s += a[(i + r) * k + p] * b[j * k + p];
                c[(i + r) * n + j] += s;
            }
    }
    for (; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
            c[i * n + j] += s;
        }
}

// Scratch storage that skips zero-initialisation.
using Scratch = std::unique_ptr<double[]>;
inline Scratch scratch(std::size_t n) { return std::make_unique_for_overwrite<double[]>(n); }

inline Scratch transpose(const double* src, std::size_t rows, std::size_t cols) {
    Scratch t = scratch(rows * cols);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = src[r * cols + c];
    return t;
}

}  // namespace detail

/// Unfolds [Cin, H, W] into [Cin * 9, H * W] columns of zero-padded 3x3 neighbourhoods.
inline detail::Scratch im2col3x3(const Tensor& input) {
    const std::size_t cin = input.dim(0), h = input.dim(1), w = input.dim(2), hw = h * w;
    detail::Scratch col = detail::scratch(cin * 9 * hw);
    const double* in = input.values().data();
    for (std::size_t ci = 0; ci < cin; ++ci)
        for (std::size_t ky = 0; ky < 3; ++ky) {
            const auto [y0, y1] = detail::tap_range(ky, h);
            for (std::size_t kx = 0; kx < 3; ++kx) {
                const auto [x0, x1] = detail::tap_range(kx, w);
                double* crow = col.get() + ((ci * 9) + ky * 3 + kx) * hw;
                std::fill(crow, crow + y0 * w, 0.0);
                std::fill(crow + y1 * w, crow + hw, 0.0);
                for (std::size_t y = y0; y < y1; ++y) {
                    const double* irow = in + ci * hw + (y + ky - 1) * w + (kx - 1);
                    double* c = crow + y * w;
                    std::fill(c, c + x0, 0.0);
                    for (std::size_t x = x0; x < x1; ++x) c[x] = irow[x];
                    std::fill(c + x1, c + w, 0.0);
                }
            }
        }
    return col;
}

/// Adjoint of im2col3x3: scatters column gradients back onto the input grid.
inline Tensor col2im3x3(const double* col, std::size_t cin, std::size_t h, std::size_t w) {
    const std::size_t hw = h * w;
    Tensor out({cin, h, w});
    double* o = out.values().data();
    for (std::size_t ci = 0; ci < cin; ++ci)
        for (std::size_t ky = 0; ky < 3; ++ky) {
            const auto [y0, y1] = detail::tap_range(ky, h);
            for (std::size_t kx = 0; kx < 3; ++kx) {
                const auto [x0, x1] = detail::tap_range(kx, w);
                const double* crow = col + ((ci * 9) + ky * 3 + kx) * hw;
                for (std::size_t y = y0; y < y1; ++y) {
                    double* orow = o + ci * hw + (y + ky - 1) * w + (kx - 1);
                    const double* c = crow + y * w;
                    for (std::size_t x = x0; x < x1; ++x) orow[x] += c[x];
                }
            }
        }
    return out;
}

inline Tensor conv2d_forward(const Tensor& input, const Tensor& kernel, const Tensor& bias) {
    detail::check_conv_shapes(input, kernel, bias);
    const std::size_t h = input.dim(1), w = input.dim(2), hw = h * w;
    const std::size_t cout = kernel.dim(0), kk = kernel.dim(1) * 9;
    const detail::Scratch col = im2col3x3(input);
    Tensor out({cout, h, w});
    const double* ker = kernel.values().data();
    double* o = out.values().data();
    for (std::size_t co = 0; co < cout; ++co) std::fill(o + co * hw, o + (co + 1) * hw, bias[co]);
    detail::gemm_acc(cout, hw, kk, ker, col.get(), o);
    return out;
}

struct Conv2dGrads {
    Tensor input;
    Tensor kernel;
    Tensor bias;
};

/// Gradients of a conv2d w.r.t. input, kernel and bias, given the upstream gradient.
/// Pass compute_input = false for the first layer, whose input gradient is unused.
inline Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& kernel, const Tensor& grad_out,
                                   bool compute_input = true) {
    const std::size_t cin = input.dim(0), h = input.dim(1), w = input.dim(2), hw = h * w;
    const std::size_t cout = kernel.dim(0), kk = cin * 9;
    require_shape(grad_out, {cout, h, w}, "conv2d_backward grad_out");
    Conv2dGrads g{Tensor(), Tensor(kernel.shape()), Tensor({cout})};
    const detail::Scratch col = im2col3x3(input);
    const double* go = grad_out.values().data();
    const double* ker = kernel.values().data();
    double* gk = g.kernel.values().data();

    for (std::size_t co = 0; co < cout; ++co) {
        const double* d = go + co * hw;
        double bsum = 0.0;
        for (std::size_t p = 0; p < hw; ++p) bsum += d[p];
        g.bias[co] = bsum;
    }
    // kernel grad = grad_out [cout x hw] * col^T [hw x kk]
    detail::gemm_abt_acc(cout, kk, hw, go, col.get(), gk);
    if (compute_input) {
        // column grad = ker^T [kk x cout] * grad_out [cout x hw]
        const detail::Scratch ker_t = detail::transpose(ker, cout, kk);
        const detail::Scratch dcol = detail::scratch(kk * hw);
        detail::gemm_acc<false>(kk, hw, cout, ker_t.get(), go, dcol.get());
        g.input = col2im3x3(dcol.get(), cin, h, w);
    }
    return g;
}

// ---------------------------------------------------------------------------
// relu
// ---------------------------------------------------------------------------

inline Tensor relu(const Tensor& input) {
    Tensor out = Tensor::zeros_like(input);
    for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > 0.0 ? input[i] : 0.0;
    return out;
}

/// Subgradient convention: 0 at exactly 0.
inline Tensor relu_backward(const Tensor& input, const Tensor& grad_out) {
    require_shape(grad_out, input.shape(), "relu_backward");
    Tensor g = Tensor::zeros_like(input);
    for (std::size_t i = 0; i < input.size(); ++i) g[i] = input[i] > 0.0 ? grad_out[i] : 0.0;
    return g;
}

// ---------------------------------------------------------------------------
// 2x2 average pooling (between conv blocks)
// ---------------------------------------------------------------------------

inline Tensor avg_pool2(const Tensor& input) {
    require_rank(input, 3, "avg_pool2");
    const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
    if (h % 2 != 0 || w % 2 != 0) {
        throw std::invalid_argument("avg_pool2: spatial size must be even, got " + shape_str(input.shape()));
    }
    Tensor out({c, h / 2, w / 2});
    for (std::size_t k = 0; k < c; ++k)
        for (std::size_t y = 0; y < h / 2; ++y)
            for (std::size_t x = 0; x < w / 2; ++x)
                out.at(k, y, x) = 0.25 * (input.at(k, 2 * y, 2 * x) + input.at(k, 2 * y, 2 * x + 1) +
                                          input.at(k, 2 * y + 1, 2 * x) + input.at(k, 2 * y + 1, 2 * x + 1));
    return out;
}

inline Tensor avg_pool2_backward(const Shape& input_shape, const Tensor& grad_out) {
    const std::size_t c = input_shape.at(0), h = input_shape.at(1), w = input_shape.at(2);
    require_shape(grad_out, {c, h / 2, w / 2}, "avg_pool2_backward");
    Tensor g(input_shape);
    for (std::size_t k = 0; k < c; ++k)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) g.at(k, y, x) = 0.25 * grad_out.at(k, y / 2, x / 2);
    return g;
}

// ---------------------------------------------------------------------------
// global average pooling: F_k = mean over (x, y) of f_k
// ---------------------------------------------------------------------------

inline Tensor global_avg_pool(const Tensor& maps) {
    require_rank(maps, 3, "global_avg_pool");
    const std::size_t k = maps.dim(0), hw = maps.dim(1) * maps.dim(2);
    if (hw == 0) throw std::invalid_argument("global_avg_pool: empty spatial extent");
    Tensor out({k});
    for (std::size_t c = 0; c < k; ++c) {
        double s = 0.0;
        for (std::size_t i = 0; i < hw; ++i) s += maps[c * hw + i];
        out[c] = s / static_cast<double>(hw);
    }
    return out;
}

inline Tensor global_avg_pool_backward(const Shape& maps_shape, const Tensor& grad_out) {
    const std::size_t k = maps_shape.at(0), hw = maps_shape.at(1) * maps_shape.at(2);
    require_shape(grad_out, {k}, "global_avg_pool_backward");
    Tensor g(maps_shape);
    for (std::size_t c = 0; c < k; ++c) {
        const double v = grad_out[c] / static_cast<double>(hw);
        for (std::size_t i = 0; i < hw; ++i) g[c * hw + i] = v;
    }
    return g;
}

// ---------------------------------------------------------------------------
// linear: z_i = sum_k w[i][k] F_k + b_i
// ---------------------------------------------------------------------------

inline Tensor linear(const Tensor& features, const Tensor& weights, const Tensor& bias) {
    require_rank(features, 1, "linear features");
    require_rank(weights, 2, "linear weights");
    const std::size_t classes = weights.dim(0), k = weights.dim(1);
    if (features.dim(0) != k) {
        throw std::invalid_argument("linear: weights expect " + std::to_string(k) + " features, got " +
                                    std::to_string(features.dim(0)));
    }
    require_shape(bias, {classes}, "linear bias");
    Tensor out({classes});
    for (std::size_t i = 0; i < classes; ++i) {
        double s = bias[i];
        for (std::size_t j = 0; j < k; ++j) s += weights.at(i, j) * features[j];
        out[i] = s;
    }
    return out;
}

struct LinearGrads {
    Tensor features;
    Tensor weights;
    Tensor bias;
};

inline LinearGrads linear_backward(const Tensor& features, const Tensor& weights, const Tensor& grad_out) {
    const std::size_t classes = weights.dim(0), k = weights.dim(1);
    require_shape(grad_out, {classes}, "linear_backward grad_out");
    LinearGrads g{Tensor({k}), Tensor({classes, k}), grad_out};
    for (std::size_t i = 0; i < classes; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            g.weights.at(i, j) = grad_out[i] * features[j];
            g.features[j] += grad_out[i] * weights.at(i, j);
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// softmax cross-entropy
// ---------------------------------------------------------------------------

struct LossAndGrad {
    double loss = 0.0;
    Tensor grad;
};

inline Tensor softmax(const Tensor& logits) {
    Tensor p = Tensor::zeros_like(logits);
    if (logits.size() == 0) return p;
    const double mx = *std::max_element(logits.values().begin(), logits.values().end());
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - mx);
        z += p[i];
    }
    for (double& v : p.values()) v /= z;
    return p;
}

/// -log softmax(logits)[label], with gradient softmax - onehot(label).
inline LossAndGrad softmax_cross_entropy(const Tensor& logits, std::size_t label) {
    require_rank(logits, 1, "softmax_cross_entropy");
    if (label >= logits.size()) {
        throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(label) +
                                    " out of range for " + std::to_string(logits.size()) + " classes");
    }
    const double mx = *std::max_element(logits.values().begin(), logits.values().end());
    double z = 0.0;
    for (double v : logits.values()) z += std::exp(v - mx);
    const double log_z = std::log(z) + mx;
    LossAndGrad out{log_z - logits[label], Tensor::zeros_like(logits)};
    for (std::size_t i = 0; i < logits.size(); ++i) out.grad[i] = std::exp(logits[i] - log_z);
    out.grad[label] -= 1.0;
    return out;
}

// ---------------------------------------------------------------------------
// parameter updates
// ---------------------------------------------------------------------------

/// Returns params - rate * grads. Inputs are left untouched.
inline ParamSet sgd_step(const ParamSet& params, const ParamSet& grads, double rate) {
    params.require_compatible(grads, "sgd_step");
    ParamSet out = params.clone();
    out.axpy(-rate, grads);
    return out;
}

}  // namespace metadefa
