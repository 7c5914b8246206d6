#pragma once

// Pure tensor kernels and their adjoints. Every function here is
// side-effect free; the tape in autograd.hpp wires them together.
//
// Determinism: each output element is produced by exactly one worker and
// accumulates its terms in a fixed index order, so results do not depend on
// ENTO_THREADS.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "ento/parallel.hpp"
#include "ento/tensor.hpp"

namespace ento::kernel {

namespace detail {

inline void require_nonempty_spatial(const Shape& s, const char* what) {
    if (s.n == 0 || s.c == 0 || s.h == 0 || s.w == 0) {
        throw ShapeError(std::string(what) + ": zero-sized dimension in " + s.str());
    }
}

/// Output range [lo, hi) of positions o with 0 <= o*stride + tap - pad < in.
inline void valid_range(std::size_t out, std::size_t in, std::size_t stride, std::size_t tap, std::size_t pad,
                        std::size_t& lo, std::size_t& hi) {
    // o*stride + tap >= pad
    lo = tap >= pad ? 0 : (pad - tap + stride - 1) / stride;
    // o*stride + tap - pad <= in - 1
    if (in + pad < tap + 1) {
        hi = 0;
    } else {
        hi = std::min(out, (in + pad - tap - 1) / stride + 1);
    }
    if (lo > hi) lo = hi;
}

} // namespace detail

// ---------------------------------------------------------------- conv2d

inline void check_conv(const Shape& x, const ConvSpec& spec, const Shape& weights, const Shape* bias) {
    spec.validate();
    detail::require_nonempty_spatial(x, "conv2d");
    if (x.c != spec.in_channels) {
        throw ShapeError("conv2d: input has " + std::to_string(x.c) + " channels, spec expects " +
                         std::to_string(spec.in_channels));
    }
    if (weights != spec.weight_shape()) {
        throw ShapeError("conv2d: weight shape " + weights.str() + " does not match expected " +
                         spec.weight_shape().str());
    }
    if (spec.has_bias) {
        if (bias == nullptr || *bias != spec.bias_shape()) {
            throw ShapeError("conv2d: bias shape " + (bias ? bias->str() : std::string("<none>")) +
                             " does not match expected " + spec.bias_shape().str());
        }
    }
}

/// Zero-padded cross-correlation. Per output element the sum runs over
/// (in_channel, ky, kx) ascending, skipping padded taps; bias is added last.
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const ConvSpec& spec, const Tensor<T>& weights, const Tensor<T>* bias) {
    check_conv(x.shape(), spec, weights.shape(), bias ? &bias->shape() : nullptr);
    const Shape in = x.shape();
    const std::size_t k = spec.kernel, p = spec.padding(), s = spec.stride;
    const std::size_t oh = spec.out_size(in.h), ow = spec.out_size(in.w);
    Tensor<T> out(Shape{in.n, spec.out_channels, oh, ow});
    const T* wptr = weights.ptr();

    parallel_for(in.n * spec.out_channels, [&](std::size_t job) {
        const std::size_t n = job / spec.out_channels, co = job % spec.out_channels;
        T* acc = out.plane(n, co);
        for (std::size_t ci = 0; ci < in.c; ++ci) {
            const T* src = x.plane(n, ci);
            for (std::size_t ky = 0; ky < k; ++ky) {
                std::size_t ylo, yhi;
                detail::valid_range(oh, in.h, s, ky, p, ylo, yhi);
                for (std::size_t kx = 0; kx < k; ++kx) {
                    std::size_t xlo, xhi;
                    detail::valid_range(ow, in.w, s, kx, p, xlo, xhi);
                    const T wv = wptr[((co * in.c + ci) * k + ky) * k + kx];
                    for (std::size_t y = ylo; y < yhi; ++y) {
                        const T* row = src + (y * s + ky - p) * in.w;
                        T* dst = acc + y * ow;
                        if (s == 1) {
                            for (std::size_t xo = xlo; xo < xhi; ++xo) dst[xo] += wv * row[xo + kx - p];
                        } else {
                            for (std::size_t xo = xlo; xo < xhi; ++xo) dst[xo] += wv * row[xo * s + kx - p];
                        }
                    }
                }
            }
        }
        if (spec.has_bias) {
            const T b = (*bias)[co];
            for (std::size_t i = 0; i < oh * ow; ++i) acc[i] += b;
        }
    });
    return out;
}

template <class T>
struct ConvGrads {
    Tensor<T> input;
    Tensor<T> weights;
    Tensor<T> bias;
};

template <class T>
ConvGrads<T> conv2d_backward(const Tensor<T>& x, const ConvSpec& spec, const Tensor<T>& weights,
                             const Tensor<T>& grad_out, bool need_input = true) {
    const Shape in = x.shape();
    const std::size_t k = spec.kernel, p = spec.padding(), s = spec.stride;
    const std::size_t oh = grad_out.shape().h, ow = grad_out.shape().w;
    const std::size_t co_n = spec.out_channels;
    ConvGrads<T> g;
    const T* wptr = weights.ptr();

    if (need_input) {
        g.input = Tensor<T>(in);
        parallel_for(in.n * in.c, [&](std::size_t job) {
            const std::size_t n = job / in.c, ci = job % in.c;
            T* dst = g.input.plane(n, ci);
            for (std::size_t co = 0; co < co_n; ++co) {
                const T* go = grad_out.plane(n, co);
                for (std::size_t ky = 0; ky < k; ++ky) {
                    std::size_t ylo, yhi;
                    detail::valid_range(oh, in.h, s, ky, p, ylo, yhi);
                    for (std::size_t kx = 0; kx < k; ++kx) {
                        std::size_t xlo, xhi;
                        detail::valid_range(ow, in.w, s, kx, p, xlo, xhi);
                        const T wv = wptr[((co * in.c + ci) * k + ky) * k + kx];
                        for (std::size_t y = ylo; y < yhi; ++y) {
                            T* row = dst + (y * s + ky - p) * in.w;
                            const T* gr = go + y * ow;
                            if (s == 1) {
                                for (std::size_t xo = xlo; xo < xhi; ++xo) row[xo + kx - p] += wv * gr[xo];
                            } else {
                                for (std::size_t xo = xlo; xo < xhi; ++xo) row[xo * s + kx - p] += wv * gr[xo];
                            }
                        }
                    }
                }
            }
        });
    }

    g.weights = Tensor<T>(spec.weight_shape());
    g.bias = Tensor<T>(spec.bias_shape());
    parallel_for(co_n, [&](std::size_t co) {
        for (std::size_t ci = 0; ci < in.c; ++ci) {
            for (std::size_t ky = 0; ky < k; ++ky) {
                std::size_t ylo, yhi;
                detail::valid_range(oh, in.h, s, ky, p, ylo, yhi);
                for (std::size_t kx = 0; kx < k; ++kx) {
                    std::size_t xlo, xhi;
                    detail::valid_range(ow, in.w, s, kx, p, xlo, xhi);
                    T acc = 0;
                    for (std::size_t n = 0; n < in.n; ++n) {
                        const T* src = x.plane(n, ci);
                        const T* go = grad_out.plane(n, co);
                        for (std::size_t y = ylo; y < yhi; ++y) {
                            const T* row = src + (y * s + ky - p) * in.w;
                            const T* gr = go + y * ow;
                            T part = 0;
                            for (std::size_t xo = xlo; xo < xhi; ++xo) part += gr[xo] * row[xo * s + kx - p];
                            acc += part;
                        }
                    }
                    g.weights[((co * in.c + ci) * k + ky) * k + kx] = acc;
                }
            }
        }
        T acc = 0;
        for (std::size_t n = 0; n < in.n; ++n) {
            const T* go = grad_out.plane(n, co);
            for (std::size_t i = 0; i < oh * ow; ++i) acc += go[i];
        }
        g.bias[co] = acc;
    });
    return g;
}

// ------------------------------------------------------- bilinear resize

namespace detail {

struct AxisTaps {
    std::vector<std::size_t> lo, hi;
    std::vector<double> frac;
};

/// Half-pixel-center source coordinates: src = (dst + 0.5) * in/out - 0.5,
/// clamped to [0, in - 1].
inline AxisTaps axis_taps(std::size_t in, std::size_t out) {
    AxisTaps t;
    t.lo.resize(out);
    t.hi.resize(out);
    t.frac.resize(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t d = 0; d < out; ++d) {
        double src = (static_cast<double>(d) + 0.5) * scale - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(in - 1));
        auto lo = static_cast<std::size_t>(std::floor(src));
        lo = std::min(lo, in - 1);
        t.lo[d] = lo;
        t.hi[d] = std::min(lo + 1, in - 1);
        t.frac[d] = src - static_cast<double>(lo);
    }
    return t;
}

} // namespace detail

template <class T>
Tensor<T> bilinear_resize(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
    if (out_h < 1 || out_w < 1) throw ShapeError("bilinear_resize: target size must be at least 1x1");
    detail::require_nonempty_spatial(x.shape(), "bilinear_resize");
    const Shape in = x.shape();
    const auto ty = detail::axis_taps(in.h, out_h);
    const auto tx = detail::axis_taps(in.w, out_w);
    Tensor<T> out(Shape{in.n, in.c, out_h, out_w});
    parallel_for(in.n * in.c, [&](std::size_t job) {
        const T* src = x.ptr() + job * in.h * in.w;
        T* dst = out.ptr() + job * out_h * out_w;
        for (std::size_t y = 0; y < out_h; ++y) {
            const T fy = static_cast<T>(ty.frac[y]);
            const T* r0 = src + ty.lo[y] * in.w;
            const T* r1 = src + ty.hi[y] * in.w;
            for (std::size_t xo = 0; xo < out_w; ++xo) {
                const T fx = static_cast<T>(tx.frac[xo]);
                const std::size_t a = tx.lo[xo], b = tx.hi[xo];
                // lerp form keeps constant inputs exact
                const T top = r0[a] + fx * (r0[b] - r0[a]);
                const T bot = r1[a] + fx * (r1[b] - r1[a]);
                dst[y * out_w + xo] = top + fy * (bot - top);
            }
        }
    });
    return out;
}

template <class T>
Tensor<T> bilinear_resize_backward(const Shape& in, const Tensor<T>& grad_out) {
    const std::size_t out_h = grad_out.shape().h, out_w = grad_out.shape().w;
    const auto ty = detail::axis_taps(in.h, out_h);
    const auto tx = detail::axis_taps(in.w, out_w);
    Tensor<T> g(in);
    parallel_for(in.n * in.c, [&](std::size_t job) {
        const T* go = grad_out.ptr() + job * out_h * out_w;
        T* dst = g.ptr() + job * in.h * in.w;
        for (std::size_t y = 0; y < out_h; ++y) {
            const T fy = static_cast<T>(ty.frac[y]);
            T* r0 = dst + ty.lo[y] * in.w;
            T* r1 = dst + ty.hi[y] * in.w;
            for (std::size_t xo = 0; xo < out_w; ++xo) {
                const T fx = static_cast<T>(tx.frac[xo]);
                const std::size_t a = tx.lo[xo], b = tx.hi[xo];
                const T v = go[y * out_w + xo];
                const T top = v * (T(1) - fy), bot = v * fy;
                r0[a] += top * (T(1) - fx);
                r0[b] += top * fx;
                r1[a] += bot * (T(1) - fx);
                r1[b] += bot * fx;
            }
        }
    });
    return g;
}

// --------------------------------------------------------------- pooling

template <class T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    detail::require_nonempty_spatial(x.shape(), "global_avg_pool");
    const Shape s = x.shape();
    Tensor<T> out(Shape{s.n, s.c, 1, 1});
    const T inv = T(1) / static_cast<T>(s.h * s.w);
    for (std::size_t i = 0; i < s.n * s.c; ++i) {
        const T* src = x.ptr() + i * s.h * s.w;
        T acc = 0;
        for (std::size_t j = 0; j < s.h * s.w; ++j) acc += src[j];
        out[i] = acc * inv;
    }
    return out;
}

template <class T>
Tensor<T> global_avg_pool_backward(const Shape& in, const Tensor<T>& grad_out) {
    Tensor<T> g(in);
    const T inv = T(1) / static_cast<T>(in.h * in.w);
    for (std::size_t i = 0; i < in.n * in.c; ++i) {
        T* dst = g.ptr() + i * in.h * in.w;
        std::fill(dst, dst + in.h * in.w, grad_out[i] * inv);
    }
    return g;
}

/// [N,C,H,W] -> [N,2,H,W]: channel 0 is the mean over C, channel 1 the max.
template <class T>
Tensor<T> channel_avg_max(const Tensor<T>& x) {
    detail::require_nonempty_spatial(x.shape(), "channel_avg_max");
    const Shape s = x.shape();
    Tensor<T> out(Shape{s.n, 2, s.h, s.w});
    const std::size_t plane = s.h * s.w;
    const T inv = T(1) / static_cast<T>(s.c);
    for (std::size_t n = 0; n < s.n; ++n) {
        T* avg = out.plane(n, 0);
        T* mx = out.plane(n, 1);
        const T* first = x.plane(n, 0);
        std::copy(first, first + plane, avg);
        std::copy(first, first + plane, mx);
        for (std::size_t c = 1; c < s.c; ++c) {
            const T* src = x.plane(n, c);
            for (std::size_t i = 0; i < plane; ++i) {
                avg[i] += src[i];
                if (src[i] > mx[i]) mx[i] = src[i];
            }
        }
        for (std::size_t i = 0; i < plane; ++i) avg[i] *= inv;
    }
    return out;
}

/// Max gradient flows to the first channel attaining the maximum.
template <class T>
Tensor<T> channel_avg_max_backward(const Tensor<T>& x, const Tensor<T>& grad_out) {
    const Shape s = x.shape();
    Tensor<T> g(s);
    const std::size_t plane = s.h * s.w;
    const T inv = T(1) / static_cast<T>(s.c);
    for (std::size_t n = 0; n < s.n; ++n) {
        const T* gavg = grad_out.plane(n, 0);
        const T* gmax = grad_out.plane(n, 1);
        for (std::size_t i = 0; i < plane; ++i) {
            std::size_t arg = 0;
            T best = x.plane(n, 0)[i];
            for (std::size_t c = 1; c < s.c; ++c) {
                const T v = x.plane(n, c)[i];
                if (v > best) {
                    best = v;
                    arg = c;
                }
            }
            for (std::size_t c = 0; c < s.c; ++c) g.plane(n, c)[i] = gavg[i] * inv;
            g.plane(n, arg)[i] += gmax[i];
        }
    }
    return g;
}

struct WindowSpec {
    std::size_t kernel = 31;
    std::size_t stride = 1;
    std::size_t pad = 15;

    std::size_t out_size(std::size_t in) const { return (in + 2 * pad - kernel) / stride + 1; }
    void validate(const Shape& in) const {
        if (kernel == 0 || kernel % 2 == 0) throw InvalidArgument("window_avg: kernel must be odd");
        if (stride == 0) throw InvalidArgument("window_avg: stride must be positive");
        if (in.h + 2 * pad < kernel || in.w + 2 * pad < kernel) {
            throw InvalidArgument("window_avg: window larger than padded input");
        }
    }
};

/// Mean over a zero-padded k x k window; the divisor is always k*k. Terms
/// are summed over (ky, kx) ascending.
template <class T>
Tensor<T> window_avg(const Tensor<T>& x, const WindowSpec& spec) {
    spec.validate(x.shape());
    detail::require_nonempty_spatial(x.shape(), "window_avg");
    const Shape in = x.shape();
    const std::size_t k = spec.kernel, p = spec.pad, s = spec.stride;
    const std::size_t oh = spec.out_size(in.h), ow = spec.out_size(in.w);
    Tensor<T> out(Shape{in.n, in.c, oh, ow});
    const T area = static_cast<T>(k * k);
    parallel_for(in.n * in.c, [&](std::size_t job) {
        const T* src = x.ptr() + job * in.h * in.w;
        T* acc = out.ptr() + job * oh * ow;
        for (std::size_t ky = 0; ky < k; ++ky) {
            std::size_t ylo, yhi;
            detail::valid_range(oh, in.h, s, ky, p, ylo, yhi);
            for (std::size_t kx = 0; kx < k; ++kx) {
                std::size_t xlo, xhi;
                detail::valid_range(ow, in.w, s, kx, p, xlo, xhi);
                for (std::size_t y = ylo; y < yhi; ++y) {
                    const T* row = src + (y * s + ky - p) * in.w;
                    T* dst = acc + y * ow;
                    for (std::size_t xo = xlo; xo < xhi; ++xo) dst[xo] += row[xo * s + kx - p];
                }
            }
        }
        for (std::size_t i = 0; i < oh * ow; ++i) acc[i] /= area;
    });
    return out;
}

template <class T>
Tensor<T> window_avg_backward(const Shape& in, const WindowSpec& spec, const Tensor<T>& grad_out) {
    const std::size_t k = spec.kernel, p = spec.pad, s = spec.stride;
    const std::size_t oh = grad_out.shape().h, ow = grad_out.shape().w;
    Tensor<T> g(in);
    const T area = static_cast<T>(k * k);
    for (std::size_t job = 0; job < in.n * in.c; ++job) {
        const T* go = grad_out.ptr() + job * oh * ow;
        T* dst = g.ptr() + job * in.h * in.w;
        for (std::size_t ky = 0; ky < k; ++ky) {
            std::size_t ylo, yhi;
            detail::valid_range(oh, in.h, s, ky, p, ylo, yhi);
            for (std::size_t kx = 0; kx < k; ++kx) {
                std::size_t xlo, xhi;
                detail::valid_range(ow, in.w, s, kx, p, xlo, xhi);
                for (std::size_t y = ylo; y < yhi; ++y) {
                    T* row = dst + (y * s + ky - p) * in.w;
                    for (std::size_t xo = xlo; xo < xhi; ++xo) row[xo * s + kx - p] += go[y * ow + xo] / area;
                }
            }
        }
    }
    return g;
}

// ------------------------------------------------------------- pointwise

template <class T>
T sigmoid(T v) {
    // branch keeps exp() argument non-positive
    if (v >= 0) return T(1) / (T(1) + std::exp(-v));
    const T e = std::exp(v);
    return e / (T(1) + e);
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a.shape(), b.shape(), "add");
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
    return out;
}

template <class T>
Tensor<T> hadamard(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a.shape(), b.shape(), "hadamard");
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] * b[i];
    return out;
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    // NaN passes through so corrupted inputs stay visible downstream.
    for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] < 0 ? T(0) : x[i];
    return out;
}

inline void check_prelu(const Shape& x, const Shape& slope) {
    if (slope != Shape{1, x.c, 1, 1}) {
        throw ShapeError("prelu: slope shape " + slope.str() + " must be [1," + std::to_string(x.c) + ",1,1]");
    }
}

template <class T>
Tensor<T> prelu(const Tensor<T>& x, const Tensor<T>& slope) {
    check_prelu(x.shape(), slope.shape());
    const Shape s = x.shape();
    Tensor<T> out(s);
    for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t c = 0; c < s.c; ++c) {
            const T a = slope[c];
            const T* src = x.plane(n, c);
            T* dst = out.plane(n, c);
            for (std::size_t i = 0; i < s.plane(); ++i) dst[i] = src[i] > 0 ? src[i] : a * src[i];
        }
    }
    return out;
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out[i] = sigmoid(x[i]);
    return out;
}

inline void check_channel_scale(const Shape& x, const Shape& weights) {
    if (weights != Shape{x.n, x.c, 1, 1}) {
        throw ShapeError("channel_scale: weights " + weights.str() + " must be [N,C,1,1] for input " + x.str());
    }
}

/// out[n,c,y,x] = x[n,c,y,x] * weights[n,c]
template <class T>
Tensor<T> channel_scale(const Tensor<T>& x, const Tensor<T>& weights) {
    check_channel_scale(x.shape(), weights.shape());
    const Shape s = x.shape();
    Tensor<T> out(s);
    for (std::size_t i = 0; i < s.n * s.c; ++i) {
        const T wv = weights[i];
        const T* src = x.ptr() + i * s.plane();
        T* dst = out.ptr() + i * s.plane();
        for (std::size_t j = 0; j < s.plane(); ++j) dst[j] = src[j] * wv;
    }
    return out;
}

inline void check_spatial_scale(const Shape& x, const Shape& weights) {
    if (weights != Shape{x.n, 1, x.h, x.w}) {
        throw ShapeError("spatial_scale: weights " + weights.str() + " must be [N,1,H,W] for input " + x.str());
    }
}

/// out[n,c,y,x] = x[n,c,y,x] * weights[n,0,y,x]
template <class T>
Tensor<T> spatial_scale(const Tensor<T>& x, const Tensor<T>& weights) {
    check_spatial_scale(x.shape(), weights.shape());
    const Shape s = x.shape();
    Tensor<T> out(s);
    for (std::size_t n = 0; n < s.n; ++n) {
        const T* wv = weights.plane(n, 0);
        for (std::size_t c = 0; c < s.c; ++c) {
            const T* src = x.plane(n, c);
            T* dst = out.plane(n, c);
            for (std::size_t j = 0; j < s.plane(); ++j) dst[j] = src[j] * wv[j];
        }
    }
    return out;
}

// --------------------------------------------------------- channel layout

template <class T>
Tensor<T> concat_channels(const std::vector<const Tensor<T>*>& parts) {
    if (parts.empty()) throw ShapeError("concat_channels: empty input list");
    const Shape first = parts.front()->shape();
    std::size_t channels = 0;
    for (const auto* p : parts) {
        const Shape s = p->shape();
        if (s.n != first.n || s.h != first.h || s.w != first.w) {
            throw ShapeError("concat_channels: part " + s.str() + " does not match " + first.str() +
                             " in N/H/W");
        }
        channels += s.c;
    }
    Tensor<T> out(Shape{first.n, channels, first.h, first.w});
    const std::size_t plane = first.plane();
    for (std::size_t n = 0; n < first.n; ++n) {
        std::size_t c0 = 0;
        for (const auto* p : parts) {
            const std::size_t pc = p->shape().c;
            std::copy(p->plane(n, 0), p->plane(n, 0) + pc * plane, out.plane(n, c0));
            c0 += pc;
        }
    }
    return out;
}

template <class T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t begin, std::size_t count) {
    const Shape s = x.shape();
    if (count == 0 || begin + count > s.c) {
        throw ShapeError("slice_channels: range [" + std::to_string(begin) + "," + std::to_string(begin + count) +
                         ") outside " + std::to_string(s.c) + " channels");
    }
    Tensor<T> out(Shape{s.n, count, s.h, s.w});
    for (std::size_t n = 0; n < s.n; ++n) {
        std::copy(x.plane(n, begin), x.plane(n, begin) + count * s.plane(), out.plane(n, 0));
    }
    return out;
}

} // namespace ento::kernel
