#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <string>

#include "ento/autograd.hpp"
#include "ento/kernel.hpp"
#include "ento/model.hpp"

namespace ento {

struct LossOptions {
    /// w = 1 + weight_gain * |window_avg(y) - y|
    double weight_gain = 5.0;
    std::size_t weight_window = 31;
    /// Additive smoothing in the IoU ratio. Zero is only meant for tests.
    double iou_smoothing = 1.0;
};

namespace detail {

template <class T>
void require_binary(const Tensor<T>& y, const char* what) {
    for (T v : y.data()) {
        if (v != T(0) && v != T(1)) throw InvalidArgument(std::string(what) + ": ground truth must be binary");
    }
}

template <class T>
void check_loss_inputs(const Shape& logits, const Tensor<T>& y, const Tensor<T>& w, const char* what) {
    if (logits.numel() == 0) throw ShapeError(std::string(what) + ": empty tensor");
    require_same_shape(logits, y.shape(), what);
    require_same_shape(logits, w.shape(), what);
}

/// log(1 + exp(z)) - z*y without overflow.
template <class T>
T bce_with_logits(T z, T y) {
    return std::max(z, T(0)) - z * y + std::log1p(std::exp(-std::abs(z)));
}

} // namespace detail

/// Pixel difficulty weights 1 + gain * |avg_k(y) - y| (zero-padded window,
/// divisor k^2).
template <class T>
Tensor<T> pixel_weights(const Tensor<T>& y, const LossOptions& opt = {}) {
    if (y.shape().c != 1) throw ShapeError("pixel_weights: ground truth must be single-channel, got " + y.shape().str());
    detail::require_binary(y, "pixel_weights");
    const std::size_t k = opt.weight_window;
    const Tensor<T> avg = kernel::window_avg(y, kernel::WindowSpec{k, 1, k / 2});
    Tensor<T> w(y.shape());
    for (std::size_t i = 0; i < w.numel(); ++i) {
        w[i] = T(1) + static_cast<T>(opt.weight_gain) * std::abs(avg[i] - y[i]);
    }
    return w;
}

/// Weighted BCE: per image sum(w * bce) / sum(w), averaged over the batch.
template <class T>
Var<T> wbce(const Var<T>& logits, const Tensor<T>& y, const Tensor<T>& w) {
    detail::check_loss_inputs(logits.shape(), y, w, "wbce");
    const Shape s = logits.shape();
    const std::size_t per = s.c * s.h * s.w;
    const Tensor<T>& z = logits.value();
    std::vector<T> denom(s.n);
    T total = 0;
    for (std::size_t n = 0; n < s.n; ++n) {
        T num = 0, den = 0;
        for (std::size_t i = n * per; i < (n + 1) * per; ++i) {
            num += w[i] * detail::bce_with_logits(z[i], y[i]);
            den += w[i];
        }
        denom[n] = den;
        total += num / den;
    }
    const T inv_n = T(1) / static_cast<T>(s.n);
    return logits.tape().record(
        Tensor<T>::scalar(total * inv_n), {logits},
        [logits, y, w, denom, per, inv_n](Tape<T>& tp, std::size_t self) {
            const T go = tp.grad(self)[0];
            const Tensor<T>& zv = logits.value();
            Tensor<T> g(zv.shape());
            for (std::size_t i = 0; i < g.numel(); ++i) {
                g[i] = go * inv_n * w[i] * (kernel::sigmoid(zv[i]) - y[i]) / denom[i / per];
            }
            tp.accumulate(logits, std::move(g));
        },
        "wbce");
}

/// Weighted IoU: per image 1 - (sum(w p y) + s) / (sum(w (p + y - p y)) + s),
/// p = sigmoid(logits), averaged over the batch.
template <class T>
Var<T> wiou(const Var<T>& logits, const Tensor<T>& y, const Tensor<T>& w, const LossOptions& opt = {}) {
    detail::check_loss_inputs(logits.shape(), y, w, "wiou");
    const Shape s = logits.shape();
    const std::size_t per = s.c * s.h * s.w;
    const T smooth = static_cast<T>(opt.iou_smoothing);
    const Tensor<T> p = kernel::sigmoid(logits.value());
    std::vector<T> inter(s.n), uni(s.n);
    T total = 0;
    for (std::size_t n = 0; n < s.n; ++n) {
        T a = 0, b = 0;
        for (std::size_t i = n * per; i < (n + 1) * per; ++i) {
            a += w[i] * p[i] * y[i];
            b += w[i] * (p[i] + y[i] - p[i] * y[i]);
        }
        inter[n] = a + smooth;
        uni[n] = b + smooth;
        total += T(1) - inter[n] / uni[n];
    }
    const T inv_n = T(1) / static_cast<T>(s.n);
    return logits.tape().record(
        Tensor<T>::scalar(total * inv_n), {logits},
        [logits, y, w, p, inter, uni, per, inv_n](Tape<T>& tp, std::size_t self) {
            const T go = tp.grad(self)[0];
            Tensor<T> g(p.shape());
            for (std::size_t i = 0; i < g.numel(); ++i) {
                const std::size_t n = i / per;
                const T u = uni[n];
                const T dl_dp = -(w[i] * y[i] * u - inter[n] * w[i] * (T(1) - y[i])) / (u * u);
                g[i] = go * inv_n * dl_dp * p[i] * (T(1) - p[i]);
            }
            tp.accumulate(logits, std::move(g));
        },
        "wiou");
}

template <class T>
struct HeadLoss {
    Var<T> wbce;
    Var<T> wiou;
};

template <class T>
struct LossBreakdown {
    HeadLoss<T> enrich;
    HeadLoss<T> base;
    HeadLoss<T> retouch;
    Var<T> total;

    /// E.wbce, E.wiou, B.wbce, B.wiou, R.wbce, R.wiou
    std::array<T, 6> components() const {
        return {enrich.wbce.value()[0], enrich.wiou.value()[0], base.wbce.value()[0],
                base.wiou.value()[0],   retouch.wbce.value()[0], retouch.wiou.value()[0]};
    }
    T total_value() const { return total.value()[0]; }
};

/// wBCE + wIoU of one head after bilinear upsampling to the mask size.
template <class T>
HeadLoss<T> head_loss(const Var<T>& logits, const Tensor<T>& y, const Tensor<T>& w, const LossOptions& opt = {}) {
    if (!logits.valid()) throw InvalidArgument("total_loss: missing prediction head");
    if (logits.shape().c != 1 || logits.shape().n != y.shape().n) {
        throw ShapeError("head_loss: head " + logits.shape().str() + " incompatible with mask " + y.shape().str());
    }
    Var<T> up = bilinear_resize(logits, y.shape().h, y.shape().w);
    return {wbce(up, y, w), wiou(up, y, w, opt)};
}

/// Sum of wBCE + wIoU over the Enrich, Base and Retouch heads.
template <class T>
LossBreakdown<T> total_loss(const PredictionSet<T>& preds, const Tensor<T>& y, const LossOptions& opt = {}) {
    if (!preds.coarse.valid() || preds.base_per_level.empty() || preds.retouch_per_level.empty()) {
        throw InvalidArgument("total_loss: missing prediction head");
    }
    const Tensor<T> w = pixel_weights(y, opt);
    LossBreakdown<T> out;
    out.enrich = head_loss(preds.coarse, y, w, opt);
    out.base = head_loss(preds.base(), y, w, opt);
    out.retouch = head_loss(preds.retouch(), y, w, opt);
    Var<T> t = add(out.enrich.wbce, out.enrich.wiou);
    t = add(t, out.base.wbce);
    t = add(t, out.base.wiou);
    t = add(t, out.retouch.wbce);
    out.total = add(t, out.retouch.wiou);
    return out;
}

} // namespace ento
