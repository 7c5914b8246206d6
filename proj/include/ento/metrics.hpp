#pragma once

// Segmentation quality metrics on a probability map p in [0,1] against a
// binary ground truth y, both [1,1,H,W] double tensors.
//
// Conventions fixed here where the reference formulations leave room:
//  * S-measure quadrants split at the grid line nearest the continuous
//    centroid; when the centroid sits exactly on a pixel center both
//    neighbouring lines are evaluated and averaged (keeps flip symmetry).
//  * E-measure binarises p > k/256 for k = 0..255 and averages the enhanced
//    alignment over all H*W pixels.
//  * Weighted F: a background pixel takes the mean error of all equidistant
//    nearest foreground pixels.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "ento/error.hpp"
#include "ento/tensor.hpp"

namespace ento::metrics {

using Map = Tensor<double>;

namespace detail {

inline void check_pair(const Map& p, const Map& y, const char* what) {
    require_same_shape(p.shape(), y.shape(), what);
    if (p.shape().n != 1 || p.shape().c != 1) {
        throw ShapeError(std::string(what) + ": maps must be [1,1,H,W], got " + p.shape().str());
    }
    if (p.numel() == 0) throw ShapeError(std::string(what) + ": empty map");
    for (double v : y.data()) {
        if (v != 0.0 && v != 1.0) throw InvalidArgument(std::string(what) + ": ground truth must be binary");
    }
}

inline double mean(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

} // namespace detail

/// Min-max rescales p into [0,1] when any value lies outside it. Strict mode
/// rejects such maps instead.
inline Map normalize_prediction(const Map& p, bool strict) {
    auto [lo, hi] = std::minmax_element(p.data().begin(), p.data().end());
    if (*lo >= 0.0 && *hi <= 1.0) return p;
    if (strict) throw InvalidArgument("prediction values outside [0,1] in strict mode");
    Map out(p.shape());
    const double range = *hi - *lo;
    for (std::size_t i = 0; i < p.numel(); ++i) out[i] = range > 0 ? (p[i] - *lo) / range : 0.0;
    return out;
}

inline double mae(const Map& p, const Map& y) {
    detail::check_pair(p, y, "mae");
    double s = 0;
    for (std::size_t i = 0; i < p.numel(); ++i) s += std::abs(p[i] - y[i]);
    return s / static_cast<double>(p.numel());
}

// ------------------------------------------------------------- S-measure

namespace detail {

/// 2x / (x^2 + 1 + sigma) over pixels where mask is set; sigma is the
/// sample standard deviation (N-1 denominator, 0 for a single pixel).
inline double object_similarity(const std::vector<double>& values) {
    if (values.empty()) return 0.0;
    const double x = mean(values);
    double var = 0;
    for (double v : values) var += (v - x) * (v - x);
    const double sigma = values.size() > 1 ? std::sqrt(var / static_cast<double>(values.size() - 1)) : 0.0;
    return 2.0 * x / (x * x + 1.0 + sigma);
}

inline double s_object(const Map& p, const Map& y) {
    std::vector<double> fg, bg;
    for (std::size_t i = 0; i < p.numel(); ++i) {
        if (y[i] == 1.0) {
            fg.push_back(p[i]);
        } else {
            bg.push_back(1.0 - p[i]);
        }
    }
    const double u = static_cast<double>(fg.size()) / static_cast<double>(p.numel());
    return u * object_similarity(fg) + (1.0 - u) * object_similarity(bg);
}

/// SSIM-style similarity of one block given as row/col ranges.
inline double block_ssim(const Map& p, const Map& y, std::size_t r0, std::size_t r1, std::size_t c0,
                         std::size_t c1) {
    const std::size_t w = p.shape().w;
    const std::size_t n = (r1 - r0) * (c1 - c0);
    double sx = 0, sy = 0;
    for (std::size_t r = r0; r < r1; ++r) {
        for (std::size_t c = c0; c < c1; ++c) {
            sx += p[r * w + c];
            sy += y[r * w + c];
        }
    }
    const double mx = sx / static_cast<double>(n), my = sy / static_cast<double>(n);
    double vx = 0, vy = 0, cxy = 0;
    for (std::size_t r = r0; r < r1; ++r) {
        for (std::size_t c = c0; c < c1; ++c) {
            const double dx = p[r * w + c] - mx, dy = y[r * w + c] - my;
            vx += dx * dx;
            vy += dy * dy;
            cxy += dx * dy;
        }
    }
    const double norm = n > 1 ? static_cast<double>(n - 1) : 1.0;
    vx /= norm;
    vy /= norm;
    cxy /= norm;
    const double alpha = 4.0 * mx * my * cxy;
    const double beta = (mx * mx + my * my) * (vx + vy);
    if (alpha != 0.0) return alpha / beta;
    return beta == 0.0 ? 1.0 : 0.0;
}

/// Split lines nearest the continuous centroid coordinate (sum/count + 0.5).
/// Returns one line, or two on an exact tie.
inline std::vector<std::size_t> split_lines(std::size_t coord_sum, std::size_t count) {
    const std::size_t num = 2 * coord_sum + count, den = 2 * count;
    const std::size_t q = num / den, r = num % den;
    if (2 * r < den) return {q};
    if (2 * r > den) return {q + 1};
    return {q, q + 1};
}

inline double s_region_at(const Map& p, const Map& y, std::size_t sx, std::size_t sy) {
    const std::size_t h = p.shape().h, w = p.shape().w;
    const double area = static_cast<double>(h * w);
    const std::array<std::array<std::size_t, 4>, 4> blocks{{
        {0, sy, 0, sx},
        {0, sy, sx, w},
        {sy, h, 0, sx},
        {sy, h, sx, w},
    }};
    double score = 0;
    for (const auto& b : blocks) {
        const std::size_t n = (b[1] - b[0]) * (b[3] - b[2]);
        if (n == 0) continue;
        score += static_cast<double>(n) / area * block_ssim(p, y, b[0], b[1], b[2], b[3]);
    }
    return score;
}

inline double s_region(const Map& p, const Map& y) {
    const std::size_t h = p.shape().h, w = p.shape().w;
    std::size_t count = 0, sum_r = 0, sum_c = 0;
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
            if (y[r * w + c] == 1.0) {
                ++count;
                sum_r += r;
                sum_c += c;
            }
        }
    }
    const auto xs = split_lines(sum_c, count);
    const auto ys = split_lines(sum_r, count);
    double total = 0;
    for (std::size_t sx : xs) {
        for (std::size_t sy : ys) total += s_region_at(p, y, sx, sy);
    }
    return total / static_cast<double>(xs.size() * ys.size());
}

} // namespace detail

/// Structure measure alpha*S_object + (1-alpha)*S_region, clamped at 0.
/// All-background y scores 1 - mean(p); all-foreground y scores mean(p).
inline double s_measure(const Map& p, const Map& y, double alpha = 0.5) {
    detail::check_pair(p, y, "s_measure");
    double fg = 0, mean_p = 0;
    for (std::size_t i = 0; i < p.numel(); ++i) {
        fg += y[i];
        mean_p += p[i];
    }
    mean_p /= static_cast<double>(p.numel());
    if (fg == 0.0) return 1.0 - mean_p;
    if (fg == static_cast<double>(p.numel())) return mean_p;
    const double s = alpha * detail::s_object(p, y) + (1.0 - alpha) * detail::s_region(p, y);
    return std::max(0.0, s);
}

// ------------------------------------------------------------- E-measure

inline constexpr std::size_t kEMeasureThresholds = 256;

/// Enhanced alignment of one binary foreground map against y.
inline double enhanced_alignment(const std::vector<unsigned char>& fm, const Map& y) {
    const std::size_t n = y.numel();
    double gt_fg = 0;
    std::size_t fm_fg = 0;
    for (std::size_t i = 0; i < n; ++i) {
        gt_fg += y[i];
        fm_fg += fm[i];
    }
    if (gt_fg == 0.0) return static_cast<double>(n - fm_fg) / static_cast<double>(n);
    if (gt_fg == static_cast<double>(n)) return static_cast<double>(fm_fg) / static_cast<double>(n);

    // Four pixel classes by (fm, gt); each class shares one aligned value.
    std::array<std::size_t, 4> count{};
    for (std::size_t i = 0; i < n; ++i) ++count[(fm[i] ? 2 : 0) + (y[i] == 1.0 ? 1 : 0)];
    const double mu_fm = static_cast<double>(fm_fg) / static_cast<double>(n);
    const double mu_gt = gt_fg / static_cast<double>(n);
    double total = 0;
    for (std::size_t cls = 0; cls < 4; ++cls) {
        if (count[cls] == 0) continue;
        const double a = ((cls & 2) ? 1.0 : 0.0) - mu_fm;
        const double b = ((cls & 1) ? 1.0 : 0.0) - mu_gt;
        const double denom = a * a + b * b;
        const double xi = denom > 0 ? 2.0 * a * b / denom : 0.0;
        total += static_cast<double>(count[cls]) * (xi + 1.0) * (xi + 1.0) / 4.0;
    }
    return total / static_cast<double>(n);
}

/// Per-threshold E values, threshold k binarising p > k/256.
inline std::vector<double> e_measure_curve(const Map& p, const Map& y) {
    detail::check_pair(p, y, "e_measure");
    std::vector<double> curve(kEMeasureThresholds);
    std::vector<unsigned char> fm(p.numel());
    for (std::size_t k = 0; k < kEMeasureThresholds; ++k) {
        const double t = static_cast<double>(k) / static_cast<double>(kEMeasureThresholds);
        for (std::size_t i = 0; i < p.numel(); ++i) fm[i] = p[i] > t ? 1 : 0;
        curve[k] = enhanced_alignment(fm, y);
    }
    return curve;
}

/// Mean E-measure over the 256 thresholds.
inline double e_measure(const Map& p, const Map& y) { return detail::mean(e_measure_curve(p, y)); }

// ------------------------------------------------------ weighted F-measure

struct NearestForeground {
    std::vector<double> distance; ///< Euclidean distance to the nearest foreground pixel (0 on foreground)
    std::vector<double> value;    ///< mean of `values` over the equidistant nearest foreground pixels
};

/// Exact Euclidean nearest-foreground transform. Column pass finds the
/// nearest foreground rows above/below each pixel; the row pass scans every
/// column. Any globally nearest pixel is nearest in its own column, so ties
/// are collected completely. O(H * W^2).
inline NearestForeground nearest_foreground(const Map& y, const std::vector<double>& values) {
    const std::size_t h = y.shape().h, w = y.shape().w;
    constexpr std::size_t none = std::numeric_limits<std::size_t>::max();
    std::vector<std::size_t> up(h * w, none), down(h * w, none);
    for (std::size_t c = 0; c < w; ++c) {
        std::size_t last = none;
        for (std::size_t r = 0; r < h; ++r) {
            if (y[r * w + c] == 1.0) last = r;
            up[r * w + c] = last;
        }
        last = none;
        for (std::size_t r = h; r-- > 0;) {
            if (y[r * w + c] == 1.0) last = r;
            down[r * w + c] = last;
        }
    }
    NearestForeground out;
    out.distance.assign(h * w, 0.0);
    out.value.assign(h * w, 0.0);
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
            const std::size_t idx = r * w + c;
            if (y[idx] == 1.0) {
                out.value[idx] = values[idx];
                continue;
            }
            std::size_t best = none;
            double acc = 0;
            std::size_t hits = 0;
            for (std::size_t cc = 0; cc < w; ++cc) {
                const std::size_t u = up[r * w + cc], d = down[r * w + cc];
                if (u == none && d == none) continue;
                const std::size_t du = u == none ? none : r - u;
                const std::size_t dd = d == none ? none : d - r;
                const std::size_t dv = std::min(du, dd);
                const std::size_t dx = cc > c ? cc - c : c - cc;
                const std::size_t d2 = dx * dx + dv * dv;
                if (best != none && d2 > best) continue;
                if (best == none || d2 < best) {
                    best = d2;
                    acc = 0;
                    hits = 0;
                }
                if (du == dv) {
                    acc += values[u * w + cc];
                    ++hits;
                }
                if (dd == dv && d != u) {
                    acc += values[d * w + cc];
                    ++hits;
                }
            }
            out.distance[idx] = std::sqrt(static_cast<double>(best));
            out.value[idx] = acc / static_cast<double>(hits);
        }
    }
    return out;
}

/// 7x7 Gaussian, sigma 5, normalised to unit sum with negligible taps zeroed.
inline std::array<double, 49> dependency_kernel(double sigma = 5.0) {
    std::array<double, 49> k{};
    double mx = 0;
    for (int i = 0; i < 7; ++i) {
        for (int j = 0; j < 7; ++j) {
            const double dy = i - 3, dx = j - 3;
            k[i * 7 + j] = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
            mx = std::max(mx, k[i * 7 + j]);
        }
    }
    double sum = 0;
    for (double& v : k) {
        if (v < std::numeric_limits<double>::epsilon() * mx) v = 0;
        sum += v;
    }
    for (double& v : k) v /= sum;
    return k;
}

struct WeightedFInternals {
    std::vector<double> error;     ///< |p - y|
    std::vector<double> distance;  ///< distance to nearest foreground
    std::vector<double> spread;    ///< error propagated to background from nearest foreground
    std::vector<double> smoothed;  ///< spread filtered by the dependency kernel
    std::vector<double> weighted;  ///< final per-pixel weighted error
    double recall = 0;
    double precision = 0;
    double score = 0;
};

inline WeightedFInternals weighted_f_internals(const Map& p, const Map& y, double beta2 = 1.0) {
    detail::check_pair(p, y, "weighted_f_measure");
    const std::size_t h = y.shape().h, w = y.shape().w, n = y.numel();
    double fg_count = 0;
    for (double v : y.data()) fg_count += v;
    if (fg_count == 0.0) throw DegenerateGroundTruthError("weighted_f_measure: ground truth has no foreground");

    WeightedFInternals r;
    r.error.resize(n);
    for (std::size_t i = 0; i < n; ++i) r.error[i] = std::abs(p[i] - y[i]);
    auto nf = nearest_foreground(y, r.error);
    r.distance = std::move(nf.distance);
    r.spread = std::move(nf.value);

    const auto kern = dependency_kernel();
    r.smoothed.assign(n, 0.0);
    for (std::size_t row = 0; row < h; ++row) {
        for (std::size_t col = 0; col < w; ++col) {
            double acc = 0;
            for (int i = 0; i < 7; ++i) {
                const long rr = static_cast<long>(row) + i - 3;
                if (rr < 0 || rr >= static_cast<long>(h)) continue;
                for (int j = 0; j < 7; ++j) {
                    const long cc = static_cast<long>(col) + j - 3;
                    if (cc < 0 || cc >= static_cast<long>(w)) continue;
                    acc += kern[i * 7 + j] * r.spread[rr * w + cc];
                }
            }
            r.smoothed[row * w + col] = acc;
        }
    }

    const double decay = std::log(0.5) / 5.0;
    r.weighted.resize(n);
    double fg_err = 0, bg_err = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (y[i] == 1.0) {
            const double e = std::min(r.error[i], r.smoothed[i]);
            r.weighted[i] = e;
            fg_err += e;
        } else {
            const double e = r.error[i] * (2.0 - std::exp(decay * r.distance[i]));
            r.weighted[i] = e;
            bg_err += e;
        }
    }
    const double tp = fg_count - fg_err;
    r.recall = 1.0 - fg_err / fg_count;
    r.precision = tp + bg_err > 0 ? tp / (tp + bg_err) : 0.0;
    const double denom = r.recall + beta2 * r.precision;
    r.score = denom > 0 ? (1.0 + beta2) * r.recall * r.precision / denom : 0.0;
    return r;
}

inline double weighted_f_measure(const Map& p, const Map& y, double beta2 = 1.0) {
    return weighted_f_internals(p, y, beta2).score;
}

} // namespace ento::metrics
