#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>

#include "ento/autograd.hpp"
#include "ento/rng.hpp"

namespace ento {

struct GradCheckOptions {
    double eps = 1e-5;
    /// Coordinates sampled per parameter tensor; tensors at or below this size
    /// are checked exhaustively.
    std::size_t samples_per_tensor = 4;
    std::uint64_t seed = 7;
    /// Each coordinate is differenced at eps and eps/2. If the two disagree
    /// beyond a smooth function's behaviour (a ReLU/PReLU/max kink inside the
    /// interval) the step is divided by 10, at most this many times.
    std::size_t kink_refinements = 3;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    std::size_t coordinates = 0;
    /// Coordinates evaluated with a reduced step.
    std::size_t refined = 0;
};

/// Compares tape gradients of `loss_fn` with central differences.
///
/// `loss_fn(tape, params)` must record a deterministic scalar on `tape`.
/// The per-coordinate error is |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
template <class LossFn>
GradCheckResult grad_check(LossFn&& loss_fn, ParamStore<double>& params, const GradCheckOptions& opt = {}) {
    if (!(opt.eps > 0.0)) throw InvalidArgument("grad_check: eps must be positive");

    auto evaluate = [&]() {
        Tape<double> tape;
        Var<double> loss = loss_fn(tape, params);
        if (loss.shape() != Shape{1, 1, 1, 1}) {
            throw InvalidArgument("grad_check: function must return a [1,1,1,1] scalar, got " + loss.shape().str());
        }
        return loss.value()[0];
    };

    {
        Tape<double> tape;
        Var<double> loss = loss_fn(tape, params);
        if (loss.shape() != Shape{1, 1, 1, 1}) {
            throw InvalidArgument("grad_check: function must return a [1,1,1,1] scalar, got " + loss.shape().str());
        }
        tape.backward(loss);
    }
    const double base = evaluate();

    GradCheckResult result;
    Rng rng(opt.seed);
    for (auto& entry : params.entries()) {
        const std::size_t n = entry.value.numel();
        std::vector<std::size_t> coords;
        if (n <= opt.samples_per_tensor) {
            for (std::size_t i = 0; i < n; ++i) coords.push_back(i);
        } else {
            for (std::size_t k = 0; k < opt.samples_per_tensor; ++k) coords.push_back(rng.below(n));
        }
        for (std::size_t i : coords) {
            const double original = entry.value[i];
            auto at = [&](double delta) {
                entry.value[i] = original + delta;
                const double v = evaluate();
                entry.value[i] = original;
                return v;
            };
            double step = opt.eps, numeric = 0.0;
            for (std::size_t round = 0;; ++round) {
                const double u1 = at(step), d1 = at(-step), u2 = at(step / 2), d2 = at(-step / 2);
                const double c1 = (u1 - d1) / (2.0 * step), c2 = (u2 - d2) / step;
                // One-sided slope gap: halves with the step on smooth functions,
                // stays put across a kink.
                const double gap1 = (u1 - 2.0 * base + d1) / step, gap2 = (u2 - 2.0 * base + d2) / (step / 2);
                const double noise = 64.0 * std::numeric_limits<double>::epsilon() * std::abs(base) / (step / 2);
                const double tol = 1e-4 * std::max(std::abs(c1), std::abs(c2)) + noise;
                numeric = c2;
                const bool smooth = std::abs(c1 - c2) <= tol && (std::abs(gap2) <= tol || std::abs(gap2) <= 0.75 * std::abs(gap1));
                if (smooth || round == opt.kink_refinements) break;
                step /= 10.0;
                if (round == 0) ++result.refined;
            }
            const double analytic = entry.grad[i];
            const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
            const double err = std::abs(analytic - numeric) / denom;
            ++result.coordinates;
            if (err > result.max_rel_error || result.worst_param.empty()) {
                result.max_rel_error = err;
                result.worst_param = entry.name;
                result.worst_index = i;
            }
        }
    }
    return result;
}

} // namespace ento
