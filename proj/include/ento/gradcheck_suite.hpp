#pragma once

// Finite-difference checks of every block type and of the full training
// loss, in double precision at a tiny configuration.

#include <functional>
#include <string>
#include <vector>

#include "ento/grad_check.hpp"
#include "ento/losses.hpp"
#include "ento/model.hpp"
#include "ento/rng.hpp"

namespace ento {

struct BlockCheck {
    std::string block;
    GradCheckResult result;
};

/// L=2, C=32, 32x32 input (8x8 level-1 features), two CABs/SABs per level.
inline EntoConfig gradcheck_model_config() {
    EntoConfig c;
    c.levels = 2;
    c.channels = 32;
    c.cabs_per_level = 2;
    c.sabs_per_level = 2;
    c.input_h = 32;
    c.input_w = 32;
    return c;
}

inline Tensor<double> random_tensor(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Tensor<double> t(s);
    Rng rng(seed);
    for (auto& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

namespace detail {

/// sum(out * probe) with a fixed random probe, so every output element matters.
inline Var<double> probe_loss(const Var<double>& out, std::uint64_t seed) {
    Var<double> probe = out.tape().constant(random_tensor(out.shape(), seed), "probe");
    return sum(hadamard(out, probe));
}

} // namespace detail

/// Step 1e-3 keeps rounding noise well under the 1e-8 error floor for
/// near-zero gradients; kinks are handled by the step refinement.
inline GradCheckOptions gradcheck_suite_options() {
    GradCheckOptions o;
    o.eps = 1e-3;
    return o;
}

inline std::vector<BlockCheck> run_gradcheck_suite(const GradCheckOptions& opt = gradcheck_suite_options(),
                                                   std::uint64_t seed = 11) {
    std::vector<BlockCheck> out;
    const EntoConfig cfg = gradcheck_model_config();
    const std::size_t c = cfg.channels, h = cfg.level_h(1), w = cfg.level_w(1);

    {
        ParamStore<double> ps(seed);
        register_conv(ps, "conv", conv_spec(3, 4, 6));
        const auto x = random_tensor({1, 4, h, w}, seed + 1);
        out.push_back({"conv_relu", grad_check(
                                        [&](Tape<double>& t, ParamStore<double>& p) {
                                            auto y = relu(conv_layer(t, p, "conv", t.constant(x), 3, 6));
                                            return detail::probe_loss(y, seed + 2);
                                        },
                                        ps, opt)});
    }
    {
        ParamStore<double> ps(seed);
        register_cab(ps, "cab", c, cfg.cab_reduction);
        const auto f = random_tensor({1, c, h, w}, seed + 3);
        const auto g = random_tensor({1, c, h, w}, seed + 4);
        out.push_back({"cab", grad_check(
                                  [&](Tape<double>& t, ParamStore<double>& p) {
                                      auto r = cab_forward(t, p, "cab", t.constant(f), std::optional(t.constant(g)));
                                      return detail::probe_loss(r.out, seed + 5);
                                  },
                                  ps, opt)});
    }
    for (std::size_t s : cfg.group_sizes) {
        ParamStore<double> ps(seed);
        register_ga(ps, "ga", c, s);
        const auto g = random_tensor({1, c, h, w}, seed + 6);
        const auto p0 = random_tensor({1, 1, h, w}, seed + 7);
        out.push_back({"ga_s" + std::to_string(s), grad_check(
                                                       [&](Tape<double>& t, ParamStore<double>& p) {
                                                           auto r = ga_forward(t, p, "ga", t.constant(g), t.constant(p0), s);
                                                           return add(detail::probe_loss(r.features, seed + 8),
                                                                      detail::probe_loss(r.guidance, seed + 9));
                                                       },
                                                       ps, opt)});
    }
    {
        ParamStore<double> ps(seed);
        register_sab(ps, "sab", c);
        const auto feat = random_tensor({1, c, h, w}, seed + 10);
        const auto prev = random_tensor({1, 1, h, w}, seed + 11);
        out.push_back({"sab", grad_check(
                                  [&](Tape<double>& t, ParamStore<double>& p) {
                                      auto r = sab_forward(t, p, "sab", t.constant(feat), t.constant(prev));
                                      return detail::probe_loss(r.map, seed + 12);
                                  },
                                  ps, opt)});
    }
    {
        ParamStore<double> ps = make_ento_params<double>(cfg, seed);
        const auto image = random_tensor({1, 3, cfg.input_h, cfg.input_w}, seed + 13, 0.0, 1.0);
        Tensor<double> mask({1, 1, cfg.input_h, cfg.input_w});
        for (std::size_t y = 0; y < cfg.input_h; ++y) {
            for (std::size_t x = 0; x < cfg.input_w; ++x) {
                const double dy = y - 14.5, dx = x - 17.5;
                mask[y * cfg.input_w + x] = dx * dx + dy * dy < 64.0 ? 1.0 : 0.0;
            }
        }
        out.push_back({"full_loss", grad_check(
                                        [&](Tape<double>& t, ParamStore<double>& p) {
                                            auto fwd = ento_forward(t, p, cfg, t.constant(image));
                                            return total_loss(fwd.predictions, mask).total;
                                        },
                                        ps, opt)});
    }
    return out;
}

} // namespace ento
