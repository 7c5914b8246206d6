#pragma once

// Low-contrast shape images: a textured background with a single ellipse or
// rectangle whose colour differs only slightly, shared noise on both.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ento/rng.hpp"
#include "ento/tensor.hpp"

namespace ento {

struct Sample {
    std::string id;
    Tensor<float> image; ///< [1,3,H,W] in [0,1]
    Tensor<float> mask;  ///< [1,1,H,W] binary
};

struct SyntheticOptions {
    std::size_t height = 64;
    std::size_t width = 64;
    /// Foreground/background colour offset per channel.
    double contrast = 0.15;
    double noise = 0.05;
};

inline Sample make_synthetic_sample(std::uint64_t seed, std::size_t index, const SyntheticOptions& opt = {}) {
    Rng rng(mix_seed(seed, index));
    const std::size_t h = opt.height, w = opt.width;
    Sample s;
    s.id = "synth_" + std::to_string(index);
    s.image = Tensor<float>(Shape{1, 3, h, w});
    s.mask = Tensor<float>(Shape{1, 1, h, w});

    const bool ellipse = rng.coin();
    const double cy = rng.uniform(0.3, 0.7) * h, cx = rng.uniform(0.3, 0.7) * w;
    const double ry = rng.uniform(0.12, 0.28) * h, rx = rng.uniform(0.12, 0.28) * w;
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const double dy = (y + 0.5 - cy) / ry, dx = (x + 0.5 - cx) / rx;
            const bool inside = ellipse ? dx * dx + dy * dy <= 1.0 : std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
            s.mask[y * w + x] = inside ? 1.0f : 0.0f;
        }
    }

    double bg[3], fg[3], freq[3], phase[3];
    for (int c = 0; c < 3; ++c) {
        bg[c] = rng.uniform(0.3, 0.7);
        fg[c] = bg[c] + (rng.coin() ? opt.contrast : -opt.contrast);
        freq[c] = rng.uniform(0.1, 0.4);
        phase[c] = rng.uniform(0.0, 6.283185307179586);
    }
    for (std::size_t c = 0; c < 3; ++c) {
        float* plane = s.image.plane(0, c);
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                const double base = s.mask[y * w + x] == 1.0f ? fg[c] : bg[c];
                const double texture = 0.05 * std::sin(freq[c] * x + phase[c]) * std::cos(freq[c] * y);
                const double v = base + texture + opt.noise * rng.normal();
                plane[y * w + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
        }
    }
    return s;
}

inline std::vector<Sample> make_synthetic_set(std::uint64_t seed, std::size_t count, const SyntheticOptions& opt = {}) {
    std::vector<Sample> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(make_synthetic_sample(seed, i, opt));
    return out;
}

} // namespace ento
