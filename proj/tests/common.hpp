#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "ento/rng.hpp"
#include "ento/tensor.hpp"

namespace testing_util {

template <class T>
ento::Tensor<T> random_tensor(ento::Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    ento::Rng rng(seed);
    ento::Tensor<T> t(s);
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

/// Random binary mask; `density` is the foreground probability.
inline ento::Tensor<double> random_mask(std::size_t h, std::size_t w, std::uint64_t seed, double density = 0.4) {
    ento::Rng rng(seed);
    ento::Tensor<double> t(ento::Shape{1, 1, h, w});
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform() < density ? 1.0 : 0.0;
    return t;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("ento_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace testing_util
