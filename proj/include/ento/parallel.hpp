#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace ento {

namespace detail {
inline std::atomic<std::size_t>& worker_override() {
    static std::atomic<std::size_t> value{0};
    return value;
}
} // namespace detail

/// Worker cap: an explicit override if set, else ENTO_THREADS, else 1.
inline std::size_t worker_count() {
    if (auto forced = detail::worker_override().load(); forced != 0) return forced;
    if (const char* env = std::getenv("ENTO_THREADS")) {
        char* end = nullptr;
        long v = std::strtol(env, &end, 10);
        if (end != env && v >= 1) return static_cast<std::size_t>(std::min(v, 256L));
    }
    return 1;
}

/// Overrides ENTO_THREADS for the current process; 0 restores the env lookup.
inline void set_worker_count(std::size_t n) { detail::worker_override().store(n); }

/// Runs fn(i) for i in [0, count). Each index is handled by exactly one
/// worker, so results that depend only on the index are schedule-independent.
template <class Fn>
void parallel_for(std::size_t count, Fn&& fn, std::size_t min_per_worker = 1) {
    std::size_t workers = std::min(worker_count(), count / std::max<std::size_t>(min_per_worker, 1));
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t t = 0; t < workers; ++t) {
        pool.emplace_back([&, t] {
            std::size_t begin = count * t / workers;
            std::size_t end = count * (t + 1) / workers;
            for (std::size_t i = begin; i < end; ++i) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

} // namespace ento
