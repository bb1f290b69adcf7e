#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace bdsde {

namespace detail {
inline std::atomic<int>& worker_count() {
    static std::atomic<int> n{1};
    return n;
}
}  // namespace detail

inline int workers() { return detail::worker_count().load(); }
inline void set_workers(int n) { detail::worker_count().store(std::max(1, n)); }

// Static contiguous partition. Each index is handled by exactly one worker and
// writes only its own slot, so results never depend on the worker count.
template <class Fn>
void parallel_for(std::size_t begin, std::size_t end, Fn&& fn) {
    const std::size_t n = end > begin ? end - begin : 0;
    const int w = static_cast<int>(std::min<std::size_t>(workers(), n));
    if (w <= 1 || n < 64) {
        for (std::size_t i = begin; i < end; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errs(w);
    const std::size_t chunk = (n + w - 1) / w;
    for (int k = 0; k < w; ++k) {
        const std::size_t lo = begin + k * chunk;
        const std::size_t hi = std::min(end, lo + chunk);
        pool.emplace_back([&, k, lo, hi] {
            try {
                for (std::size_t i = lo; i < hi; ++i) fn(i);
            } catch (...) {
                errs[k] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errs)
        if (e) std::rethrow_exception(e);
}

}  // namespace bdsde
