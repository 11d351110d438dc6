#pragma once

#include <cstdint>
#include <functional>
#include <thread>
#include <vector>

namespace inst4d {

// Resolve a requested worker count: 0 means "auto" (hardware concurrency).
inline int resolve_threads(int requested) {
    if (requested > 0) return requested;
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

// Run fn(i) for i in [0, n). Work is split into contiguous blocks, one per
// worker. fn must write only to slots owned by index i; reductions happen
// after the join, in index order, so results are identical for any thread
// count.
inline void parallel_for(int64_t n, int threads, const std::function<void(int64_t)>& fn) {
    if (n <= 0) return;
    threads = resolve_threads(threads);
    if (threads <= 1 || n == 1) {
        for (int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
    int workers = static_cast<int>(threads < n ? threads : n);
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers));
    int64_t chunk = (n + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
        int64_t lo = w * chunk;
        int64_t hi = lo + chunk < n ? lo + chunk : n;
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn]() {
            for (int64_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace inst4d
