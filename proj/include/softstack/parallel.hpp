#pragma once

#include <atomic>
#include <functional>
#include <thread>
#include <vector>

namespace softstack {

// Runs fn(0..n-1) across `threads` workers (0 = hardware concurrency).
// Work items must be independent; result reduction is the caller's job and
// should happen in index order when determinism matters.
inline void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
    if (threads == 0) threads = static_cast<int>(std::thread::hardware_concurrency());
    if (threads <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    threads = std::min(threads, n);
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(threads));
    for (int w = 0; w < threads; ++w) {
        pool.emplace_back([&] {
            for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

} // namespace softstack
