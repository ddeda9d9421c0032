// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <thread>
#include <vector>

namespace diver {

/// Worker count: DIVER_THREADS if set, else hardware concurrency.
inline int default_thread_count() {
    if (const char *env = std::getenv("DIVER_THREADS")) {
        const int n = std::atoi(env);
        if (n > 0)
            return n;
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs fn(chunk_begin, chunk_end, worker) over [0, n) in chunks of `grain`.
/// Chunk boundaries depend only on n and grain, never on the worker count.
template <class Fn>
void parallel_for(std::size_t n, std::size_t grain, int threads, Fn &&fn) {
    if (n == 0)
        return;
    grain = std::max<std::size_t>(1, grain);
    const std::size_t chunks = (n + grain - 1) / grain;
    if (threads <= 0)
        threads = default_thread_count();
    const int workers = int(std::min<std::size_t>(std::size_t(threads), chunks));
    if (workers <= 1) {
        for (std::size_t c = 0; c < chunks; ++c)
            fn(c * grain, std::min(n, (c + 1) * grain), 0);
        return;
    }
    std::atomic<std::size_t> next{0};
    auto body = [&](int worker) {
        for (std::size_t c = next++; c < chunks; c = next++)
            fn(c * grain, std::min(n, (c + 1) * grain), worker);
    };
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    for (int w = 1; w < workers; ++w)
        pool.emplace_back(body, w);
    body(0);
    for (auto &t : pool)
        t.join();
}

} // namespace diver
