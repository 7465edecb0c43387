// Copyright Contributors to the GaussForge Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <thread>
#include <vector>

#include "gaussforge/common.hpp"

namespace gf {

// Worker-pool sizing. 0 means "resolve automatically": the GAUSSFORGE_THREADS
// environment variable if set, hardware concurrency otherwise.
inline std::atomic<int>& ThreadCountSlot() {
    static std::atomic<int> count{0};
    return count;
}

inline void SetThreadCount(int n) {
    Require(n >= 0, "thread count must be >= 0");
    ThreadCountSlot().store(n);
}

inline int ResolveThreadCount() {
    int n = ThreadCountSlot().load();
    if (n > 0) return n;
    if (const char* env = std::getenv("GAUSSFORGE_THREADS")) {
        int parsed = std::atoi(env);
        if (parsed > 0) return parsed;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

// Runs body(chunk_index, begin, end) over [0,n) split into fixed chunks of
// `grain` items. Chunk boundaries depend only on n and grain, never on the
// worker count, so results are reproducible for any thread configuration as
// long as chunks write disjoint state. Order-sensitive reductions should
// store per-chunk partials (indexed by chunk_index) and fold them serially
// after this returns.
template <class Body>
void ParallelForChunked(int64_t n, int64_t grain, Body&& body) {
    if (n <= 0) return;
    Require(grain > 0, "grain must be positive");
    const int64_t num_chunks = (n + grain - 1) / grain;
    const int workers = std::min<int64_t>(ResolveThreadCount(), num_chunks);
    if (workers <= 1) {
        for (int64_t c = 0; c < num_chunks; ++c) {
            body(c, c * grain, std::min(n, (c + 1) * grain));
        }
        return;
    }
    std::atomic<int64_t> next{0};
    auto run = [&]() {
        for (;;) {
            const int64_t c = next.fetch_add(1);
            if (c >= num_chunks) return;
            body(c, c * grain, std::min(n, (c + 1) * grain));
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    for (int i = 1; i < workers; ++i) pool.emplace_back(run);
    run();
    for (auto& t : pool) t.join();
}

template <class Body>
void ParallelFor(int64_t n, int64_t grain, Body&& body) {
    ParallelForChunked(n, grain, [&](int64_t, int64_t begin, int64_t end) {
        for (int64_t i = begin; i < end; ++i) body(i);
    });
}

}  // namespace gf
