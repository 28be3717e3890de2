#pragma once

#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace genepanel {

/// Runs fn(i) for i in [begin, end) across up to n_threads workers.
///
/// Iterations must write only to disjoint, pre-allocated outputs; no reduction
/// happens here.  Results are then independent of the thread count, which is
/// what makes --threads a pure throughput knob.
inline void parallel_for(std::size_t begin, std::size_t end, int n_threads,
                         const std::function<void(std::size_t)>& fn) {
    const std::size_t count = end > begin ? end - begin : 0;
    if (count == 0) return;
    std::size_t workers = n_threads > 1 ? static_cast<std::size_t>(n_threads) : 1;
    if (workers > count) workers = count;
    if (workers == 1) {
        for (std::size_t i = begin; i < end; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    const std::size_t chunk = (count + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t lo = begin + w * chunk;
        const std::size_t hi = lo + chunk < end ? lo + chunk : end;
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn] {
            for (std::size_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace genepanel
