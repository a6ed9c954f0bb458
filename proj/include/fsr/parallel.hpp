#pragma once

#include <cstdlib>
#include <functional>
#include <string>
#include <thread>
#include <vector>

namespace fsr {

// Worker count: FILAMENT_SR_WORKERS if set (>=1), else hardware concurrency.
inline int worker_count() {
    if (const char* env = std::getenv("FILAMENT_SR_WORKERS")) {
        int n = std::atoi(env);
        if (n >= 1) return n;
    }
    unsigned hc = std::thread::hardware_concurrency();
    return hc ? static_cast<int>(hc) : 1;
}

// Runs fn(i) for i in [begin, end).  Iterations are split into contiguous
// static chunks, one per worker; each iteration writes only its own outputs,
// so results are byte-identical for any worker count.
inline void parallel_for(long begin, long end,
                         const std::function<void(long)>& fn) {
    long n = end - begin;
    if (n <= 0) return;
    int workers = worker_count();
    if (workers <= 1 || n == 1) {
        for (long i = begin; i < end; ++i) fn(i);
        return;
    }
    if (workers > n) workers = static_cast<int>(n);
    long chunk = n / workers;
    long rem = n % workers;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers));
    long lo = begin;
    for (int w = 0; w < workers; ++w) {
        long hi = lo + chunk + (w < rem ? 1 : 0);
        pool.emplace_back([lo, hi, &fn] {
            for (long i = lo; i < hi; ++i) fn(i);
        });
        lo = hi;
    }
    for (auto& t : pool) t.join();
}

}  // namespace fsr
