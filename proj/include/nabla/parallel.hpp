#pragma once

// Worker-count policy and a minimal parallel loop. NABLA_THREADS caps the
// number of workers; results must go to disjoint memory so the split cannot
// change any bits.

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace nabla {

inline int worker_count() {
    int hw = int(std::thread::hardware_concurrency());
    if (hw < 1) hw = 1;
    if (const char* env = std::getenv("NABLA_THREADS")) {
        char* end = nullptr;
        long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v >= 1)
            return std::min(hw, int(std::min(v, long(256))));
    }
    return hw;
}

// Runs fn(i) for i in [0, n). Each index writes only its own outputs. The
// first exception raised by any worker is rethrown on the calling thread.
template <typename Fn>
void parallel_for(int64_t n, Fn&& fn) {
    int workers = std::min<int64_t>(worker_count(), n);
    if (workers <= 1) {
        for (int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(size_t(workers));
    std::exception_ptr failure;
    std::mutex failure_mu;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (int64_t i = w; i < n; i += workers) fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(failure_mu);
                if (!failure) failure = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

}  // namespace nabla
