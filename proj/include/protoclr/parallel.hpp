#pragma once

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace protoclr {

// Thread cap from PROTO_CONTRAST_THREADS; 0 or unset means hardware
// concurrency. Re-read on every call so tests can adjust it at runtime.
inline int thread_budget() {
    int hw = static_cast<int>(std::thread::hardware_concurrency());
    if (hw <= 0) hw = 1;
    if (const char* env = std::getenv("PROTO_CONTRAST_THREADS")) {
        const long cap = std::strtol(env, nullptr, 10);
        if (cap > 0) return std::min<long>(cap, hw) > 0 ? static_cast<int>(std::min<long>(cap, hw)) : 1;
    }
    return hw;
}

// Splits [0, n) into contiguous chunks, one worker per chunk. Each index is
// processed exactly once by exactly one thread, so results are identical for
// any thread count as long as the body writes only to its own index.
inline void parallel_for(int n, const std::function<void(int)>& body) {
    if (n <= 0) return;
    const int workers = std::min(thread_budget(), n);
    if (workers <= 1) {
        for (int i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    const int chunk = (n + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
        const int begin = w * chunk;
        const int end = std::min(n, begin + chunk);
        if (begin >= end) break;
        pool.emplace_back([begin, end, &body] {
            for (int i = begin; i < end; ++i) body(i);
        });
    }
    for (auto& t : pool) t.join();
}

} // namespace protoclr
