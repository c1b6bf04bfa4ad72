#ifndef TCM_PARALLEL_HPP
#define TCM_PARALLEL_HPP

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace tcm {

namespace detail {

inline std::atomic<unsigned>& max_threads_slot() {
    static std::atomic<unsigned> n{std::max(1u, std::thread::hardware_concurrency())};
    return n;
}

inline bool& inside_parallel_region() {
    thread_local bool inside = false;
    return inside;
}

}

/// Caps the number of worker threads used by every parallel loop. 1 means
/// strictly serial execution.
inline void set_max_threads(unsigned n) {
    detail::max_threads_slot() = std::max(1u, n);
}

inline unsigned max_threads() {
    return detail::max_threads_slot();
}

/// Runs body(i) for i in [0, n). Iterations must write disjoint outputs; no
/// reductions happen here, so results do not depend on the schedule. Nested
/// calls run serially on the calling worker.
template<typename Body>
void parallel_for(std::size_t n, Body&& body) {
    const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(max_threads(), n));
    if (workers <= 1 || detail::inside_parallel_region()) {
        for (std::size_t i = 0; i < n; ++i) {
            body(i);
        }
        return;
    }

    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    pool.reserve(workers);
    const std::size_t chunk = (n + workers - 1) / workers;
    for (unsigned w = 0; w < workers; ++w) {
        const std::size_t begin = w * chunk;
        const std::size_t end = std::min(n, begin + chunk);
        pool.emplace_back([&, w, begin, end]() {
            detail::inside_parallel_region() = true;
            try {
                for (std::size_t i = begin; i < end; ++i) {
                    body(i);
                }
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) {
        t.join();
    }
    for (auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
}

}

#endif
