#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace tabtext {

/// Runs fn(i) for i in [0, n) over contiguous chunks, one chunk per worker.
/// The partition depends only on (n, threads), so per-index outputs are
/// reproducible regardless of scheduling. The first worker exception is
/// rethrown on the calling thread.
template <typename Fn>
void parallel_for(size_t n, size_t threads, Fn&& fn)
{
    threads = std::max<size_t>(1, std::min(threads, n));
    if (threads <= 1) {
        for (size_t i = 0; i < n; ++i) {
            fn(i);
        }
        return;
    }
    std::vector<std::exception_ptr> errors(threads);
    std::vector<std::thread> workers;
    workers.reserve(threads);
    size_t chunk = (n + threads - 1) / threads;
    for (size_t w = 0; w < threads; ++w) {
        size_t begin = w * chunk;
        size_t end = std::min(n, begin + chunk);
        workers.emplace_back([&, w, begin, end] {
            try {
                for (size_t i = begin; i < end; ++i) {
                    fn(i);
                }
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : workers) {
        t.join();
    }
    for (auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
}

}  // namespace tabtext
