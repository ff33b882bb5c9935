// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace lball {

/// Worker count: explicit value if positive, else LBALL_WORKERS, else the
/// hardware concurrency.
inline int resolve_workers(int requested)
{
    if (requested > 0) {
        return requested;
    }
    if (const char* env = std::getenv("LBALL_WORKERS")) {
        int v = std::atoi(env);
        if (v > 0) {
            return v;
        }
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs body(i) for i in [0, count) on `workers` threads.  Results must be
/// written to per-index slots; if several indices throw, the exception of the
/// lowest index is rethrown so failures are reported deterministically.
template <class Body>
void parallel_for(std::size_t count, int workers, Body&& body)
{
    if (count == 0) {
        return;
    }
    auto nthreads = static_cast<std::size_t>(std::max(1, workers));
    nthreads = std::min(nthreads, count);
    if (nthreads == 1) {
        for (std::size_t i = 0; i < count; ++i) {
            body(i);
        }
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(count);
    std::atomic<bool> failed{false};
    auto worker = [&] {
        while (true) {
            std::size_t i = next.fetch_add(1);
            if (i >= count) {
                return;
            }
            try {
                body(i);
            } catch (...) {
                errors[i] = std::current_exception();
                failed = true;
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(nthreads - 1);
    for (std::size_t t = 1; t < nthreads; ++t) {
        pool.emplace_back(worker);
    }
    worker();
    for (auto& th : pool) {
        th.join();
    }
    if (failed) {
        for (auto& e : errors) {
            if (e) {
                std::rethrow_exception(e);
            }
        }
    }
}

}  // namespace lball
