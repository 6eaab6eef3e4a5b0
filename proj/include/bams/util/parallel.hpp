#pragma once

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

#include "bams/error.hpp"

namespace bams {

/// Worker cap: BAMS_THREADS if set, else the hardware concurrency.
inline std::size_t worker_count() {
    if (const char* env = std::getenv("BAMS_THREADS"); env && *env) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (*end != '\0' || v < 1) throw ConfigError(std::string("BAMS_THREADS must be a positive integer, got '") + env + "'");
        return static_cast<std::size_t>(v);
    }
    const auto hw = std::thread::hardware_concurrency();
    return hw ? hw : 1;
}

/// Runs f(i) for i in [0, n). Each index is handled by exactly one worker, so
/// results written to per-index slots do not depend on the worker count. The
/// exception of the lowest failing index is rethrown.
template <class F>
void parallel_for(std::size_t n, F&& f, std::size_t workers = worker_count()) {
    workers = std::max<std::size_t>(1, std::min(workers, n));
    std::vector<std::exception_ptr> errors(n);
    auto run = [&](std::size_t w) {
        for (std::size_t i = w; i < n; i += workers) {
            try {
                f(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    if (workers <= 1) {
        run(0);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run, w);
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace bams
