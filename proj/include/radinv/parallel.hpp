#pragma once

// Minimal fork-join helper. Work is split into caller-defined independent
// items; each item owns its outputs, so results never depend on how many
// workers run them.

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace radinv {

inline std::atomic<int>& thread_cap_storage() {
    static std::atomic<int> cap{0};
    return cap;
}

/// Caps worker threads; 0 means hardware concurrency.
inline void set_thread_cap(int cap) { thread_cap_storage().store(std::max(0, cap)); }

inline int worker_count() {
    const int cap = thread_cap_storage().load();
    const int hw = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    return cap > 0 ? std::min(cap, hw) : hw;
}

/// Runs fn(i) for i in [0, n). Items must write disjoint outputs.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    const int workers = static_cast<int>(std::min<std::size_t>(n, static_cast<std::size_t>(worker_count())));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr err;
    std::mutex err_mu;
    auto body = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lk(err_mu);
                if (!err) err = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers - 1));
    for (int w = 1; w < workers; ++w) pool.emplace_back(body);
    body();
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);
}

}  // namespace radinv
