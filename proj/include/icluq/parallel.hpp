#pragma once

// Minimal fork-join helper. Work items are claimed through an atomic counter;
// callers that need determinism must write into per-item slots and reduce in
// index order afterwards.

#include <atomic>
#include <cstdint>
#include <exception>
#include <thread>
#include <vector>

namespace icluq {

template <typename F>
void parallel_for(std::int64_t n, int threads, F&& body) {
    if (threads <= 1 || n <= 1) {
        for (std::int64_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<std::int64_t> next{0};
    std::exception_ptr error;
    std::atomic<bool> failed{false};
    auto worker = [&]() {
        for (;;) {
            const std::int64_t i = next.fetch_add(1);
            if (i >= n || failed.load()) return;
            try {
                body(i);
            } catch (...) {
                if (!failed.exchange(true)) error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    const int k = static_cast<int>(std::min<std::int64_t>(threads, n));
    pool.reserve(static_cast<std::size_t>(k - 1));
    for (int i = 0; i < k - 1; ++i) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

} // namespace icluq
