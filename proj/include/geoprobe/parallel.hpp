#pragma once

#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace geoprobe {

// Runs fn(i) for i in [begin, end) on up to n_workers threads. Work items are
// claimed from a shared atomic counter; the first exception is rethrown on
// the calling thread after all workers join.
template <typename Fn>
void parallel_for(std::size_t begin, std::size_t end, int n_workers, Fn&& fn) {
    if (end <= begin) return;
    const std::size_t count = end - begin;
    if (n_workers <= 1 || count == 1) {
        for (std::size_t i = begin; i < end; ++i) fn(i);
        return;
    }
    const std::size_t threads = std::min<std::size_t>(static_cast<std::size_t>(n_workers), count);

    std::atomic<std::size_t> next{begin};
    std::exception_ptr error;
    std::mutex error_mutex;

    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= end) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error) error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace geoprobe
