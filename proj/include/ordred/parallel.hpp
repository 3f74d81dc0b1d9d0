#pragma once
#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace ordred {

inline int default_threads()
{
    const unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
}

/// Runs fn(i) for i in [0, n). Each index is processed exactly once; callers write
/// results into per-index slots so the outcome does not depend on `threads`.
/// The first exception thrown by any worker is rethrown on the calling thread.
template <class F>
void parallel_for(std::size_t n, int threads, F&& fn)
{
    const std::size_t workers = std::min<std::size_t>(std::max(threads, 1), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::exception_ptr first_error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            // static interleaved schedule
            for (std::size_t i = w; i < n; i += workers) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

/// Pairwise (tree) summation over a range of items, fixed association order.
template <class T, class Get>
T pairwise_sum(std::size_t begin, std::size_t end, Get&& get)
{
    if (end - begin == 1) return get(begin);
    const std::size_t mid = begin + (end - begin) / 2;
    T left = pairwise_sum<T>(begin, mid, get);
    left += pairwise_sum<T>(mid, end, get);
    return left;
}

} // namespace ordred
