#include "kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cstring>
#include <thread>
#include <vector>

namespace sleepscore::detail {

namespace {

std::atomic<int> g_num_threads{0};  // 0 = pick at first use

int effective_threads() {
    int n = g_num_threads.load(std::memory_order_relaxed);
    if (n <= 0) {
        const unsigned hw = std::thread::hardware_concurrency();
        n = static_cast<int>(hw == 0 ? 1 : std::min(hw, 8u));
        g_num_threads.store(n, std::memory_order_relaxed);
    }
    return n;
}

}  // namespace

void set_threads_impl(int n) { g_num_threads.store(n, std::memory_order_relaxed); }
int get_threads_impl() { return effective_threads(); }

void parallel_for(std::int64_t n, std::int64_t grain,
                  const std::function<void(std::int64_t, std::int64_t)>& fn) {
    if (n <= 0) {
        return;
    }
    const int threads = effective_threads();
    if (threads <= 1 || n <= grain) {
        fn(0, n);
        return;
    }
    const std::int64_t chunks = std::min<std::int64_t>(threads, (n + grain - 1) / grain);
    const std::int64_t step = (n + chunks - 1) / chunks;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(chunks - 1));
    for (std::int64_t c = 1; c < chunks; ++c) {
        const std::int64_t lo = c * step;
        const std::int64_t hi = std::min(n, lo + step);
        if (lo >= hi) {
            break;
        }
        pool.emplace_back([&fn, lo, hi] { fn(lo, hi); });
    }
    fn(0, std::min(n, step));
    for (auto& t : pool) {
        t.join();
    }
}

namespace {

constexpr std::int64_t kBlockK = 64;

// Per-thread body for gemm_nn over a row range [i0, i1). k is blocked so the
// streamed slice of b stays cache resident; the per-element accumulation
// order (k ascending) is independent of the blocking and of the thread count.
void gemm_nn_rows(std::int64_t i0, std::int64_t i1, std::int64_t n, std::int64_t k,
                  const double* a, const double* b, double* c, bool accumulate) {
    if (!accumulate) {
        std::memset(c + i0 * n, 0, static_cast<std::size_t>((i1 - i0) * n) * sizeof(double));
    }
    for (std::int64_t kb = 0; kb < k; kb += kBlockK) {
        const std::int64_t kend = std::min(k, kb + kBlockK);
        for (std::int64_t i = i0; i < i1; ++i) {
            const double* arow = a + i * k;
            double* crow = c + i * n;
            for (std::int64_t kk = kb; kk < kend; ++kk) {
                const double av = arow[kk];
                if (av == 0.0) {
                    continue;
                }
                const double* brow = b + kk * n;
                for (std::int64_t j = 0; j < n; ++j) {
                    crow[j] += av * brow[j];
                }
            }
        }
    }
}

}  // namespace

void gemm_nn(std::int64_t m, std::int64_t n, std::int64_t k, const double* a,
             const double* b, double* c, bool accumulate) {
    parallel_for(m, std::max<std::int64_t>(1, 65536 / std::max<std::int64_t>(1, n)),
                 [&](std::int64_t i0, std::int64_t i1) {
                     gemm_nn_rows(i0, i1, n, k, a, b, c, accumulate);
                 });
}

void gemm_nt(std::int64_t m, std::int64_t n, std::int64_t k, const double* a,
             const double* b, double* c, bool accumulate) {
    parallel_for(m, std::max<std::int64_t>(1, 65536 / std::max<std::int64_t>(1, n)),
                 [&](std::int64_t i0, std::int64_t i1) {
                     for (std::int64_t i = i0; i < i1; ++i) {
                         const double* arow = a + i * k;
                         double* crow = c + i * n;
                         for (std::int64_t j = 0; j < n; ++j) {
                             const double* brow = b + j * k;
                             double acc = 0.0;
                             for (std::int64_t kk = 0; kk < k; ++kk) {
                                 acc += arow[kk] * brow[kk];
                             }
                             crow[j] = accumulate ? crow[j] + acc : acc;
                         }
                     }
                 });
}

void gemm_tn(std::int64_t m, std::int64_t n, std::int64_t k, const double* a,
             const double* b, double* c, bool accumulate) {
    parallel_for(m, std::max<std::int64_t>(1, 65536 / std::max<std::int64_t>(1, n)),
                 [&](std::int64_t i0, std::int64_t i1) {
                     if (!accumulate) {
                         std::memset(c + i0 * n, 0,
                                     static_cast<std::size_t>((i1 - i0) * n) * sizeof(double));
                     }
                     for (std::int64_t kk = 0; kk < k; ++kk) {
                         const double* brow = b + kk * n;
                         const double* acol = a + kk * m;
                         for (std::int64_t i = i0; i < i1; ++i) {
                             const double av = acol[i];
                             if (av == 0.0) {
                                 continue;
                             }
                             double* crow = c + i * n;
                             for (std::int64_t j = 0; j < n; ++j) {
                                 crow[j] += av * brow[j];
                             }
                         }
                     }
                 });
}

}  // namespace sleepscore::detail
