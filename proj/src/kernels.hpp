#pragma once

#include <cstdint>
#include <functional>

// Dense inner loops shared by the tensor ops. All entry points produce
// bit-identical results for any worker thread count: the iteration space is
// split so that each output element is accumulated by exactly one thread in
// the serial order.

namespace sleepscore::detail {

void parallel_for(std::int64_t n, std::int64_t grain,
                  const std::function<void(std::int64_t, std::int64_t)>& fn);

void set_threads_impl(int n);
int get_threads_impl();

// c[m,n] (+)= a[m,k] * b[k,n]
void gemm_nn(std::int64_t m, std::int64_t n, std::int64_t k, const double* a,
             const double* b, double* c, bool accumulate);

// c[m,n] (+)= a[m,k] * b[n,k]^T
void gemm_nt(std::int64_t m, std::int64_t n, std::int64_t k, const double* a,
             const double* b, double* c, bool accumulate);

// c[m,n] (+)= a[k,m]^T * b[k,n]
void gemm_tn(std::int64_t m, std::int64_t n, std::int64_t k, const double* a,
             const double* b, double* c, bool accumulate);

}  // namespace sleepscore::detail
