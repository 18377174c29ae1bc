// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>

// Dense inner loops used by the layers and metrics. Every kernel exists twice:
// `sketch::kernels::serial` is the plain reference and `sketch::kernels` is the
// OpenMP version. Both evaluate each output element with the same operation
// order, so their results are bitwise identical for any thread count.
namespace sketch::kernels {

/// C[m x n] (+)= A[m x k] * B[k x n]
void gemm(std::span<const float> a, std::span<const float> b, std::span<float> c,
          std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);

/// C[m x n] (+)= A[m x k] * B[n x k]^T
void gemm_nt(std::span<const float> a, std::span<const float> b, std::span<float> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);

/// C[k x n] (+)= A[m x k]^T * B[m x n]
void gemm_tn(std::span<const float> a, std::span<const float> b, std::span<float> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);

/// Valid-mode separable filter: dst[(h-t+1) x (w-t+1)] from src[h x w] with
/// the same symmetric taps applied along rows and then columns.
void separable_filter_valid(std::span<const double> src, std::size_t h, std::size_t w,
                            std::span<const double> taps, std::span<double> dst);

/// Number of OpenMP threads the parallel kernels will use.
int thread_count();

namespace serial {

void gemm(std::span<const float> a, std::span<const float> b, std::span<float> c,
          std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
void gemm_nt(std::span<const float> a, std::span<const float> b, std::span<float> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
void gemm_tn(std::span<const float> a, std::span<const float> b, std::span<float> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
void separable_filter_valid(std::span<const double> src, std::size_t h, std::size_t w,
                            std::span<const double> taps, std::span<double> dst);

}  // namespace serial
}  // namespace sketch::kernels
