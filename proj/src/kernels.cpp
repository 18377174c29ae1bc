// SPDX-License-Identifier: Apache-2.0
#include "sketch/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <vector>

namespace sketch::kernels {
namespace {

// Below this many multiply-adds the parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;

// Up to kBlock output rows are computed together so each B element is read
// and widened once per block. Each output element sums its terms in the same
// order (q = 0, 1, ...) in double and is rounded to float once, whatever the
// blocking or thread count.
constexpr std::size_t kBlock = 4;

double* row_buffer(std::size_t n) {
  thread_local std::vector<double> buf;
  if (buf.size() < n) buf.resize(n);
  return buf.data();
}

// Output row r of the block is sum_q coef[r][q * stride] * B[q].
void gemm_block(const float* const* coef, std::size_t stride, std::size_t rows, const float* b,
                std::size_t q_count, std::size_t n, float* const* c_rows, bool accumulate) {
  double* acc = row_buffer(kBlock * n);
  std::fill(acc, acc + rows * n, 0.0);
  if (rows == kBlock) {
    double *a0 = acc, *a1 = acc + n, *a2 = acc + 2 * n, *a3 = acc + 3 * n;
    for (std::size_t q = 0; q < q_count; ++q) {
      const double s0 = coef[0][q * stride], s1 = coef[1][q * stride];
      const double s2 = coef[2][q * stride], s3 = coef[3][q * stride];
      const float* b_row = b + q * n;
      for (std::size_t j = 0; j < n; ++j) {
        const double v = b_row[j];
        a0[j] += s0 * v;
        a1[j] += s1 * v;
        a2[j] += s2 * v;
        a3[j] += s3 * v;
      }
    }
  } else {
    for (std::size_t q = 0; q < q_count; ++q)
      for (std::size_t r = 0; r < rows; ++r) {
        const double s = coef[r][q * stride];
        const float* b_row = b + q * n;
        double* a = acc + r * n;
        for (std::size_t j = 0; j < n; ++j) a[j] += s * b_row[j];
      }
  }
  for (std::size_t r = 0; r < rows; ++r) {
    float* c = c_rows[r];
    const double* a = acc + r * n;
    if (accumulate)
      for (std::size_t j = 0; j < n; ++j) c[j] = static_cast<float>(c[j] + a[j]);
    else
      for (std::size_t j = 0; j < n; ++j) c[j] = static_cast<float>(a[j]);
  }
}

// Block `blk` of C = A B with A [m x k].
inline void gemm_rows(const float* a, const float* b, float* c, std::size_t blk, std::size_t m,
                      std::size_t k, std::size_t n, bool accumulate) {
  const std::size_t i0 = blk * kBlock, rows = std::min(kBlock, m - i0);
  const float* coef[kBlock];
  float* out[kBlock];
  for (std::size_t r = 0; r < rows; ++r) {
    coef[r] = a + (i0 + r) * k;
    out[r] = c + (i0 + r) * n;
  }
  gemm_block(coef, 1, rows, b, k, n, out, accumulate);
}

// Block `blk` of C = A^T B with A [m x k]; output rows index the columns of A.
inline void gemm_tn_rows(const float* a, const float* b, float* c, std::size_t blk,
                         std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  const std::size_t p0 = blk * kBlock, rows = std::min(kBlock, k - p0);
  const float* coef[kBlock];
  float* out[kBlock];
  for (std::size_t r = 0; r < rows; ++r) {
    coef[r] = a + p0 + r;
    out[r] = c + (p0 + r) * n;
  }
  gemm_block(coef, k, rows, b, m, n, out, accumulate);
}

std::size_t blocks(std::size_t rows) { return (rows + kBlock - 1) / kBlock; }

std::vector<float> transpose(std::span<const float> b, std::size_t rows, std::size_t cols) {
  std::vector<float> t(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = b[r * cols + c];
  return t;
}

inline void filter_row_h(const double* src, double* dst, std::size_t w, const double* taps,
                         std::size_t t) {
  const std::size_t ow = w - t + 1;
  for (std::size_t x = 0; x < ow; ++x) {
    double acc = 0.0;
    for (std::size_t i = 0; i < t; ++i) acc += taps[i] * src[x + i];
    dst[x] = acc;
  }
}

inline void filter_row_v(const double* tmp, double* dst, std::size_t y, std::size_t ow,
                         const double* taps, std::size_t t) {
  for (std::size_t x = 0; x < ow; ++x) {
    double acc = 0.0;
    for (std::size_t i = 0; i < t; ++i) acc += taps[i] * tmp[(y + i) * ow + x];
    dst[y * ow + x] = acc;
  }
}

}  // namespace

int thread_count() { return omp_get_max_threads(); }

void gemm(std::span<const float> a, std::span<const float> b, std::span<float> c,
          std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  const auto nb = static_cast<std::ptrdiff_t>(blocks(m));
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelWork)
  for (std::ptrdiff_t i = 0; i < nb; ++i)
    gemm_rows(a.data(), b.data(), c.data(), static_cast<std::size_t>(i), m, k, n, accumulate);
}

void gemm_nt(std::span<const float> a, std::span<const float> b, std::span<float> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  const auto bt = transpose(b, n, k);
  gemm(a, bt, c, m, k, n, accumulate);
}

void gemm_tn(std::span<const float> a, std::span<const float> b, std::span<float> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  const auto nb = static_cast<std::ptrdiff_t>(blocks(k));
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelWork)
  for (std::ptrdiff_t p = 0; p < nb; ++p)
    gemm_tn_rows(a.data(), b.data(), c.data(), static_cast<std::size_t>(p), m, k, n, accumulate);
}

void separable_filter_valid(std::span<const double> src, std::size_t h, std::size_t w,
                            std::span<const double> taps, std::span<double> dst) {
  const std::size_t t = taps.size();
  const std::size_t ow = w - t + 1, oh = h - t + 1;
  std::vector<double> tmp(h * ow);
  const auto hrows = static_cast<std::ptrdiff_t>(h);
  const auto orows = static_cast<std::ptrdiff_t>(oh);
#pragma omp parallel
  {
#pragma omp for schedule(static)
    for (std::ptrdiff_t y = 0; y < hrows; ++y)
      filter_row_h(src.data() + y * w, tmp.data() + y * ow, w, taps.data(), t);
#pragma omp for schedule(static)
    for (std::ptrdiff_t y = 0; y < orows; ++y)
      filter_row_v(tmp.data(), dst.data(), y, ow, taps.data(), t);
  }
}

namespace serial {

void gemm(std::span<const float> a, std::span<const float> b, std::span<float> c,
          std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < blocks(m); ++i) gemm_rows(a.data(), b.data(), c.data(), i, m, k, n, accumulate);
}

void gemm_nt(std::span<const float> a, std::span<const float> b, std::span<float> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  const auto bt = transpose(b, n, k);
  gemm(a, bt, c, m, k, n, accumulate);
}

void gemm_tn(std::span<const float> a, std::span<const float> b, std::span<float> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t p = 0; p < blocks(k); ++p)
    gemm_tn_rows(a.data(), b.data(), c.data(), p, m, k, n, accumulate);
}

void separable_filter_valid(std::span<const double> src, std::size_t h, std::size_t w,
                            std::span<const double> taps, std::span<double> dst) {
  const std::size_t t = taps.size();
  const std::size_t ow = w - t + 1, oh = h - t + 1;
  std::vector<double> tmp(h * ow);
  for (std::size_t y = 0; y < h; ++y)
    filter_row_h(src.data() + y * w, tmp.data() + y * ow, w, taps.data(), t);
  for (std::size_t y = 0; y < oh; ++y) filter_row_v(tmp.data(), dst.data(), y, ow, taps.data(), t);
}

}  // namespace serial
}  // namespace sketch::kernels
