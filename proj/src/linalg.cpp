/* Copyright 2026 The invseg Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "invseg/linalg.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <string>

#include <omp.h>

#include "invseg/error.hpp"

namespace invseg {
namespace {

#if defined(__AVX512F__)
constexpr std::size_t kMr = 8;
constexpr std::size_t kNr = 16;
#else
constexpr std::size_t kMr = 4;
constexpr std::size_t kNr = 8;
#endif
constexpr std::size_t kKc = 256;
constexpr std::size_t kMc = 96;
constexpr std::size_t kNc = 2048;

std::atomic<int> g_threads{0};

int threads_from_env() {
  if (const char* env = std::getenv("INVSEG_THREADS")) {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end != env && v > 0) return static_cast<int>(v);
  }
  return omp_get_max_threads();
}

// Packs an mc x kc block of op(A) into row panels of kMr, k-major inside a
// panel, zero padding the ragged last panel.
void pack_a(Transpose trans, const double* a, std::size_t lda, std::size_t i0,
            std::size_t mc, std::size_t k0, std::size_t kc, double* out) {
  for (std::size_t ip = 0; ip < mc; ip += kMr) {
    const std::size_t rows = std::min(kMr, mc - ip);
    for (std::size_t kk = 0; kk < kc; ++kk) {
      for (std::size_t r = 0; r < kMr; ++r) {
        double v = 0.0;
        if (r < rows) {
          const std::size_t i = i0 + ip + r;
          const std::size_t k = k0 + kk;
          v = trans == Transpose::kNo ? a[i * lda + k] : a[k * lda + i];
        }
        *out++ = v;
      }
    }
  }
}

void pack_b(Transpose trans, const double* b, std::size_t ldb, std::size_t k0,
            std::size_t kc, std::size_t j0, std::size_t nc, double* out) {
  for (std::size_t jp = 0; jp < nc; jp += kNr) {
    const std::size_t cols = std::min(kNr, nc - jp);
    for (std::size_t kk = 0; kk < kc; ++kk) {
      const std::size_t k = k0 + kk;
      if (trans == Transpose::kNo && cols == kNr) {
        const double* src = b + k * ldb + j0 + jp;
        std::copy(src, src + kNr, out);
        out += kNr;
        continue;
      }
      for (std::size_t c = 0; c < kNr; ++c) {
        double v = 0.0;
        if (c < cols) {
          const std::size_t j = j0 + jp + c;
          v = trans == Transpose::kNo ? b[k * ldb + j] : b[j * ldb + k];
        }
        *out++ = v;
      }
    }
  }
}

void micro_kernel(std::size_t kc, const double* __restrict ap,
                  const double* __restrict bp, double alpha, double* c,
                  std::size_t ldc, std::size_t rows, std::size_t cols) {
  alignas(64) double acc[kMr][kNr] = {};
  for (std::size_t kk = 0; kk < kc; ++kk) {
    const double* __restrict av = ap + kk * kMr;
    const double* __restrict bv = bp + kk * kNr;
    for (std::size_t r = 0; r < kMr; ++r) {
      const double ar = av[r];
#pragma omp simd
      for (std::size_t j = 0; j < kNr; ++j) acc[r][j] += ar * bv[j];
    }
  }
  for (std::size_t r = 0; r < rows; ++r) {
    double* crow = c + r * ldc;
    for (std::size_t j = 0; j < cols; ++j) crow[j] += alpha * acc[r][j];
  }
}

}  // namespace

void set_kernel_threads(int threads) { g_threads = std::max(0, threads); }

int kernel_threads() {
  int t = g_threads.load();
  if (t == 0) {
    t = threads_from_env();
    g_threads = t;
  }
  return t;
}

void gemm_raw(Transpose trans_a, Transpose trans_b, std::size_t m,
              std::size_t n, std::size_t k, double alpha, const double* a,
              std::size_t lda, const double* b, std::size_t ldb, double beta,
              double* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * ldc;
    if (beta == 0.0) {
      std::fill(crow, crow + n, 0.0);
    } else if (beta != 1.0) {
      for (std::size_t j = 0; j < n; ++j) crow[j] *= beta;
    }
  }
  if (m == 0 || n == 0 || k == 0 || alpha == 0.0) return;

  const int threads = kernel_threads();
  const std::size_t nc_max = std::min(kNc, (n + kNr - 1) / kNr * kNr);
  const std::size_t kc_max = std::min(kKc, k);
  std::vector<double> bpack(nc_max * kc_max);
  const bool parallel = threads > 1 && m * n * k > (1u << 18);

  for (std::size_t jc = 0; jc < n; jc += kNc) {
    const std::size_t nc = std::min(kNc, n - jc);
    for (std::size_t pc = 0; pc < k; pc += kKc) {
      const std::size_t kc = std::min(kKc, k - pc);
      pack_b(trans_b, b, ldb, pc, kc, jc, nc, bpack.data());
      const std::size_t blocks = (m + kMc - 1) / kMc;
#pragma omp parallel num_threads(threads) if (parallel)
      {
        std::vector<double> apack(kMc * kc);
#pragma omp for schedule(static)
        for (std::size_t blk = 0; blk < blocks; ++blk) {
          const std::size_t ic = blk * kMc;
          const std::size_t mc = std::min(kMc, m - ic);
          pack_a(trans_a, a, lda, ic, mc, pc, kc, apack.data());
          for (std::size_t jr = 0; jr < nc; jr += kNr) {
            const std::size_t cols = std::min(kNr, nc - jr);
            const double* bp = bpack.data() + jr * kc;
            for (std::size_t ir = 0; ir < mc; ir += kMr) {
              const std::size_t rows = std::min(kMr, mc - ir);
              micro_kernel(kc, apack.data() + ir * kc, bp, alpha,
                           c + (ic + ir) * ldc + jc + jr, ldc, rows, cols);
            }
          }
        }
      }
    }
  }
}

void gemm(Transpose trans_a, Transpose trans_b, double alpha, const Matrix& a,
          const Matrix& b, double beta, Matrix& c) {
  const std::size_t m = trans_a == Transpose::kNo ? a.rows : a.cols;
  const std::size_t ka = trans_a == Transpose::kNo ? a.cols : a.rows;
  const std::size_t kb = trans_b == Transpose::kNo ? b.rows : b.cols;
  const std::size_t n = trans_b == Transpose::kNo ? b.cols : b.rows;
  if (ka != kb || c.rows != m || c.cols != n) {
    throw_invalid("gemm: shape mismatch (" + std::to_string(m) + "x" +
                  std::to_string(ka) + ") * (" + std::to_string(kb) + "x" +
                  std::to_string(n) + ") -> (" + std::to_string(c.rows) + "x" +
                  std::to_string(c.cols) + ")");
  }
  gemm_raw(trans_a, trans_b, m, n, ka, alpha, a.data.data(), a.cols,
           b.data.data(), b.cols, beta, c.data.data(), c.cols);
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows, b.cols);
  gemm(Transpose::kNo, Transpose::kNo, 1.0, a, b, 0.0, c);
  return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows, b.rows);
  gemm(Transpose::kNo, Transpose::kYes, 1.0, a, b, 0.0, c);
  return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  Matrix c(a.cols, b.cols);
  gemm(Transpose::kYes, Transpose::kNo, 1.0, a, b, 0.0, c);
  return c;
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
  return t;
}

void softmax_rows(Matrix& m) {
  for (std::size_t i = 0; i < m.rows; ++i) {
    auto row = m.row(i);
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double& v : row) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (double& v : row) v /= sum;
  }
}

Matrix softmax_rows_vjp(const Matrix& y, const Matrix& dy) {
  if (y.rows != dy.rows || y.cols != dy.cols)
    throw_invalid("softmax_rows_vjp: shape mismatch");
  Matrix dx(y.rows, y.cols);
  for (std::size_t i = 0; i < y.rows; ++i) {
    double dot = 0.0;
    for (std::size_t j = 0; j < y.cols; ++j) dot += y(i, j) * dy(i, j);
    for (std::size_t j = 0; j < y.cols; ++j)
      dx(i, j) = y(i, j) * (dy(i, j) - dot);
  }
  return dx;
}

}  // namespace invseg
