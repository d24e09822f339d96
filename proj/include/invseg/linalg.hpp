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

#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace invseg {

// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const {
    return data[r * cols + c];
  }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const {
    return {data.data() + r * cols, cols};
  }
  bool empty() const { return data.empty(); }
};

enum class Transpose { kNo, kYes };

// C = alpha * op(A) * op(B) + beta * C, blocked and packed with OpenMP over
// row panels. Shapes are checked; C must already have the output shape.
void gemm(Transpose trans_a, Transpose trans_b, double alpha, const Matrix& a,
          const Matrix& b, double beta, Matrix& c);

// Raw-pointer form used by kernels that work on panels of larger matrices.
// Leading dimensions are in elements of the stored (untransposed) layout.
void gemm_raw(Transpose trans_a, Transpose trans_b, std::size_t m,
              std::size_t n, std::size_t k, double alpha, const double* a,
              std::size_t lda, const double* b, std::size_t ldb, double beta,
              double* c, std::size_t ldc);

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_nt(const Matrix& a, const Matrix& b);  // a * b^T
Matrix matmul_tn(const Matrix& a, const Matrix& b);  // a^T * b

Matrix transpose(const Matrix& a);

// In-place numerically stable softmax over each row.
void softmax_rows(Matrix& m);

// Given softmax output y and upstream dy, returns dx = y * (dy - <dy, y>).
Matrix softmax_rows_vjp(const Matrix& y, const Matrix& dy);

// Thread cap for kernels. Reads INVSEG_THREADS once; explicit calls override
// and a value <= 0 restores the environment default.
void set_kernel_threads(int threads);
int kernel_threads();

}  // namespace invseg
