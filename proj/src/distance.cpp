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

#include "invseg/distance.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "invseg/error.hpp"

namespace invseg {
namespace {

constexpr std::size_t kPanelRows = 256;

void check_stochastic(const Matrix& a) {
  if (a.rows != a.cols) throw_invalid("skl_matrix: self-attention must be square");
  for (std::size_t p = 0; p < a.rows; ++p) {
    double sum = 0.0;
    for (double v : a.row(p)) {
      if (v < 0.0 || !std::isfinite(v)) {
        std::ostringstream os;
        os << "skl_matrix: row " << p << " has a negative or non-finite entry";
        throw_invalid(os.str());
      }
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-3) {
      std::ostringstream os;
      os << "skl_matrix: row " << p << " sums to " << sum;
      throw_invalid(os.str());
    }
  }
}

}  // namespace

DistanceMatrix skl_matrix(const Matrix& a_self) {
  check_stochastic(a_self);
  const std::size_t n = a_self.rows;
  DistanceMatrix s(n);
  if (n == 0) return s;

  Matrix log_a(n, n);
  std::vector<double> entropy_term(n, 0.0);
  const int threads = kernel_threads();
#pragma omp parallel for schedule(static) num_threads(threads) if (n > 256)
  for (std::size_t p = 0; p < n; ++p) {
    const double* a = a_self.data.data() + p * n;
    double* l = log_a.data.data() + p * n;
    double e = 0.0;
    for (std::size_t m = 0; m < n; ++m) {
      l[m] = std::log(std::max(a[m], kProbabilityFloor));
      e += a[m] * l[m];
    }
    entropy_term[p] = e;
  }

  // Row panel P against columns q >= p0: X = A_P L^T, Y = L_P A^T. Each pair
  // (p, q) with q >= p is finished here and mirrored.
  std::vector<double> x(kPanelRows * n), y(kPanelRows * n);
  for (std::size_t p0 = 0; p0 < n; p0 += kPanelRows) {
    const std::size_t rows = std::min(kPanelRows, n - p0);
    const std::size_t width = n - p0;
    gemm_raw(Transpose::kNo, Transpose::kYes, rows, width, n, 1.0,
             a_self.data.data() + p0 * n, n, log_a.data.data() + p0 * n, n, 0.0,
             x.data(), width);
    gemm_raw(Transpose::kNo, Transpose::kYes, rows, width, n, 1.0,
             log_a.data.data() + p0 * n, n, a_self.data.data() + p0 * n, n, 0.0,
             y.data(), width);
#pragma omp parallel for schedule(static) num_threads(threads) if (rows * width > 65536)
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t p = p0 + r;
      s.at(p, p) = 0.0f;
      for (std::size_t q = p + 1; q < n; ++q) {
        const std::size_t j = q - p0;
        const double d = (entropy_term[p] + entropy_term[q]) -
                         (x[r * width + j] + y[r * width + j]);
        const float v = static_cast<float>(std::max(d, 0.0));
        s.at(p, q) = v;
        s.at(q, p) = v;
      }
    }
  }
  return s;
}

Reduction point_to_map_distance(const DistanceMatrix& s, std::size_t p,
                                const ScoreMap& map) {
  if (map.size() != s.size() || p >= s.size())
    throw_invalid("point_to_map_distance: map size does not match distance matrix");
  const float* row = s.row(p);
  double num = 0.0;
  double den = 0.0;
  for (std::size_t q = 0; q < s.size(); ++q) {
    num += static_cast<double>(row[q]) * map.values[q];
    den += map.values[q];
  }
  if (!(den > 1e-12)) return {0.0, true};
  return {num / den, false};
}

AnchorMap soft_anchors(const ScoreMap& map, double scale, double center) {
  if (!(scale > 0.0)) throw_invalid("soft_anchors: scale must be positive");
  AnchorMap out(map.height, map.width);
  for (std::size_t i = 0; i < map.size(); ++i)
    out.values[i] = 1.0 / (1.0 + std::exp(-scale * (map.values[i] - center)));
  return out;
}

Reduction anchor_to_map_distance(const DistanceMatrix& s, const AnchorMap& anchor,
                                 const ScoreMap& map) {
  const std::size_t n = s.size();
  if (anchor.size() != n || map.size() != n)
    throw_invalid("anchor_to_map_distance: size mismatch");
  double anchor_sum = 0.0;
  double map_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    anchor_sum += anchor.values[i];
    map_sum += map.values[i];
  }
  if (!(anchor_sum > 1e-12) || !(map_sum > 1e-12)) return {0.0, true};
  double num = 0.0;
  for (std::size_t p = 0; p < n; ++p) {
    if (anchor.values[p] == 0.0) continue;
    const float* row = s.row(p);
    double inner = 0.0;
    for (std::size_t q = 0; q < n; ++q)
      inner += static_cast<double>(row[q]) * map.values[q];
    num += anchor.values[p] * inner;
  }
  return {num / (anchor_sum * map_sum), false};
}

Matrix apply_distance(const DistanceMatrix& s, const Matrix& x) {
  const std::size_t n = s.size();
  if (x.rows != n) throw_invalid("apply_distance: row count mismatch");
  const std::size_t c = x.cols;
  Matrix out(n, c);
  const int threads = kernel_threads();
#pragma omp parallel num_threads(threads) if (n * c > 16384)
  {
    std::vector<double> acc(c);
#pragma omp for schedule(static)
    for (std::size_t p = 0; p < n; ++p) {
      std::fill(acc.begin(), acc.end(), 0.0);
      const float* row = s.row(p);
      for (std::size_t q = 0; q < n; ++q) {
        const double sv = row[q];
        const double* xr = x.data.data() + q * c;
        for (std::size_t j = 0; j < c; ++j) acc[j] += sv * xr[j];
      }
      std::copy(acc.begin(), acc.end(), out.data.begin() + p * c);
    }
  }
  return out;
}

}  // namespace invseg
