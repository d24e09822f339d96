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
#include <vector>

#include "invseg/linalg.hpp"
#include "invseg/maps.hpp"

namespace invseg {

// Symmetric pixel-pair distance matrix with a zero diagonal, stored in single
// precision. Entries are written in mirrored pairs so S(p, q) == S(q, p)
// bit for bit.
class DistanceMatrix {
 public:
  DistanceMatrix() = default;
  explicit DistanceMatrix(std::size_t n) : n_(n), values_(n * n, 0.0f) {}

  std::size_t size() const { return n_; }
  float at(std::size_t p, std::size_t q) const { return values_[p * n_ + q]; }
  float& at(std::size_t p, std::size_t q) { return values_[p * n_ + q]; }
  const float* row(std::size_t p) const { return values_.data() + p * n_; }
  const std::vector<float>& values() const { return values_; }

 private:
  std::size_t n_ = 0;
  std::vector<float> values_;
};

inline constexpr double kProbabilityFloor = 1e-12;

// Symmetric KL between every pair of rows of a row-stochastic matrix, via
// S = e 1^T + 1 e^T - A (log A)^T - (log A) A^T with e_p = sum_m A_pm log A_pm.
// Throws invalid-argument for negative entries or rows not summing to one
// within 1e-3.
DistanceMatrix skl_matrix(const Matrix& a_self);

// Result of a weighted reduction whose normalizer may vanish.
struct Reduction {
  double value = 0.0;
  bool degenerate = false;
};

Reduction point_to_map_distance(const DistanceMatrix& s, std::size_t p,
                                const ScoreMap& map);

using AnchorMap = ScoreMap;

AnchorMap soft_anchors(const ScoreMap& map, double scale, double center);

Reduction anchor_to_map_distance(const DistanceMatrix& s, const AnchorMap& anchor,
                                 const ScoreMap& map);

// S * X for an n x c matrix X, double accumulation, parallel over rows.
Matrix apply_distance(const DistanceMatrix& s, const Matrix& x);

}  // namespace invseg
