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
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "invseg/linalg.hpp"

namespace invseg {

// Nonnegative H x W grid of per-pixel scores, row-major.
struct ScoreMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;

  ScoreMap() = default;
  ScoreMap(std::size_t h, std::size_t w, double fill = 0.0)
      : height(h), width(w), values(h * w, fill) {}
  ScoreMap(std::size_t h, std::size_t w, std::vector<double> v);

  double& at(std::size_t y, std::size_t x) { return values[y * width + x]; }
  double at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
  std::size_t size() const { return values.size(); }
};

// Crop window in working-grid pixels; covers rows [top, top + height) and
// columns [left, left + width).
struct CropWindow {
  std::size_t top = 0;
  std::size_t left = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  bool operator==(const CropWindow&) const = default;
};

// Continuous sampling rectangle in source pixel coordinates. Output samples
// are spaced evenly from (y0, x0) to (y1, x1) inclusive (corner aligned).
struct SampleRegion {
  double y0 = 0.0;
  double y1 = 0.0;
  double x0 = 0.0;
  double x1 = 0.0;
};

SampleRegion full_region(std::size_t src_h, std::size_t src_w);

// Maps a crop window expressed on a grid_side grid onto the equivalent region
// of a target_side grid covering the same image extent.
SampleRegion window_region(const CropWindow& window, std::size_t grid_side,
                           std::size_t target_side);

// One output position along an axis: lerp between src[i0] and src[i1].
struct AxisTap {
  std::size_t i0 = 0;
  std::size_t i1 = 0;
  double frac = 0.0;
};

std::vector<AxisTap> axis_taps(std::size_t src_n, std::size_t out_n,
                               double start, double end);

ScoreMap bilinear_resize(const ScoreMap& map, std::size_t target_h,
                         std::size_t target_w);
ScoreMap resample_region(const ScoreMap& map, const SampleRegion& region,
                         std::size_t target_h, std::size_t target_w);
// Transpose of resample_region: scatters an output-shaped gradient back onto
// the source grid.
ScoreMap resample_region_vjp(const ScoreMap& grad_out, std::size_t src_h,
                             std::size_t src_w, const SampleRegion& region);

// Column-wise resampling of an (side*side) x K matrix whose columns are
// square maps.
Matrix resample_columns(const Matrix& m, std::size_t side,
                        const SampleRegion& region, std::size_t out_side);
Matrix resample_columns_vjp(const Matrix& grad_out, std::size_t side,
                            const SampleRegion& region, std::size_t out_side);

// Resamples a pixel-affinity matrix on its (h, w, h, w) view: key axis first,
// then query axis, then each row is renormalized to sum to one.
Matrix resample_affinity(const Matrix& m, std::size_t side,
                         const SampleRegion& region, std::size_t out_side);

struct MinMaxCache {
  std::size_t argmin = 0;
  std::size_t argmax = 0;
  double range = 0.0;
  bool degenerate = true;
};

inline constexpr double kMinMaxDegenerateRange = 1e-12;

ScoreMap minmax_norm(const ScoreMap& map);
void minmax_norm_inplace(std::span<double> values, MinMaxCache* cache = nullptr);
// grad_in for y = minmax(x), given the normalized output y.
std::vector<double> minmax_norm_vjp(std::span<const double> normalized,
                                    const MinMaxCache& cache,
                                    std::span<const double> grad_out);

struct AttentionLayer {
  Matrix values;
  int timestep = 0;
  std::string name;
};

struct AttentionLevel {
  std::size_t side = 0;
  std::vector<AttentionLayer> self_layers;   // (side^2) x (side^2)
  std::vector<AttentionLayer> cross_layers;  // (side^2) x K
};

// Half-open token range [begin, end) owned by one class.
struct ClassSpan {
  std::string name;
  std::size_t begin = 0;
  std::size_t end = 0;
};

struct AttentionBundle {
  std::string image_id;
  std::size_t image_height = 0;
  std::size_t image_width = 0;
  std::vector<AttentionLevel> levels;
  std::vector<std::string> tokens;
  std::vector<ClassSpan> classes;
  std::optional<std::size_t> background_class;

  std::size_t token_count() const { return tokens.size(); }
  std::size_t class_count() const { return classes.size(); }
  const AttentionLevel* level(std::size_t side) const;
  AttentionLevel& level_or_add(std::size_t side);
};

// Throws kValidation naming the first offending layer/row. Self-attention
// rows must be nonnegative and sum to one within row_tolerance.
void validate_bundle(const AttentionBundle& bundle, double row_tolerance = 1e-3);

// Keeps only the layers whose timestep is closest to `timestep` (ties go to
// the smaller exported timestep).
AttentionBundle select_timestep(const AttentionBundle& bundle, int timestep);

class AggregationWeights {
 public:
  AggregationWeights() = default;
  explicit AggregationWeights(std::vector<std::pair<std::size_t, double>> w);

  static AggregationWeights one_hot(std::size_t side);

  const std::vector<std::pair<std::size_t, double>>& entries() const {
    return entries_;
  }
  double weight(std::size_t side) const;

 private:
  std::vector<std::pair<std::size_t, double>> entries_;
};

struct AggregatedAttention {
  Matrix self;   // HW x HW on the out_side grid, row-stochastic
  Matrix cross;  // HW x K
};

Matrix aggregate_self(const AttentionBundle& bundle,
                      const AggregationWeights& weights, std::size_t out_side);
Matrix aggregate_cross(const AttentionBundle& bundle,
                       const AggregationWeights& weights, std::size_t out_side);
AggregatedAttention aggregate_attention(const AttentionBundle& bundle,
                                        const AggregationWeights& weights,
                                        std::size_t out_side);

// Gradient of aggregate_cross with respect to every cross layer, indexed
// [level][layer] in bundle order. Levels with zero weight get zero matrices.
std::vector<std::vector<Matrix>> aggregate_cross_vjp(
    const AttentionBundle& bundle, const AggregationWeights& weights,
    std::size_t out_side, const Matrix& grad_cross);

}  // namespace invseg
