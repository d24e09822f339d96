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
#include <cstdint>
#include <vector>

#include "invseg/distance.hpp"
#include "invseg/maps.hpp"
#include "invseg/refine.hpp"

namespace invseg {

// Pairing used for the inter-class term. kOrdered sums D(Anchor^c, M^c') over
// c' < c only; kSymmetric averages both directions for every pair.
enum class InterPairing { kOrdered, kSymmetric };

struct ClusterOptions {
  double scale = 4.0;
  double center = 0.5;
  InterPairing pairing = InterPairing::kOrdered;
};

double d_intra(const DistanceMatrix& s, const ClassMaps& maps, double scale,
               double center);
double d_inter(const DistanceMatrix& s, const ClassMaps& maps, double scale,
               double center, InterPairing pairing = InterPairing::kOrdered);
// D_intra / C - 2 D_inter / (C (C - 1)); invalid-argument for C < 2.
double cluster_loss(const DistanceMatrix& s, const ClassMaps& maps,
                    double scale, double center,
                    InterPairing pairing = InterPairing::kOrdered);

struct ClusterTerms {
  double intra = 0.0;
  double inter = 0.0;
  double loss = 0.0;
  std::vector<bool> degenerate;          // per class
  std::vector<std::vector<double>> grad;  // d loss / d map, per class
};

// Shared evaluator behind the three functions above. `anchor_mask`, when
// non-empty, multiplies every anchor map (used to drop uncovered pixels).
ClusterTerms cluster_terms(const DistanceMatrix& s,
                           const std::vector<std::vector<double>>& maps,
                           const std::vector<double>& anchor_mask,
                           const ClusterOptions& options, bool want_grad);

// Random resized crops of the working grid, one window per view.
struct AugmentSpec {
  std::size_t grid_side = 0;
  std::vector<CropWindow> windows;
  std::uint64_t seed = 0;
  double min_crop = 0.6;

  std::size_t views() const { return windows.size(); }
};

AugmentSpec identity_augment(std::size_t grid_side, std::size_t views);
// Side ratios drawn uniformly in [min_crop, 1], positions uniformly.
AugmentSpec random_augment(std::size_t grid_side, std::size_t views,
                           double min_crop, std::uint64_t seed);
void validate_augment(const AugmentSpec& spec);

std::vector<ScoreMap> apply_augment(const std::vector<ScoreMap>& maps,
                                    const AugmentSpec& spec, std::size_t view);

struct AlignedView {
  std::vector<ScoreMap> maps;  // source-aligned, zero outside the window
  ScoreMap coverage;           // 1 inside the window, 0 elsewhere
};

AlignedView invert_augment(const std::vector<ScoreMap>& view_maps,
                           const AugmentSpec& spec, std::size_t view);
std::vector<ScoreMap> invert_augment_vjp(const std::vector<ScoreMap>& grad_aligned,
                                         const AugmentSpec& spec,
                                         std::size_t view);

struct ViewAverage {
  std::vector<ScoreMap> maps;  // coverage-weighted mean, 0 where uncovered
  ScoreMap coverage;           // number of views covering each pixel
};

ViewAverage average_views(const std::vector<std::vector<ScoreMap>>& per_view,
                          const AugmentSpec& spec);

struct EntropyTerms {
  double value = 0.0;
  bool degenerate = false;
  std::vector<std::vector<double>> grad;  // d value / d averaged map, per class
};

// Mean per-pixel entropy of the averaged class maps over covered pixels.
// With normalize_classes, each pixel's class vector is rescaled to sum to one
// after clamping at 1e-12.
EntropyTerms entropy_of_average(const ViewAverage& average,
                                bool normalize_classes, bool want_grad);

double entropy_loss(const std::vector<std::vector<ScoreMap>>& per_view,
                    const AugmentSpec& spec, bool normalize_classes = true);

struct LossBreakdown {
  double cluster = 0.0;
  double entropy = 0.0;
  double total = 0.0;
  double alpha = 1.0;
  double intra = 0.0;
  double inter = 0.0;
  std::vector<bool> degenerate_flags;  // per class
  bool entropy_degenerate = false;
};

struct LossOptions {
  double alpha = 1.0;
  ClusterOptions cluster;
  bool normalize_entropy = true;
};

struct LossWithGrad {
  LossBreakdown loss;
  // d total / d per-view class map, indexed [view][class].
  std::vector<std::vector<ScoreMap>> grad;
};

LossBreakdown total_loss(const DistanceMatrix& s,
                         const std::vector<std::vector<ScoreMap>>& per_view,
                         const AugmentSpec& spec, const LossOptions& options);
LossWithGrad total_loss_with_grad(const DistanceMatrix& s,
                                  const std::vector<std::vector<ScoreMap>>& per_view,
                                  const AugmentSpec& spec,
                                  const LossOptions& options);

}  // namespace invseg
