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

// Straightforward nested-loop implementations of the loss pipeline, written
// independently of the vectorized kernels and used to cross-check them.
namespace invseg::reference {

using Grid = std::vector<std::vector<double>>;

// Pairwise symmetric KL with probabilities clamped at 1e-12, one pair at a time.
Grid skl(const Matrix& a_self);

double sigmoid_anchor(double value, double scale, double center);

// Returns 0 when the map (or anchor) has zero mass.
double point_to_map(const Grid& s, std::size_t p, const std::vector<double>& map);
double anchor_to_map(const Grid& s, const std::vector<double>& anchor,
                     const std::vector<double>& map);

double d_intra(const Grid& s, const Grid& maps, double scale, double center);
// Anchors from the higher-indexed class against the lower-indexed map; with
// `symmetric` each pair averages both directions.
double d_inter(const Grid& s, const Grid& maps, double scale, double center,
               bool symmetric = false);
double cluster(const Grid& s, const Grid& maps, double scale, double center,
               bool symmetric = false);

// Bilinear resize with corner-aligned sampling.
std::vector<double> resize(const std::vector<double>& src, std::size_t src_h,
                           std::size_t src_w, std::size_t out_h, std::size_t out_w);

struct Averaged {
  Grid maps;                  // per class, zero where uncovered
  std::vector<int> coverage;  // views covering each pixel
};

// Pastes each view back into its window and averages over covering views.
Averaged average_views(const std::vector<Grid>& per_view,
                       const std::vector<CropWindow>& windows, std::size_t grid_side);

double entropy(const std::vector<Grid>& per_view, const std::vector<CropWindow>& windows,
               std::size_t grid_side, bool normalize_classes = true);

// Cluster term on the coverage-averaged maps (anchors zeroed where no view
// covers) plus alpha times the entropy term.
double total(const Grid& s, const std::vector<Grid>& per_view,
             const std::vector<CropWindow>& windows, std::size_t grid_side, double alpha,
             double scale, double center, bool normalize_classes = true);

}  // namespace invseg::reference
