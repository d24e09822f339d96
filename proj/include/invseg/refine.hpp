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
#include <string>
#include <vector>

#include "invseg/linalg.hpp"
#include "invseg/maps.hpp"

namespace invseg {

// Per-class refined maps on the square working grid, each min-max normalized.
struct ClassMaps {
  std::size_t side = 0;
  std::vector<std::string> names;
  std::vector<ScoreMap> maps;

  std::size_t count() const { return maps.size(); }
};

// refined = per-column minmax(self * cross). Column caches are returned for
// the backward pass when requested.
Matrix refine_cross(const Matrix& a_self, const Matrix& a_cross,
                    std::vector<MinMaxCache>* caches = nullptr);

// Gradient with respect to a_cross given the gradient of the refined maps.
Matrix refine_cross_vjp(const Matrix& a_self, const Matrix& refined,
                        const std::vector<MinMaxCache>& caches,
                        const Matrix& grad_refined);

struct ClassMapsTrace {
  std::vector<MinMaxCache> caches;  // one per class
  bool synthesized_background = false;
  // For the synthesized background: which foreground class held the max.
  std::vector<std::size_t> background_source;
};

// Mean of each class's token columns, renormalized. A background class with
// an empty span becomes minmax(1 - max over the other classes).
ClassMaps class_maps(const Matrix& refined, std::size_t side,
                     const std::vector<ClassSpan>& spans,
                     std::optional<std::size_t> background_class,
                     ClassMapsTrace* trace = nullptr);

Matrix class_maps_vjp(const ClassMaps& maps, const ClassMapsTrace& trace,
                      const std::vector<ClassSpan>& spans,
                      std::optional<std::size_t> background_class,
                      std::size_t token_count,
                      const std::vector<ScoreMap>& grad_maps);

}  // namespace invseg
