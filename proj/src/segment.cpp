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

#include "invseg/segment.hpp"

#include "invseg/error.hpp"

namespace invseg {

namespace {

std::int32_t argmax_at(const std::vector<const ScoreMap*>& maps, std::size_t i) {
  std::int32_t best = 0;
  double best_v = maps[0]->values[i];
  for (std::size_t c = 1; c < maps.size(); ++c) {
    if (maps[c]->values[i] > best_v) {
      best_v = maps[c]->values[i];
      best = static_cast<std::int32_t>(c);
    }
  }
  return best;
}

}  // namespace

LabelGrid predict_mask(const ClassMaps& maps, std::size_t out_h, std::size_t out_w,
                       MaskOrder order) {
  if (out_h == 0 || out_w == 0) throw_invalid("predict_mask: output dims must be >= 1");
  if (maps.count() < 2) throw_invalid("predict_mask: needs at least two classes");
  const std::size_t h = maps.maps[0].height;
  const std::size_t w = maps.maps[0].width;
  for (const auto& m : maps.maps) {
    if (m.height != h || m.width != w)
      throw_invalid("predict_mask: class maps differ in size");
  }

  LabelGrid grid{out_h, out_w, std::vector<std::int32_t>(out_h * out_w)};
  if (order == MaskOrder::kResizeThenArgmax) {
    std::vector<ScoreMap> resized;
    resized.reserve(maps.count());
    for (const auto& m : maps.maps) resized.push_back(bilinear_resize(m, out_h, out_w));
    std::vector<const ScoreMap*> ptrs;
    for (const auto& m : resized) ptrs.push_back(&m);
    for (std::size_t i = 0; i < grid.labels.size(); ++i) grid.labels[i] = argmax_at(ptrs, i);
    return grid;
  }

  std::vector<const ScoreMap*> ptrs;
  for (const auto& m : maps.maps) ptrs.push_back(&m);
  // Nearest source pixel under corner-aligned sampling.
  auto nearest = [](std::size_t i, std::size_t out_n, std::size_t src_n) {
    if (out_n == 1 || src_n == 1) return std::size_t{0};
    const double pos = static_cast<double>(i) * static_cast<double>(src_n - 1) /
                       static_cast<double>(out_n - 1);
    return static_cast<std::size_t>(pos + 0.5);
  };
  for (std::size_t y = 0; y < out_h; ++y) {
    const std::size_t sy = nearest(y, out_h, h);
    for (std::size_t x = 0; x < out_w; ++x) {
      const std::size_t sx = nearest(x, out_w, w);
      grid.labels[y * out_w + x] = argmax_at(ptrs, sy * w + sx);
    }
  }
  return grid;
}

}  // namespace invseg
