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

#include "invseg/refine.hpp"

namespace invseg {

enum class MaskOrder {
  kResizeThenArgmax,  // bilinear-resize every class map, then argmax
  kArgmaxThenNearest  // argmax on the working grid, then nearest-neighbor resize
};

struct LabelGrid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::int32_t> labels;  // row-major class indices
};

// Ties go to the lowest class index.
LabelGrid predict_mask(const ClassMaps& maps, std::size_t out_h, std::size_t out_w,
                       MaskOrder order = MaskOrder::kResizeThenArgmax);

}  // namespace invseg
