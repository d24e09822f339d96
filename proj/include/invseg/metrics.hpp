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
#include <span>
#include <vector>

namespace invseg {

inline constexpr std::int32_t kIgnoreLabel = 255;

// counts[truth][pred] over C classes.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes);

  std::size_t classes() const { return classes_; }
  std::uint64_t count(std::size_t truth, std::size_t pred) const {
    return counts_[truth * classes_ + pred];
  }
  std::uint64_t& count(std::size_t truth, std::size_t pred) {
    return counts_[truth * classes_ + pred];
  }
  std::uint64_t ignored() const { return ignored_; }
  std::uint64_t total() const;

  // Labels outside [0, C) other than ignore_label are invalid-argument.
  void accumulate(std::span<const std::int32_t> predicted,
                  std::span<const std::int32_t> truth,
                  std::int32_t ignore_label = kIgnoreLabel);

 private:
  std::size_t classes_;
  std::vector<std::uint64_t> counts_;
  std::uint64_t ignored_ = 0;
};

// Mean over classes with nonzero union; undefined-metric when none.
double miou(const ConfusionMatrix& conf);
// Mean over classes with nonzero truth count; undefined-metric when none.
double macc(const ConfusionMatrix& conf);

}  // namespace invseg
