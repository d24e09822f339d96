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

#include "invseg/metrics.hpp"

#include <string>

#include "invseg/error.hpp"

namespace invseg {

ConfusionMatrix::ConfusionMatrix(std::size_t classes)
    : classes_(classes), counts_(classes * classes, 0) {
  if (classes == 0) throw_invalid("confusion matrix: needs at least one class");
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (auto c : counts_) t += c;
  return t;
}

void ConfusionMatrix::accumulate(std::span<const std::int32_t> predicted,
                                 std::span<const std::int32_t> truth,
                                 std::int32_t ignore_label) {
  if (predicted.size() != truth.size())
    throw_invalid("accumulate: prediction has " + std::to_string(predicted.size()) +
                  " pixels but truth has " + std::to_string(truth.size()));
  const auto c = static_cast<std::int64_t>(classes_);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == ignore_label) continue;
    if (truth[i] < 0 || truth[i] >= c)
      throw_invalid("accumulate: truth label " + std::to_string(truth[i]) +
                    " out of range at pixel " + std::to_string(i));
    if (predicted[i] < 0 || predicted[i] >= c)
      throw_invalid("accumulate: predicted label " + std::to_string(predicted[i]) +
                    " out of range at pixel " + std::to_string(i));
  }
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == ignore_label) {
      ++ignored_;
      continue;
    }
    ++count(static_cast<std::size_t>(truth[i]), static_cast<std::size_t>(predicted[i]));
  }
}

double miou(const ConfusionMatrix& conf) {
  const std::size_t c = conf.classes();
  double sum = 0.0;
  std::size_t valid = 0;
  for (std::size_t k = 0; k < c; ++k) {
    std::uint64_t row = 0, col = 0;
    for (std::size_t j = 0; j < c; ++j) {
      row += conf.count(k, j);
      col += conf.count(j, k);
    }
    const std::uint64_t tp = conf.count(k, k);
    const std::uint64_t uni = row + col - tp;
    if (uni == 0) continue;
    sum += static_cast<double>(tp) / static_cast<double>(uni);
    ++valid;
  }
  if (valid == 0) throw Error(ErrorCode::kUndefinedMetric, "mIoU: no class has a nonzero union");
  return sum / static_cast<double>(valid);
}

double macc(const ConfusionMatrix& conf) {
  const std::size_t c = conf.classes();
  double sum = 0.0;
  std::size_t valid = 0;
  for (std::size_t k = 0; k < c; ++k) {
    std::uint64_t row = 0;
    for (std::size_t j = 0; j < c; ++j) row += conf.count(k, j);
    if (row == 0) continue;
    sum += static_cast<double>(conf.count(k, k)) / static_cast<double>(row);
    ++valid;
  }
  if (valid == 0)
    throw Error(ErrorCode::kUndefinedMetric, "mAcc: no class has ground-truth pixels");
  return sum / static_cast<double>(valid);
}

}  // namespace invseg
