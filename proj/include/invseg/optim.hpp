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
#include <optional>
#include <string>
#include <vector>

#include "invseg/backend.hpp"
#include "invseg/distance.hpp"
#include "invseg/loss.hpp"
#include "invseg/maps.hpp"
#include "invseg/refine.hpp"

namespace invseg {

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::size_t step = 0;
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam update in place. Throws kNonFinite, leaving params and
// state untouched, when any gradient entry is NaN or infinite.
void adam_step(AdamState& state, std::vector<double>& params,
               const std::vector<double>& grad);

struct InversionConfig {
  std::size_t steps = 15;
  double lr = 0.01;
  double alpha = 1.0;
  double anchor_scale = 4.0;
  double anchor_center = 0.5;
  std::size_t views = 2;
  double crop_min = 0.6;
  std::uint64_t seed = 0;
  int t_min = 5;
  int t_max = 300;
  int infer_timestep = 50;
  AggregationWeights weights = AggregationWeights::one_hot(16);
  InterPairing pairing = InterPairing::kOrdered;
  bool normalize_entropy = true;

  LossOptions loss_options() const;
};

void validate_inversion_config(const InversionConfig& config);

struct ObjectiveResult {
  LossBreakdown loss;
  std::optional<PromptParams> grad;
  // Indices picked by the piecewise stages (min-max extremes, background
  // maxima) across all views. The objective is smooth on any region where
  // this stays fixed.
  std::vector<std::size_t> active_set;
};

// Total loss of `params` at a fixed timestep and augmentation. `distances`
// may carry a precomputed matrix for the uncropped self-attention at
// `timestep`; otherwise it is built here.
ObjectiveResult evaluate_objective(const Backend& backend, const PromptParams& params,
                                   int timestep, const AugmentSpec& spec,
                                   const InversionConfig& config, bool want_grad,
                                   const DistanceMatrix* distances = nullptr);

// Uncropped self-attention at a timestep aggregated onto the working grid.
Matrix working_self_attention(const Backend& backend, const PromptParams& params,
                              int timestep, const AggregationWeights& weights);

ClassMaps infer_class_maps(const Backend& backend, const PromptParams& params,
                           int timestep, const AggregationWeights& weights);

struct StepRecord {
  std::size_t step = 0;
  int timestep = 0;
  LossBreakdown loss;  // training objective at the sampled timestep and crops
};

struct InversionResult {
  std::vector<StepRecord> trace;
  // Objective at the inference timestep on the uncropped view, evaluated
  // before the first update and after every update (steps + 1 entries).
  std::vector<LossBreakdown> eval_trace;
  ClassMaps baseline;
  ClassMaps final_maps;
  PromptParams params;
  bool aborted = false;
  std::string diagnostic;
};

InversionResult invert_prompt(const Backend& backend, const InversionConfig& config);

}  // namespace invseg
