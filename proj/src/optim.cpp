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

#include "invseg/optim.hpp"

#include <cmath>
#include <map>
#include <memory>

#include "invseg/error.hpp"
#include "invseg/random.hpp"

namespace invseg {

void adam_step(AdamState& state, std::vector<double>& params,
               const std::vector<double>& grad) {
  if (grad.size() != params.size())
    throw_invalid("adam: gradient length " + std::to_string(grad.size()) +
                  " does not match params length " + std::to_string(params.size()));
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!std::isfinite(grad[i]))
      throw Error(ErrorCode::kNonFinite,
                  "adam: non-finite gradient at index " + std::to_string(i));
  }
  if (state.m.empty() && state.v.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw_invalid("adam: moment vectors do not match params length");

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grad[i];
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grad[i] * grad[i];
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
  }
}

LossOptions InversionConfig::loss_options() const {
  LossOptions o;
  o.alpha = alpha;
  o.cluster.scale = anchor_scale;
  o.cluster.center = anchor_center;
  o.cluster.pairing = pairing;
  o.normalize_entropy = normalize_entropy;
  return o;
}

void validate_inversion_config(const InversionConfig& config) {
  if (!(config.lr > 0.0) || !std::isfinite(config.lr))
    throw_invalid("inversion: learning rate must be positive");
  if (!(config.alpha >= 0.0) || !std::isfinite(config.alpha))
    throw_invalid("inversion: alpha must be >= 0");
  if (!(config.anchor_scale > 0.0) || !std::isfinite(config.anchor_scale))
    throw_invalid("inversion: anchor scale must be > 0");
  if (config.views == 0) throw_invalid("inversion: at least one view is required");
  if (!(config.crop_min > 0.0 && config.crop_min <= 1.0))
    throw_invalid("inversion: crop min rate must be in (0, 1]");
  if (config.t_min < 0 || config.t_min > config.t_max)
    throw_invalid("inversion: timestep range must satisfy 0 <= t_min <= t_max");
  if (config.infer_timestep < 0)
    throw_invalid("inversion: inference timestep must be >= 0");
}

namespace {

struct ViewForward {
  AttentionBundle bundle;
  AggregatedAttention aggregated;
  Matrix refined;
  std::vector<MinMaxCache> caches;
  ClassMaps maps;
  ClassMapsTrace trace;
};

ViewForward forward_view(const Backend& backend, const PromptParams& params,
                         int timestep, const std::optional<CropWindow>& crop,
                         const AggregationWeights& weights) {
  ViewForward f;
  const std::size_t w = backend.grid_side();
  f.bundle = backend.forward(params, timestep, crop);
  f.aggregated = aggregate_attention(f.bundle, weights, w);
  f.refined = refine_cross(f.aggregated.self, f.aggregated.cross, &f.caches);
  f.maps = class_maps(f.refined, w, f.bundle.classes, f.bundle.background_class,
                      &f.trace);
  return f;
}

}  // namespace

Matrix working_self_attention(const Backend& backend, const PromptParams& params,
                              int timestep, const AggregationWeights& weights) {
  return aggregate_self(backend.forward(params, timestep, std::nullopt), weights,
                        backend.grid_side());
}

ClassMaps infer_class_maps(const Backend& backend, const PromptParams& params,
                           int timestep, const AggregationWeights& weights) {
  return forward_view(backend, params, timestep, std::nullopt, weights).maps;
}

ObjectiveResult evaluate_objective(const Backend& backend, const PromptParams& params,
                                   int timestep, const AugmentSpec& spec,
                                   const InversionConfig& config, bool want_grad,
                                   const DistanceMatrix* distances) {
  validate_augment(spec);
  if (spec.grid_side != backend.grid_side())
    throw_invalid("objective: augmentation grid does not match backend grid");
  std::unique_ptr<DistanceMatrix> owned;
  if (distances == nullptr) {
    owned = std::make_unique<DistanceMatrix>(
        skl_matrix(working_self_attention(backend, params, timestep, config.weights)));
    distances = owned.get();
  }

  std::vector<ViewForward> views;
  views.reserve(spec.views());
  std::vector<std::vector<ScoreMap>> per_view;
  for (std::size_t v = 0; v < spec.views(); ++v) {
    views.push_back(forward_view(backend, params, timestep, spec.windows[v],
                                 config.weights));
    per_view.push_back(views.back().maps.maps);
  }

  ObjectiveResult result;
  for (const ViewForward& f : views) {
    for (const auto* caches : {&f.caches, &f.trace.caches}) {
      for (const MinMaxCache& c : *caches) {
        result.active_set.push_back(c.degenerate ? 0 : 1 + c.argmin);
        result.active_set.push_back(c.degenerate ? 0 : 1 + c.argmax);
      }
    }
    result.active_set.insert(result.active_set.end(), f.trace.background_source.begin(),
                             f.trace.background_source.end());
  }
  const LossOptions options = config.loss_options();
  if (!want_grad) {
    result.loss = total_loss(*distances, per_view, spec, options);
    return result;
  }
  LossWithGrad lw = total_loss_with_grad(*distances, per_view, spec, options);
  result.loss = lw.loss;

  PromptParams grad(params.rows, params.cols);
  const std::size_t w = backend.grid_side();
  for (std::size_t v = 0; v < spec.views(); ++v) {
    const ViewForward& f = views[v];
    const Matrix g_refined =
        class_maps_vjp(f.maps, f.trace, f.bundle.classes, f.bundle.background_class,
                       f.bundle.token_count(), lw.grad[v]);
    const Matrix g_cross =
        refine_cross_vjp(f.aggregated.self, f.refined, f.caches, g_refined);
    const auto g_layers = aggregate_cross_vjp(f.bundle, config.weights, w, g_cross);
    const PromptParams g = backend.vjp(params, timestep, spec.windows[v], g_layers);
    for (std::size_t i = 0; i < grad.values.size(); ++i) grad.values[i] += g.values[i];
  }
  result.grad = std::move(grad);
  return result;
}

namespace {

bool finite_loss(const LossBreakdown& l) {
  return std::isfinite(l.total) && std::isfinite(l.cluster) && std::isfinite(l.entropy);
}

}  // namespace

InversionResult invert_prompt(const Backend& backend, const InversionConfig& config) {
  validate_inversion_config(config);
  const std::size_t w = backend.grid_side();
  InversionResult result;
  result.params = backend.init_params();
  result.baseline =
      infer_class_maps(backend, result.params, config.infer_timestep, config.weights);

  const AugmentSpec eval_spec = identity_augment(w, 1);
  const DistanceMatrix eval_distances = skl_matrix(
      working_self_attention(backend, result.params, config.infer_timestep,
                             config.weights));
  auto record_eval = [&]() {
    const ObjectiveResult r =
        evaluate_objective(backend, result.params, config.infer_timestep, eval_spec,
                           config, false, &eval_distances);
    result.eval_trace.push_back(r.loss);
    return finite_loss(r.loss);
  };

  AdamState adam;
  adam.lr = config.lr;
  Rng timestep_rng(mix_seed(config.seed, 0x7157));
  std::optional<std::pair<int, DistanceMatrix>> cached;

  try {
    if (config.steps > 0 && !record_eval()) {
      result.aborted = true;
      result.diagnostic = "non-finite loss at initial evaluation";
    }
    for (std::size_t step = 0; step < config.steps && !result.aborted; ++step) {
      const int t = static_cast<int>(timestep_rng.uniform_int(config.t_min, config.t_max));
      const AugmentSpec spec =
          random_augment(w, config.views, config.crop_min, mix_seed(config.seed, 1000 + step));
      if (!cached || cached->first != t) {
        cached.emplace(t, skl_matrix(working_self_attention(backend, result.params, t,
                                                            config.weights)));
      }
      ObjectiveResult r =
          evaluate_objective(backend, result.params, t, spec, config, true, &cached->second);
      result.trace.push_back({step, t, r.loss});
      if (!finite_loss(r.loss)) {
        result.aborted = true;
        result.diagnostic = "non-finite loss at step " + std::to_string(step);
        break;
      }
      adam_step(adam, result.params.values, r.grad->values);
      if (!record_eval()) {
        result.aborted = true;
        result.diagnostic = "non-finite loss after step " + std::to_string(step);
      }
    }
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kNonFinite) throw;
    result.aborted = true;
    result.diagnostic = e.what();
  }

  result.final_maps =
      infer_class_maps(backend, result.params, config.infer_timestep, config.weights);
  return result;
}

}  // namespace invseg
