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

#include "invseg/loss.hpp"

#include <algorithm>
#include <cmath>

#include "invseg/error.hpp"
#include "invseg/random.hpp"

namespace invseg {
namespace {

std::vector<std::vector<double>> map_values(const ClassMaps& maps) {
  std::vector<std::vector<double>> out;
  out.reserve(maps.count());
  for (const auto& m : maps.maps) out.push_back(m.values);
  return out;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

ClusterTerms cluster_terms(const DistanceMatrix& s,
                           const std::vector<std::vector<double>>& maps,
                           const std::vector<double>& anchor_mask,
                           const ClusterOptions& options, bool want_grad) {
  const std::size_t c_count = maps.size();
  const std::size_t n = s.size();
  if (c_count == 0) throw_invalid("cluster loss: no classes");
  if (!(options.scale > 0.0)) throw_invalid("cluster loss: scale must be positive");
  for (const auto& m : maps) {
    if (m.size() != n) throw_invalid("cluster loss: map size does not match S");
  }
  if (!anchor_mask.empty() && anchor_mask.size() != n)
    throw_invalid("cluster loss: anchor mask size does not match S");

  // Columns [0, C) hold maps, [C, 2C) hold anchors.
  Matrix x(n, 2 * c_count);
  std::vector<double> map_sum(c_count, 0.0), anchor_sum(c_count, 0.0);
  for (std::size_t c = 0; c < c_count; ++c) {
    for (std::size_t p = 0; p < n; ++p) {
      const double m = maps[c][p];
      double a = sigmoid(options.scale * (m - options.center));
      if (!anchor_mask.empty()) a *= anchor_mask[p];
      x(p, c) = m;
      x(p, c_count + c) = a;
      map_sum[c] += m;
      anchor_sum[c] += a;
    }
  }
  const Matrix sx = apply_distance(s, x);

  ClusterTerms out;
  out.degenerate.assign(c_count, false);
  std::vector<std::vector<double>> grad_anchor;
  if (want_grad) {
    out.grad.assign(c_count, std::vector<double>(n, 0.0));
    grad_anchor.assign(c_count, std::vector<double>(n, 0.0));
  }

  // One D(Anchor^ca, M^cm) term with loss coefficient `coef`.
  auto term = [&](std::size_t ca, std::size_t cm, double coef) {
    const bool bad_anchor = !(anchor_sum[ca] > 1e-12);
    const bool bad_map = !(map_sum[cm] > 1e-12);
    if (bad_anchor || bad_map) {
      if (bad_anchor) out.degenerate[ca] = true;
      if (bad_map) out.degenerate[cm] = true;
      return 0.0;
    }
    const double norm = anchor_sum[ca] * map_sum[cm];
    double num = 0.0;
    for (std::size_t p = 0; p < n; ++p) num += x(p, c_count + ca) * sx(p, cm);
    const double d = num / norm;
    if (want_grad && coef != 0.0) {
      auto& ga = grad_anchor[ca];
      auto& gm = out.grad[cm];
      for (std::size_t p = 0; p < n; ++p) {
        ga[p] += coef * (sx(p, cm) / norm - d / anchor_sum[ca]);
        gm[p] += coef * (sx(p, c_count + ca) / norm - d / map_sum[cm]);
      }
    }
    return d;
  };

  const double cd = static_cast<double>(c_count);
  const double intra_coef = 1.0 / cd;
  const double inter_coef = c_count > 1 ? -2.0 / (cd * (cd - 1.0)) : 0.0;
  for (std::size_t c = 0; c < c_count; ++c) out.intra += term(c, c, intra_coef);
  for (std::size_t lo = 0; lo + 1 < c_count; ++lo) {
    for (std::size_t hi = lo + 1; hi < c_count; ++hi) {
      if (options.pairing == InterPairing::kOrdered) {
        out.inter += term(hi, lo, inter_coef);
      } else {
        out.inter += 0.5 * (term(hi, lo, 0.5 * inter_coef) +
                            term(lo, hi, 0.5 * inter_coef));
      }
    }
  }
  out.loss = out.intra * intra_coef + out.inter * inter_coef;

  if (want_grad) {
    for (std::size_t c = 0; c < c_count; ++c) {
      for (std::size_t p = 0; p < n; ++p) {
        const double mask = anchor_mask.empty() ? 1.0 : anchor_mask[p];
        if (mask == 0.0) continue;
        const double sg = sigmoid(options.scale * (maps[c][p] - options.center));
        out.grad[c][p] += grad_anchor[c][p] * mask * options.scale * sg * (1.0 - sg);
      }
    }
  }
  return out;
}

double d_intra(const DistanceMatrix& s, const ClassMaps& maps, double scale,
               double center) {
  return cluster_terms(s, map_values(maps), {}, {scale, center}, false).intra;
}

double d_inter(const DistanceMatrix& s, const ClassMaps& maps, double scale,
               double center, InterPairing pairing) {
  if (maps.count() < 2) return 0.0;
  return cluster_terms(s, map_values(maps), {}, {scale, center, pairing}, false)
      .inter;
}

double cluster_loss(const DistanceMatrix& s, const ClassMaps& maps,
                    double scale, double center, InterPairing pairing) {
  if (maps.count() < 2) throw_invalid("cluster_loss: needs at least two classes");
  return cluster_terms(s, map_values(maps), {}, {scale, center, pairing}, false)
      .loss;
}

AugmentSpec identity_augment(std::size_t grid_side, std::size_t views) {
  AugmentSpec spec;
  spec.grid_side = grid_side;
  spec.windows.assign(views, CropWindow{0, 0, grid_side, grid_side});
  spec.min_crop = 1.0;
  return spec;
}

AugmentSpec random_augment(std::size_t grid_side, std::size_t views,
                           double min_crop, std::uint64_t seed) {
  if (!(min_crop > 0.0 && min_crop <= 1.0))
    throw_invalid("random_augment: min crop rate must be in (0, 1]");
  if (grid_side == 0) throw_invalid("random_augment: empty grid");
  AugmentSpec spec;
  spec.grid_side = grid_side;
  spec.seed = seed;
  spec.min_crop = min_crop;
  Rng rng(seed);
  const double g = static_cast<double>(grid_side);
  const auto min_side = static_cast<std::size_t>(std::ceil(min_crop * g - 1e-9));
  auto draw_side = [&] {
    const double ratio = min_crop + (1.0 - min_crop) * rng.uniform();
    auto side = static_cast<std::size_t>(std::ceil(ratio * g - 1e-9));
    return std::clamp(side, std::max<std::size_t>(min_side, 1), grid_side);
  };
  auto draw_offset = [&](std::size_t side) {
    const std::size_t slots = grid_side - side + 1;
    return std::min(slots - 1, static_cast<std::size_t>(rng.uniform() * slots));
  };
  for (std::size_t v = 0; v < views; ++v) {
    CropWindow w;
    w.height = draw_side();
    w.width = draw_side();
    w.top = draw_offset(w.height);
    w.left = draw_offset(w.width);
    spec.windows.push_back(w);
  }
  return spec;
}

void validate_augment(const AugmentSpec& spec) {
  for (const auto& w : spec.windows) {
    if (w.height == 0 || w.width == 0 || w.top + w.height > spec.grid_side ||
        w.left + w.width > spec.grid_side) {
      throw_invalid("augment window out of bounds");
    }
  }
}

namespace {

const CropWindow& window_for(const AugmentSpec& spec, std::size_t view) {
  if (view >= spec.views()) throw_invalid("augment view index out of range");
  validate_augment(spec);
  return spec.windows[view];
}

void check_grid(const ScoreMap& m, std::size_t side) {
  if (m.height != side || m.width != side)
    throw_invalid("augment: map does not match the working grid");
}

}  // namespace

std::vector<ScoreMap> apply_augment(const std::vector<ScoreMap>& maps,
                                    const AugmentSpec& spec, std::size_t view) {
  const CropWindow& w = window_for(spec, view);
  const std::size_t g = spec.grid_side;
  const SampleRegion region = window_region(w, g, g);
  std::vector<ScoreMap> out;
  out.reserve(maps.size());
  for (const auto& m : maps) {
    check_grid(m, g);
    out.push_back(resample_region(m, region, g, g));
  }
  return out;
}

AlignedView invert_augment(const std::vector<ScoreMap>& view_maps,
                           const AugmentSpec& spec, std::size_t view) {
  const CropWindow& w = window_for(spec, view);
  const std::size_t g = spec.grid_side;
  AlignedView out;
  out.coverage = ScoreMap(g, g);
  for (std::size_t y = 0; y < w.height; ++y)
    for (std::size_t x = 0; x < w.width; ++x) out.coverage.at(w.top + y, w.left + x) = 1.0;
  for (const auto& m : view_maps) {
    check_grid(m, g);
    const ScoreMap small = bilinear_resize(m, w.height, w.width);
    ScoreMap aligned(g, g);
    for (std::size_t y = 0; y < w.height; ++y)
      for (std::size_t x = 0; x < w.width; ++x)
        aligned.at(w.top + y, w.left + x) = small.at(y, x);
    out.maps.push_back(std::move(aligned));
  }
  return out;
}

std::vector<ScoreMap> invert_augment_vjp(const std::vector<ScoreMap>& grad_aligned,
                                         const AugmentSpec& spec,
                                         std::size_t view) {
  const CropWindow& w = window_for(spec, view);
  const std::size_t g = spec.grid_side;
  std::vector<ScoreMap> out;
  out.reserve(grad_aligned.size());
  for (const auto& ga : grad_aligned) {
    check_grid(ga, g);
    ScoreMap small(w.height, w.width);
    for (std::size_t y = 0; y < w.height; ++y)
      for (std::size_t x = 0; x < w.width; ++x)
        small.at(y, x) = ga.at(w.top + y, w.left + x);
    out.push_back(resample_region_vjp(small, g, g, full_region(g, g)));
  }
  return out;
}

ViewAverage average_views(const std::vector<std::vector<ScoreMap>>& per_view,
                          const AugmentSpec& spec) {
  if (per_view.empty()) throw_invalid("average_views: no views");
  if (per_view.size() != spec.views())
    throw_invalid("average_views: view count does not match augment spec");
  const std::size_t g = spec.grid_side;
  const std::size_t c_count = per_view.front().size();
  ViewAverage avg;
  avg.coverage = ScoreMap(g, g);
  avg.maps.assign(c_count, ScoreMap(g, g));
  for (std::size_t v = 0; v < per_view.size(); ++v) {
    if (per_view[v].size() != c_count)
      throw_invalid("average_views: class count differs between views");
    AlignedView aligned = invert_augment(per_view[v], spec, v);
    for (std::size_t i = 0; i < g * g; ++i) avg.coverage.values[i] += aligned.coverage.values[i];
    for (std::size_t c = 0; c < c_count; ++c)
      for (std::size_t i = 0; i < g * g; ++i) avg.maps[c].values[i] += aligned.maps[c].values[i];
  }
  for (std::size_t i = 0; i < g * g; ++i) {
    const double cov = avg.coverage.values[i];
    for (std::size_t c = 0; c < c_count; ++c)
      avg.maps[c].values[i] = cov > 0.0 ? avg.maps[c].values[i] / cov : 0.0;
  }
  return avg;
}

EntropyTerms entropy_of_average(const ViewAverage& average,
                                bool normalize_classes, bool want_grad) {
  const std::size_t c_count = average.maps.size();
  const std::size_t n = average.coverage.size();
  EntropyTerms out;
  if (want_grad) out.grad.assign(c_count, std::vector<double>(n, 0.0));
  std::size_t covered = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (average.coverage.values[i] > 0.0) ++covered;
  if (covered == 0 || c_count == 0) {
    out.degenerate = true;
    return out;
  }
  const double inv_cov = 1.0 / static_cast<double>(covered);
  std::vector<double> m(c_count), logp(c_count);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(average.coverage.values[i] > 0.0)) continue;
    double z = 0.0;
    for (std::size_t c = 0; c < c_count; ++c) {
      m[c] = std::max(average.maps[c].values[i], kProbabilityFloor);
      z += m[c];
    }
    double h = 0.0;
    if (normalize_classes) {
      for (std::size_t c = 0; c < c_count; ++c) {
        const double p = m[c] / z;
        logp[c] = std::log(p);
        h -= p * logp[c];
      }
    } else {
      for (std::size_t c = 0; c < c_count; ++c) {
        logp[c] = std::log(m[c]);
        h -= m[c] * logp[c];
      }
    }
    total += h;
    if (want_grad) {
      for (std::size_t c = 0; c < c_count; ++c) {
        if (!(average.maps[c].values[i] > kProbabilityFloor)) continue;
        const double d = normalize_classes ? (-logp[c] - h) / z : -(logp[c] + 1.0);
        out.grad[c][i] = d * inv_cov;
      }
    }
  }
  out.value = total * inv_cov;
  return out;
}

double entropy_loss(const std::vector<std::vector<ScoreMap>>& per_view,
                    const AugmentSpec& spec, bool normalize_classes) {
  return entropy_of_average(average_views(per_view, spec), normalize_classes, false)
      .value;
}

namespace {

LossWithGrad evaluate_total(const DistanceMatrix& s,
                            const std::vector<std::vector<ScoreMap>>& per_view,
                            const AugmentSpec& spec, const LossOptions& options,
                            bool want_grad) {
  if (!(options.alpha >= 0.0)) throw_invalid("total_loss: alpha must be >= 0");
  const ViewAverage avg = average_views(per_view, spec);
  const std::size_t c_count = avg.maps.size();
  if (c_count < 2) throw_invalid("total_loss: needs at least two classes");
  const std::size_t n = avg.coverage.size();

  std::vector<double> mask(n);
  for (std::size_t i = 0; i < n; ++i) mask[i] = avg.coverage.values[i] > 0.0 ? 1.0 : 0.0;
  std::vector<std::vector<double>> maps;
  for (const auto& m : avg.maps) maps.push_back(m.values);

  const ClusterTerms cluster = cluster_terms(s, maps, mask, options.cluster, want_grad);
  const EntropyTerms entropy =
      entropy_of_average(avg, options.normalize_entropy, want_grad);

  LossWithGrad out;
  out.loss.cluster = cluster.loss;
  out.loss.intra = cluster.intra;
  out.loss.inter = cluster.inter;
  out.loss.entropy = entropy.value;
  out.loss.alpha = options.alpha;
  out.loss.total = cluster.loss + options.alpha * entropy.value;
  out.loss.degenerate_flags = cluster.degenerate;
  out.loss.entropy_degenerate = entropy.degenerate;
  if (!want_grad) return out;

  const std::size_t g = spec.grid_side;
  std::vector<ScoreMap> grad_mean(c_count, ScoreMap(g, g));
  for (std::size_t c = 0; c < c_count; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      const double cov = avg.coverage.values[i];
      if (!(cov > 0.0)) continue;
      double gval = cluster.grad[c][i];
      if (options.alpha != 0.0) gval += options.alpha * entropy.grad[c][i];
      grad_mean[c].values[i] = gval / cov;
    }
  }
  out.grad.reserve(per_view.size());
  for (std::size_t v = 0; v < per_view.size(); ++v)
    out.grad.push_back(invert_augment_vjp(grad_mean, spec, v));
  return out;
}

}  // namespace

LossBreakdown total_loss(const DistanceMatrix& s,
                         const std::vector<std::vector<ScoreMap>>& per_view,
                         const AugmentSpec& spec, const LossOptions& options) {
  return evaluate_total(s, per_view, spec, options, false).loss;
}

LossWithGrad total_loss_with_grad(const DistanceMatrix& s,
                                  const std::vector<std::vector<ScoreMap>>& per_view,
                                  const AugmentSpec& spec,
                                  const LossOptions& options) {
  return evaluate_total(s, per_view, spec, options, true);
}

}  // namespace invseg
