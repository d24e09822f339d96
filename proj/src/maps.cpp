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

#include "invseg/maps.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <set>
#include <sstream>

#include "invseg/error.hpp"

namespace invseg {
namespace {

double lerp(double a, double b, double f) { return a + f * (b - a); }

void check_region_target(std::size_t src_h, std::size_t src_w,
                         std::size_t target_h, std::size_t target_w) {
  if (src_h == 0 || src_w == 0) throw_invalid("resample: empty source map");
  if (target_h == 0 || target_w == 0)
    throw_invalid("resample: target dimensions must be positive");
}

}  // namespace

ScoreMap::ScoreMap(std::size_t h, std::size_t w, std::vector<double> v)
    : height(h), width(w), values(std::move(v)) {
  if (values.size() != h * w)
    throw_invalid("ScoreMap: value count does not match dimensions");
}

SampleRegion full_region(std::size_t src_h, std::size_t src_w) {
  return {0.0, static_cast<double>(src_h) - 1.0, 0.0,
          static_cast<double>(src_w) - 1.0};
}

SampleRegion window_region(const CropWindow& window, std::size_t grid_side,
                           std::size_t target_side) {
  if (window.height == 0 || window.width == 0 ||
      window.top + window.height > grid_side ||
      window.left + window.width > grid_side) {
    throw_invalid("crop window out of bounds");
  }
  if (grid_side == 1) return full_region(target_side, target_side);
  const double scale = static_cast<double>(target_side - 1) /
                       static_cast<double>(grid_side - 1);
  return {window.top * scale, (window.top + window.height - 1) * scale,
          window.left * scale, (window.left + window.width - 1) * scale};
}

std::vector<AxisTap> axis_taps(std::size_t src_n, std::size_t out_n,
                               double start, double end) {
  std::vector<AxisTap> taps(out_n);
  const double hi = static_cast<double>(src_n - 1);
  for (std::size_t i = 0; i < out_n; ++i) {
    double coord = start;
    if (out_n > 1) {
      coord = start + (end - start) * (static_cast<double>(i) /
                                       static_cast<double>(out_n - 1));
    }
    coord = std::clamp(coord, 0.0, hi);
    auto i0 = static_cast<std::size_t>(std::floor(coord));
    if (i0 > src_n - 1) i0 = src_n - 1;
    const std::size_t i1 = std::min(i0 + 1, src_n - 1);
    taps[i] = {i0, i1, i1 == i0 ? 0.0 : coord - static_cast<double>(i0)};
  }
  return taps;
}

ScoreMap bilinear_resize(const ScoreMap& map, std::size_t target_h,
                         std::size_t target_w) {
  check_region_target(map.height, map.width, target_h, target_w);
  return resample_region(map, full_region(map.height, map.width), target_h,
                         target_w);
}

ScoreMap resample_region(const ScoreMap& map, const SampleRegion& region,
                         std::size_t target_h, std::size_t target_w) {
  check_region_target(map.height, map.width, target_h, target_w);
  const auto ty = axis_taps(map.height, target_h, region.y0, region.y1);
  const auto tx = axis_taps(map.width, target_w, region.x0, region.x1);
  // Columns first, then rows.
  std::vector<double> tmp(map.height * target_w);
  for (std::size_t y = 0; y < map.height; ++y) {
    const double* src = map.values.data() + y * map.width;
    for (std::size_t x = 0; x < target_w; ++x)
      tmp[y * target_w + x] = lerp(src[tx[x].i0], src[tx[x].i1], tx[x].frac);
  }
  ScoreMap out(target_h, target_w);
  for (std::size_t y = 0; y < target_h; ++y) {
    const double* r0 = tmp.data() + ty[y].i0 * target_w;
    const double* r1 = tmp.data() + ty[y].i1 * target_w;
    for (std::size_t x = 0; x < target_w; ++x)
      out.values[y * target_w + x] = lerp(r0[x], r1[x], ty[y].frac);
  }
  return out;
}

ScoreMap resample_region_vjp(const ScoreMap& grad_out, std::size_t src_h,
                             std::size_t src_w, const SampleRegion& region) {
  check_region_target(src_h, src_w, grad_out.height, grad_out.width);
  const auto ty = axis_taps(src_h, grad_out.height, region.y0, region.y1);
  const auto tx = axis_taps(src_w, grad_out.width, region.x0, region.x1);
  std::vector<double> tmp(src_h * grad_out.width, 0.0);
  for (std::size_t y = 0; y < grad_out.height; ++y) {
    const double f = ty[y].frac;
    for (std::size_t x = 0; x < grad_out.width; ++x) {
      const double g = grad_out.values[y * grad_out.width + x];
      tmp[ty[y].i0 * grad_out.width + x] += (1.0 - f) * g;
      tmp[ty[y].i1 * grad_out.width + x] += f * g;
    }
  }
  ScoreMap grad(src_h, src_w);
  for (std::size_t y = 0; y < src_h; ++y) {
    for (std::size_t x = 0; x < grad_out.width; ++x) {
      const double g = tmp[y * grad_out.width + x];
      grad.values[y * src_w + tx[x].i0] += (1.0 - tx[x].frac) * g;
      grad.values[y * src_w + tx[x].i1] += tx[x].frac * g;
    }
  }
  return grad;
}

Matrix resample_columns(const Matrix& m, std::size_t side,
                        const SampleRegion& region, std::size_t out_side) {
  if (m.rows != side * side)
    throw_invalid("resample_columns: row count is not side^2");
  check_region_target(side, side, out_side, out_side);
  const std::size_t k = m.cols;
  const auto ty = axis_taps(side, out_side, region.y0, region.y1);
  const auto tx = axis_taps(side, out_side, region.x0, region.x1);
  Matrix tmp(side * out_side, k);
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < out_side; ++x) {
      const double* a = &m.data[(y * side + tx[x].i0) * k];
      const double* b = &m.data[(y * side + tx[x].i1) * k];
      double* o = &tmp.data[(y * out_side + x) * k];
      for (std::size_t c = 0; c < k; ++c) o[c] = lerp(a[c], b[c], tx[x].frac);
    }
  }
  Matrix out(out_side * out_side, k);
  for (std::size_t y = 0; y < out_side; ++y) {
    for (std::size_t x = 0; x < out_side; ++x) {
      const double* a = &tmp.data[(ty[y].i0 * out_side + x) * k];
      const double* b = &tmp.data[(ty[y].i1 * out_side + x) * k];
      double* o = &out.data[(y * out_side + x) * k];
      for (std::size_t c = 0; c < k; ++c) o[c] = lerp(a[c], b[c], ty[y].frac);
    }
  }
  return out;
}

Matrix resample_columns_vjp(const Matrix& grad_out, std::size_t side,
                            const SampleRegion& region, std::size_t out_side) {
  if (grad_out.rows != out_side * out_side)
    throw_invalid("resample_columns_vjp: row count is not out_side^2");
  const std::size_t k = grad_out.cols;
  const auto ty = axis_taps(side, out_side, region.y0, region.y1);
  const auto tx = axis_taps(side, out_side, region.x0, region.x1);
  Matrix tmp(side * out_side, k);
  for (std::size_t y = 0; y < out_side; ++y) {
    const double f = ty[y].frac;
    for (std::size_t x = 0; x < out_side; ++x) {
      const double* g = &grad_out.data[(y * out_side + x) * k];
      double* a = &tmp.data[(ty[y].i0 * out_side + x) * k];
      double* b = &tmp.data[(ty[y].i1 * out_side + x) * k];
      for (std::size_t c = 0; c < k; ++c) {
        a[c] += (1.0 - f) * g[c];
        b[c] += f * g[c];
      }
    }
  }
  Matrix grad(side * side, k);
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < out_side; ++x) {
      const double f = tx[x].frac;
      const double* g = &tmp.data[(y * out_side + x) * k];
      double* a = &grad.data[(y * side + tx[x].i0) * k];
      double* b = &grad.data[(y * side + tx[x].i1) * k];
      for (std::size_t c = 0; c < k; ++c) {
        a[c] += (1.0 - f) * g[c];
        b[c] += f * g[c];
      }
    }
  }
  return grad;
}

Matrix resample_affinity(const Matrix& m, std::size_t side,
                         const SampleRegion& region, std::size_t out_side) {
  const std::size_t n = side * side;
  if (m.rows != n || m.cols != n)
    throw_invalid("resample_affinity: matrix is not (side^2 x side^2)");
  check_region_target(side, side, out_side, out_side);
  const std::size_t n_out = out_side * out_side;
  const auto ty = axis_taps(side, out_side, region.y0, region.y1);
  const auto tx = axis_taps(side, out_side, region.x0, region.x1);

  // Key axis: each row is a side x side map.
  Matrix keyed(n, n_out);
  const int threads = kernel_threads();
#pragma omp parallel for schedule(static) num_threads(threads) if (n > 64)
  for (std::size_t q = 0; q < n; ++q) {
    const double* src = m.data.data() + q * n;
    double* dst = keyed.data.data() + q * n_out;
    for (std::size_t y = 0; y < out_side; ++y) {
      const double* r0 = src + ty[y].i0 * side;
      const double* r1 = src + ty[y].i1 * side;
      for (std::size_t x = 0; x < out_side; ++x) {
        const double a = lerp(r0[tx[x].i0], r0[tx[x].i1], tx[x].frac);
        const double b = lerp(r1[tx[x].i0], r1[tx[x].i1], tx[x].frac);
        dst[y * out_side + x] = lerp(a, b, ty[y].frac);
      }
    }
  }

  // Query axis: each output row blends four keyed rows.
  Matrix out(n_out, n_out);
#pragma omp parallel for schedule(static) num_threads(threads) if (n_out > 64)
  for (std::size_t oq = 0; oq < n_out; ++oq) {
    const AxisTap& yt = ty[oq / out_side];
    const AxisTap& xt = tx[oq % out_side];
    const double* r00 = keyed.data.data() + (yt.i0 * side + xt.i0) * n_out;
    const double* r01 = keyed.data.data() + (yt.i0 * side + xt.i1) * n_out;
    const double* r10 = keyed.data.data() + (yt.i1 * side + xt.i0) * n_out;
    const double* r11 = keyed.data.data() + (yt.i1 * side + xt.i1) * n_out;
    double* dst = out.data.data() + oq * n_out;
    double sum = 0.0;
    for (std::size_t j = 0; j < n_out; ++j) {
      const double a = lerp(r00[j], r01[j], xt.frac);
      const double b = lerp(r10[j], r11[j], xt.frac);
      dst[j] = lerp(a, b, yt.frac);
      sum += dst[j];
    }
    if (sum > 0.0) {
      for (std::size_t j = 0; j < n_out; ++j) dst[j] /= sum;
    }
  }
  return out;
}

ScoreMap minmax_norm(const ScoreMap& map) {
  ScoreMap out = map;
  minmax_norm_inplace(out.values);
  return out;
}

void minmax_norm_inplace(std::span<double> values, MinMaxCache* cache) {
  MinMaxCache local;
  if (!values.empty()) {
    for (std::size_t i = 1; i < values.size(); ++i) {
      if (values[i] < values[local.argmin]) local.argmin = i;
      if (values[i] > values[local.argmax]) local.argmax = i;
    }
    const double lo = values[local.argmin];
    local.range = values[local.argmax] - lo;
    local.degenerate = !(local.range >= kMinMaxDegenerateRange);
    if (local.degenerate) {
      std::fill(values.begin(), values.end(), 0.0);
    } else {
      for (double& v : values) v = (v - lo) / local.range;
    }
  }
  if (cache) *cache = local;
}

std::vector<double> minmax_norm_vjp(std::span<const double> normalized,
                                    const MinMaxCache& cache,
                                    std::span<const double> grad_out) {
  std::vector<double> grad(normalized.size(), 0.0);
  if (cache.degenerate || normalized.empty()) return grad;
  const double inv = 1.0 / cache.range;
  double to_min = 0.0;
  double to_max = 0.0;
  for (std::size_t i = 0; i < normalized.size(); ++i) {
    grad[i] = grad_out[i] * inv;
    to_min += grad_out[i] * (normalized[i] - 1.0);
    to_max -= grad_out[i] * normalized[i];
  }
  grad[cache.argmin] += to_min * inv;
  grad[cache.argmax] += to_max * inv;
  return grad;
}

const AttentionLevel* AttentionBundle::level(std::size_t side) const {
  for (const auto& l : levels)
    if (l.side == side) return &l;
  return nullptr;
}

AttentionLevel& AttentionBundle::level_or_add(std::size_t side) {
  for (auto& l : levels)
    if (l.side == side) return l;
  levels.push_back(AttentionLevel{side, {}, {}});
  std::sort(levels.begin(), levels.end(),
            [](const AttentionLevel& a, const AttentionLevel& b) {
              return a.side < b.side;
            });
  for (auto& l : levels)
    if (l.side == side) return l;
  return levels.back();
}

void validate_bundle(const AttentionBundle& bundle, double row_tolerance) {
  auto fail = [](const std::string& msg) {
    throw Error(ErrorCode::kValidation, msg);
  };
  const std::size_t k = bundle.token_count();
  if (bundle.image_height == 0 || bundle.image_width == 0)
    fail("image dimensions must be positive");
  if (bundle.levels.empty()) fail("bundle has no attention levels");
  if (bundle.classes.empty()) fail("bundle has no classes");
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  for (std::size_t c = 0; c < bundle.classes.size(); ++c) {
    const auto& s = bundle.classes[c];
    const bool is_background =
        bundle.background_class && *bundle.background_class == c;
    const bool empty_ok = is_background && s.begin == s.end;
    if ((s.begin >= s.end && !empty_ok) || s.end > k) {
      std::ostringstream os;
      os << "class " << c << " ('" << s.name << "') has invalid token span ["
         << s.begin << ", " << s.end << ") for " << k << " tokens";
      fail(os.str());
    }
    if (s.begin < s.end) spans.emplace_back(s.begin, s.end);
  }
  std::sort(spans.begin(), spans.end());
  for (std::size_t i = 1; i < spans.size(); ++i) {
    if (spans[i].first < spans[i - 1].second)
      fail("class token spans overlap");
  }
  if (bundle.background_class && *bundle.background_class >= bundle.classes.size())
    fail("background class index out of range");

  for (const auto& level : bundle.levels) {
    const std::size_t n = level.side * level.side;
    if (n == 0) fail("attention level with zero side");
    for (std::size_t li = 0; li < level.self_layers.size(); ++li) {
      const auto& layer = level.self_layers[li];
      const Matrix& m = layer.values;
      std::ostringstream where;
      where << "self layer " << li << " ('" << layer.name << "', res "
            << level.side << ", t=" << layer.timestep << ")";
      if (m.rows != n || m.cols != n) {
        std::ostringstream os;
        os << where.str() << " has shape " << m.rows << "x" << m.cols
           << ", expected " << n << "x" << n;
        fail(os.str());
      }
      for (std::size_t r = 0; r < n; ++r) {
        double sum = 0.0;
        for (double v : m.row(r)) {
          if (!std::isfinite(v) || v < 0.0) {
            std::ostringstream os;
            os << where.str() << " row " << r
               << " has a negative or non-finite entry";
            fail(os.str());
          }
          sum += v;
        }
        if (std::abs(sum - 1.0) > row_tolerance) {
          std::ostringstream os;
          os << where.str() << " row " << r << " sums to " << sum
             << " (tolerance " << row_tolerance << ")";
          fail(os.str());
        }
      }
    }
    for (std::size_t li = 0; li < level.cross_layers.size(); ++li) {
      const auto& layer = level.cross_layers[li];
      const Matrix& m = layer.values;
      std::ostringstream where;
      where << "cross layer " << li << " ('" << layer.name << "', res "
            << level.side << ", t=" << layer.timestep << ")";
      if (m.rows != n || m.cols != k) {
        std::ostringstream os;
        os << where.str() << " has shape " << m.rows << "x" << m.cols
           << ", expected " << n << "x" << k;
        fail(os.str());
      }
      for (std::size_t i = 0; i < m.data.size(); ++i) {
        if (!std::isfinite(m.data[i]) || m.data[i] < 0.0) {
          std::ostringstream os;
          os << where.str() << " row " << i / k
             << " has a negative or non-finite entry";
          fail(os.str());
        }
      }
    }
  }
}

AttentionBundle select_timestep(const AttentionBundle& bundle, int timestep) {
  std::set<int> present;
  for (const auto& l : bundle.levels) {
    for (const auto& s : l.self_layers) present.insert(s.timestep);
    for (const auto& c : l.cross_layers) present.insert(c.timestep);
  }
  if (present.empty()) return bundle;
  int best = *present.begin();
  for (int t : present) {
    if (std::abs(t - timestep) < std::abs(best - timestep)) best = t;
  }
  AttentionBundle out = bundle;
  for (auto& l : out.levels) {
    std::erase_if(l.self_layers,
                  [best](const AttentionLayer& a) { return a.timestep != best; });
    std::erase_if(l.cross_layers,
                  [best](const AttentionLayer& a) { return a.timestep != best; });
  }
  return out;
}

AggregationWeights::AggregationWeights(
    std::vector<std::pair<std::size_t, double>> w)
    : entries_(std::move(w)) {
  if (entries_.empty()) throw_invalid("aggregation weights are empty");
  double sum = 0.0;
  for (const auto& [side, weight] : entries_) {
    if (!(weight >= 0.0) || !std::isfinite(weight))
      throw_invalid("aggregation weights must be finite and nonnegative");
    if (side == 0) throw_invalid("aggregation weight for resolution 0");
    sum += weight;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw_invalid("aggregation weights must sum to 1");
}

AggregationWeights AggregationWeights::one_hot(std::size_t side) {
  return AggregationWeights({{side, 1.0}});
}

double AggregationWeights::weight(std::size_t side) const {
  for (const auto& [s, w] : entries_)
    if (s == side) return w;
  return 0.0;
}

namespace {

const AttentionLevel& weighted_level(const AttentionBundle& bundle,
                                     std::size_t side, bool self) {
  const AttentionLevel* level = bundle.level(side);
  const bool empty = !level || (self ? level->self_layers.empty()
                                     : level->cross_layers.empty());
  if (empty) {
    throw_invalid("aggregate_attention: no " +
                  std::string(self ? "self" : "cross") +
                  "-attention layers at weighted resolution " +
                  std::to_string(side));
  }
  return *level;
}

Matrix layer_mean(const std::vector<AttentionLayer>& layers) {
  Matrix mean = layers.front().values;
  for (std::size_t i = 1; i < layers.size(); ++i) {
    const auto& d = layers[i].values.data;
    if (d.size() != mean.data.size())
      throw_invalid("aggregate_attention: layer shapes differ within a resolution");
    for (std::size_t j = 0; j < d.size(); ++j) mean.data[j] += d[j];
  }
  if (layers.size() > 1) {
    const double inv = 1.0 / static_cast<double>(layers.size());
    for (double& v : mean.data) v *= inv;
  }
  return mean;
}

void check_bundle_nonempty(const AttentionBundle& bundle) {
  if (bundle.levels.empty()) throw_invalid("aggregate_attention: empty bundle");
}

}  // namespace

Matrix aggregate_self(const AttentionBundle& bundle,
                      const AggregationWeights& weights, std::size_t out_side) {
  check_bundle_nonempty(bundle);
  const std::size_t n = out_side * out_side;
  Matrix total(n, n);
  bool any = false;
  for (const auto& [side, w] : weights.entries()) {
    if (w == 0.0) continue;
    const AttentionLevel& level = weighted_level(bundle, side, true);
    Matrix mean = layer_mean(level.self_layers);
    if (side != out_side) {
      mean = resample_affinity(mean, side, full_region(side, side), out_side);
    }
    for (std::size_t j = 0; j < n * n; ++j) total.data[j] += w * mean.data[j];
    any = true;
  }
  if (!any) throw_invalid("aggregate_attention: all weights are zero");
  return total;
}

Matrix aggregate_cross(const AttentionBundle& bundle,
                       const AggregationWeights& weights, std::size_t out_side) {
  check_bundle_nonempty(bundle);
  const std::size_t n = out_side * out_side;
  Matrix total(n, bundle.token_count());
  bool any = false;
  for (const auto& [side, w] : weights.entries()) {
    if (w == 0.0) continue;
    const AttentionLevel& level = weighted_level(bundle, side, false);
    Matrix mean = layer_mean(level.cross_layers);
    if (mean.cols != total.cols)
      throw_invalid("aggregate_attention: cross layer token count mismatch");
    if (side != out_side) {
      mean = resample_columns(mean, side, full_region(side, side), out_side);
    }
    for (std::size_t j = 0; j < total.data.size(); ++j)
      total.data[j] += w * mean.data[j];
    any = true;
  }
  if (!any) throw_invalid("aggregate_attention: all weights are zero");
  return total;
}

AggregatedAttention aggregate_attention(const AttentionBundle& bundle,
                                        const AggregationWeights& weights,
                                        std::size_t out_side) {
  return {aggregate_self(bundle, weights, out_side),
          aggregate_cross(bundle, weights, out_side)};
}

std::vector<std::vector<Matrix>> aggregate_cross_vjp(
    const AttentionBundle& bundle, const AggregationWeights& weights,
    std::size_t out_side, const Matrix& grad_cross) {
  std::vector<std::vector<Matrix>> grads;
  for (const auto& level : bundle.levels) {
    const std::size_t count = level.cross_layers.size();
    std::vector<Matrix> per_layer;
    const double w = weights.weight(level.side);
    Matrix g(level.side * level.side, bundle.token_count());
    if (w != 0.0 && count > 0) {
      g = level.side == out_side
              ? grad_cross
              : resample_columns_vjp(grad_cross, level.side,
                                     full_region(level.side, level.side),
                                     out_side);
      const double scale = w / static_cast<double>(count);
      for (double& v : g.data) v *= scale;
    }
    per_layer.assign(count, g);
    grads.push_back(std::move(per_layer));
  }
  return grads;
}

}  // namespace invseg
