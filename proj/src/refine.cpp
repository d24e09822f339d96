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

#include "invseg/refine.hpp"

#include <algorithm>

#include "invseg/error.hpp"

namespace invseg {

Matrix refine_cross(const Matrix& a_self, const Matrix& a_cross,
                    std::vector<MinMaxCache>* caches) {
  if (a_self.cols != a_cross.rows || a_self.rows != a_self.cols) {
    throw_invalid("refine_cross: self-attention " + std::to_string(a_self.rows) +
                  "x" + std::to_string(a_self.cols) +
                  " does not match cross-attention " +
                  std::to_string(a_cross.rows) + "x" +
                  std::to_string(a_cross.cols));
  }
  Matrix product = matmul(a_self, a_cross);
  const std::size_t n = product.rows;
  const std::size_t k = product.cols;
  if (caches) caches->assign(k, MinMaxCache{});
  std::vector<double> column(n);
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t i = 0; i < n; ++i) column[i] = product(i, c);
    MinMaxCache cache;
    minmax_norm_inplace(column, &cache);
    for (std::size_t i = 0; i < n; ++i) product(i, c) = column[i];
    if (caches) (*caches)[c] = cache;
  }
  return product;
}

Matrix refine_cross_vjp(const Matrix& a_self, const Matrix& refined,
                        const std::vector<MinMaxCache>& caches,
                        const Matrix& grad_refined) {
  if (grad_refined.rows != refined.rows || grad_refined.cols != refined.cols ||
      caches.size() != refined.cols) {
    throw_invalid("refine_cross_vjp: shape mismatch");
  }
  const std::size_t n = refined.rows;
  Matrix grad_product(n, refined.cols);
  std::vector<double> y(n), g(n);
  for (std::size_t c = 0; c < refined.cols; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = refined(i, c);
      g[i] = grad_refined(i, c);
    }
    const auto gx = minmax_norm_vjp(y, caches[c], g);
    for (std::size_t i = 0; i < n; ++i) grad_product(i, c) = gx[i];
  }
  return matmul_tn(a_self, grad_product);
}

namespace {

bool has_tokens(const ClassSpan& s) { return s.end > s.begin; }

}  // namespace

ClassMaps class_maps(const Matrix& refined, std::size_t side,
                     const std::vector<ClassSpan>& spans,
                     std::optional<std::size_t> background_class,
                     ClassMapsTrace* trace) {
  const std::size_t n = side * side;
  if (refined.rows != n)
    throw_invalid("class_maps: refined rows do not match grid side");
  const std::size_t c_count = spans.size();
  ClassMaps out;
  out.side = side;
  out.maps.assign(c_count, ScoreMap(side, side));
  ClassMapsTrace local;
  local.caches.assign(c_count, MinMaxCache{});

  std::optional<std::size_t> synth;
  for (std::size_t c = 0; c < c_count; ++c) {
    const auto& s = spans[c];
    out.names.push_back(s.name);
    if (!has_tokens(s)) {
      if (background_class && *background_class == c && !synth) {
        synth = c;
        continue;
      }
      throw_invalid("class_maps: class '" + s.name + "' has an empty token span");
    }
    if (s.end > refined.cols)
      throw_invalid("class_maps: span of '" + s.name + "' exceeds token count");
    const double inv = 1.0 / static_cast<double>(s.end - s.begin);
    auto& values = out.maps[c].values;
    for (std::size_t i = 0; i < n; ++i) {
      double sum = 0.0;
      for (std::size_t k = s.begin; k < s.end; ++k) sum += refined(i, k);
      values[i] = sum * inv;
    }
    minmax_norm_inplace(values, &local.caches[c]);
  }

  if (synth) {
    local.synthesized_background = true;
    local.background_source.assign(n, 0);
    auto& values = out.maps[*synth].values;
    for (std::size_t i = 0; i < n; ++i) {
      double best = 0.0;
      std::size_t src = c_count;
      for (std::size_t c = 0; c < c_count; ++c) {
        if (c == *synth) continue;
        if (src == c_count || out.maps[c].values[i] > best) {
          best = out.maps[c].values[i];
          src = c;
        }
      }
      local.background_source[i] = src;
      values[i] = src == c_count ? 1.0 : 1.0 - best;
    }
    minmax_norm_inplace(values, &local.caches[*synth]);
  }
  if (trace) *trace = std::move(local);
  return out;
}

Matrix class_maps_vjp(const ClassMaps& maps, const ClassMapsTrace& trace,
                      const std::vector<ClassSpan>& spans,
                      std::optional<std::size_t> background_class,
                      std::size_t token_count,
                      const std::vector<ScoreMap>& grad_maps) {
  const std::size_t c_count = spans.size();
  if (grad_maps.size() != c_count || maps.count() != c_count)
    throw_invalid("class_maps_vjp: class count mismatch");
  const std::size_t n = maps.side * maps.side;
  std::vector<std::vector<double>> grad_norm(c_count);
  for (std::size_t c = 0; c < c_count; ++c) grad_norm[c] = grad_maps[c].values;

  if (trace.synthesized_background) {
    const std::size_t bg = *background_class;
    const auto g_pre = minmax_norm_vjp(maps.maps[bg].values, trace.caches[bg],
                                       grad_norm[bg]);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t src = trace.background_source[i];
      if (src < c_count) grad_norm[src][i] -= g_pre[i];
    }
  }

  Matrix grad(n, token_count);
  for (std::size_t c = 0; c < c_count; ++c) {
    const auto& s = spans[c];
    if (!has_tokens(s)) continue;
    const auto g_mean =
        minmax_norm_vjp(maps.maps[c].values, trace.caches[c], grad_norm[c]);
    const double inv = 1.0 / static_cast<double>(s.end - s.begin);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = s.begin; k < s.end; ++k) grad(i, k) += g_mean[i] * inv;
    }
  }
  return grad;
}

}  // namespace invseg
