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

#include "invseg/reference.hpp"

#include <algorithm>
#include <cmath>

#include "invseg/error.hpp"

namespace invseg::reference {

namespace {

constexpr double kFloor = 1e-12;

double clamp_prob(double v) { return v < kFloor ? kFloor : v; }

double sum(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

std::vector<double> anchors_of(const std::vector<double>& map, double scale,
                               double center) {
  std::vector<double> a(map.size());
  for (std::size_t i = 0; i < map.size(); ++i) a[i] = sigmoid_anchor(map[i], scale, center);
  return a;
}

}  // namespace

Grid skl(const Matrix& a) {
  const std::size_t n = a.rows;
  Grid s(n, std::vector<double>(n, 0.0));
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t q = 0; q < n; ++q) {
      if (p == q) continue;
      double kl_pq = 0.0;
      double kl_qp = 0.0;
      for (std::size_t m = 0; m < a.cols; ++m) {
        const double x = clamp_prob(a(p, m));
        const double y = clamp_prob(a(q, m));
        kl_pq += a(p, m) * std::log(x / y);
        kl_qp += a(q, m) * std::log(y / x);
      }
      s[p][q] = std::max(kl_pq + kl_qp, 0.0);
    }
  }
  return s;
}

double sigmoid_anchor(double value, double scale, double center) {
  return 1.0 / (1.0 + std::exp(-scale * (value - center)));
}

double point_to_map(const Grid& s, std::size_t p, const std::vector<double>& map) {
  const double mass = sum(map);
  if (mass <= kFloor) return 0.0;
  double acc = 0.0;
  for (std::size_t q = 0; q < map.size(); ++q) acc += s[p][q] * map[q];
  return acc / mass;
}

double anchor_to_map(const Grid& s, const std::vector<double>& anchor,
                     const std::vector<double>& map) {
  const double mass = sum(anchor);
  if (mass <= kFloor) return 0.0;
  double acc = 0.0;
  for (std::size_t p = 0; p < anchor.size(); ++p) acc += anchor[p] * point_to_map(s, p, map);
  return acc / mass;
}

double d_intra(const Grid& s, const Grid& maps, double scale, double center) {
  double total = 0.0;
  for (const auto& m : maps) total += anchor_to_map(s, anchors_of(m, scale, center), m);
  return total;
}

double d_inter(const Grid& s, const Grid& maps, double scale, double center,
               bool symmetric) {
  double total = 0.0;
  for (std::size_t lo = 0; lo < maps.size(); ++lo) {
    for (std::size_t hi = lo + 1; hi < maps.size(); ++hi) {
      const double forward = anchor_to_map(s, anchors_of(maps[hi], scale, center), maps[lo]);
      if (!symmetric) {
        total += forward;
        continue;
      }
      const double backward = anchor_to_map(s, anchors_of(maps[lo], scale, center), maps[hi]);
      total += 0.5 * (forward + backward);
    }
  }
  return total;
}

double cluster(const Grid& s, const Grid& maps, double scale, double center,
               bool symmetric) {
  const double c = static_cast<double>(maps.size());
  if (maps.size() < 2) throw_invalid("reference cluster: needs two classes");
  return d_intra(s, maps, scale, center) / c -
         2.0 * d_inter(s, maps, scale, center, symmetric) / (c * (c - 1.0));
}

std::vector<double> resize(const std::vector<double>& src, std::size_t src_h,
                           std::size_t src_w, std::size_t out_h, std::size_t out_w) {
  auto position = [](std::size_t i, std::size_t out_n, std::size_t src_n) {
    if (out_n == 1) return 0.0;
    return static_cast<double>(i) * static_cast<double>(src_n - 1) /
           static_cast<double>(out_n - 1);
  };
  std::vector<double> out(out_h * out_w);
  for (std::size_t i = 0; i < out_h; ++i) {
    const double py = position(i, out_h, src_h);
    const std::size_t y0 = std::min(static_cast<std::size_t>(py), src_h - 1);
    const std::size_t y1 = std::min(y0 + 1, src_h - 1);
    const double fy = py - static_cast<double>(y0);
    for (std::size_t j = 0; j < out_w; ++j) {
      const double px = position(j, out_w, src_w);
      const std::size_t x0 = std::min(static_cast<std::size_t>(px), src_w - 1);
      const std::size_t x1 = std::min(x0 + 1, src_w - 1);
      const double fx = px - static_cast<double>(x0);
      out[i * out_w + j] = (1 - fy) * (1 - fx) * src[y0 * src_w + x0] +
                           (1 - fy) * fx * src[y0 * src_w + x1] +
                           fy * (1 - fx) * src[y1 * src_w + x0] +
                           fy * fx * src[y1 * src_w + x1];
    }
  }
  return out;
}

Averaged average_views(const std::vector<Grid>& per_view,
                       const std::vector<CropWindow>& windows, std::size_t g) {
  if (per_view.empty() || per_view.size() != windows.size())
    throw_invalid("reference average: view/window count mismatch");
  const std::size_t c_count = per_view[0].size();
  Averaged avg;
  avg.maps.assign(c_count, std::vector<double>(g * g, 0.0));
  avg.coverage.assign(g * g, 0);
  for (std::size_t v = 0; v < per_view.size(); ++v) {
    const CropWindow& w = windows[v];
    for (std::size_t y = 0; y < w.height; ++y)
      for (std::size_t x = 0; x < w.width; ++x) avg.coverage[(w.top + y) * g + w.left + x] += 1;
    for (std::size_t c = 0; c < c_count; ++c) {
      const auto small = resize(per_view[v][c], g, g, w.height, w.width);
      for (std::size_t y = 0; y < w.height; ++y)
        for (std::size_t x = 0; x < w.width; ++x)
          avg.maps[c][(w.top + y) * g + w.left + x] += small[y * w.width + x];
    }
  }
  for (std::size_t c = 0; c < c_count; ++c)
    for (std::size_t i = 0; i < g * g; ++i)
      if (avg.coverage[i] > 0) avg.maps[c][i] /= avg.coverage[i];
  return avg;
}

double entropy(const std::vector<Grid>& per_view, const std::vector<CropWindow>& windows,
               std::size_t g, bool normalize_classes) {
  const Averaged avg = average_views(per_view, windows, g);
  double total = 0.0;
  std::size_t covered = 0;
  for (std::size_t i = 0; i < g * g; ++i) {
    if (avg.coverage[i] == 0) continue;
    ++covered;
    double z = 0.0;
    for (const auto& m : avg.maps) z += clamp_prob(m[i]);
    for (const auto& m : avg.maps) {
      const double p = normalize_classes ? clamp_prob(m[i]) / z : clamp_prob(m[i]);
      total -= p * std::log(p);
    }
  }
  return covered == 0 ? 0.0 : total / static_cast<double>(covered);
}

double total(const Grid& s, const std::vector<Grid>& per_view,
             const std::vector<CropWindow>& windows, std::size_t g, double alpha,
             double scale, double center, bool normalize_classes) {
  const Averaged avg = average_views(per_view, windows, g);
  const std::size_t c_count = avg.maps.size();
  Grid anchors;
  for (const auto& m : avg.maps) {
    auto a = anchors_of(m, scale, center);
    for (std::size_t i = 0; i < a.size(); ++i)
      if (avg.coverage[i] == 0) a[i] = 0.0;
    anchors.push_back(std::move(a));
  }
  double intra = 0.0;
  for (std::size_t c = 0; c < c_count; ++c) intra += anchor_to_map(s, anchors[c], avg.maps[c]);
  double inter = 0.0;
  for (std::size_t lo = 0; lo < c_count; ++lo)
    for (std::size_t hi = lo + 1; hi < c_count; ++hi)
      inter += anchor_to_map(s, anchors[hi], avg.maps[lo]);
  const double c = static_cast<double>(c_count);
  const double cluster_term = intra / c - 2.0 * inter / (c * (c - 1.0));
  return cluster_term + alpha * entropy(per_view, windows, g, normalize_classes);
}

}  // namespace invseg::reference
