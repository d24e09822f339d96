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

#include "invseg/backend.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numbers>

#include "invseg/error.hpp"
#include "invseg/random.hpp"

namespace invseg {

void validate_backend_config(const BackendConfig& config) {
  auto allowed = [](std::size_t s) { return s == 8 || s == 16 || s == 32 || s == 64; };
  if (!allowed(config.grid_side))
    throw_invalid("backend: grid side must be one of 8, 16, 32, 64");
  if (config.embed_dim == 0) throw_invalid("backend: embedding dim must be positive");
  if (config.t_min > config.t_max)
    throw_invalid("backend: timestep range has t_min > t_max");
  if (config.t_min < 0) throw_invalid("backend: timesteps must be nonnegative");
}

Backend::Backend(BackendConfig config) : config_(std::move(config)) {
  validate_backend_config(config_);
}

// ---------------------------------------------------------------------------
// Toy backend

void validate_toy_scene(const ToyScene& scene) {
  if (scene.blobs < 2) throw_invalid("toy scene: needs at least two blobs");
  if (scene.side == 0) throw_invalid("toy scene: side must be positive");
  if (!(scene.noise >= 0.0)) throw_invalid("toy scene: noise must be >= 0");
  if (!(scene.blob_width > 0.0)) throw_invalid("toy scene: blob width must be > 0");
  if (!(scene.amplitude > 0.0)) throw_invalid("toy scene: amplitude must be > 0");
  if (!(scene.prompt_offset >= 0.0))
    throw_invalid("toy scene: prompt offset must be >= 0");
  if (!(scene.ramp >= 0.0)) throw_invalid("toy scene: ramp scale must be >= 0");
  if (!(scene.spatial_bias >= 0.0))
    throw_invalid("toy scene: spatial bias must be >= 0");
}

namespace {

std::pair<double, double> pixel_coord(std::size_t y, std::size_t x, std::size_t side) {
  if (side == 1) return {0.5, 0.5};
  const double s = static_cast<double>(side - 1);
  return {static_cast<double>(y) / s, static_cast<double>(x) / s};
}

BlobLayout make_layout(const ToyScene& scene, std::size_t dim) {
  BlobLayout layout;
  Rng rng(mix_seed(scene.seed, 1));
  const double min_sep = 0.45 / std::sqrt(static_cast<double>(scene.blobs));
  for (std::size_t g = 0; g < scene.blobs; ++g) {
    std::pair<double, double> best{0.5, 0.5};
    for (int attempt = 0; attempt < 200; ++attempt) {
      std::pair<double, double> c{0.15 + 0.7 * rng.uniform(), 0.15 + 0.7 * rng.uniform()};
      best = c;
      bool ok = true;
      for (const auto& other : layout.centers) {
        const double dy = c.first - other.first;
        const double dx = c.second - other.second;
        if (std::sqrt(dy * dy + dx * dx) < min_sep) ok = false;
      }
      if (ok) break;
    }
    layout.centers.push_back(best);
  }
  // Gram-Schmidt on Gaussian draws: blob directions first, then y and x.
  Matrix basis(scene.blobs + 2, dim);
  for (std::size_t g = 0; g < basis.rows; ++g) {
    auto v = basis.row(g);
    for (double& x : v) x = rng.normal();
    for (std::size_t h = 0; h < g; ++h) {
      const auto u = basis.row(h);
      double dot = 0.0;
      for (std::size_t i = 0; i < dim; ++i) dot += v[i] * u[i];
      for (std::size_t i = 0; i < dim; ++i) v[i] -= dot * u[i];
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
  }
  layout.directions = Matrix(scene.blobs, dim);
  layout.nuisance = Matrix(2, dim);
  for (std::size_t g = 0; g < scene.blobs; ++g)
    std::copy(basis.row(g).begin(), basis.row(g).end(), layout.directions.row(g).begin());
  for (std::size_t a = 0; a < 2; ++a) {
    const auto src = basis.row(scene.blobs + a);
    std::copy(src.begin(), src.end(), layout.nuisance.row(a).begin());
  }
  return layout;
}

// Soft blob assignment of a point: softmax over -dist^2 / (2 w^2).
std::vector<double> blob_weights(const BlobLayout& layout, double y, double x,
                                 double width) {
  const std::size_t g_count = layout.centers.size();
  std::vector<double> w(g_count);
  double mx = -1e300;
  for (std::size_t g = 0; g < g_count; ++g) {
    const double dy = y - layout.centers[g].first;
    const double dx = x - layout.centers[g].second;
    w[g] = -(dy * dy + dx * dx) / (2.0 * width * width);
    mx = std::max(mx, w[g]);
  }
  double sum = 0.0;
  for (double& v : w) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : w) v /= sum;
  return w;
}

}  // namespace

ToyBackend::ToyBackend(ToyScene scene, BackendConfig config)
    : Backend(std::move(config)), scene_(std::move(scene)) {
  validate_toy_scene(scene_);
  const BackendConfig& cfg = this->config();
  if (scene_.blobs + 2 > cfg.embed_dim)
    throw_invalid("toy backend: embedding dim must be at least blob count + 2");
  if (cfg.resolutions.empty()) throw_invalid("toy backend: no resolutions");
  for (std::size_t r : cfg.resolutions) {
    if (r == 0 || r > cfg.grid_side)
      throw_invalid("toy backend: resolution must be in [1, grid side]");
  }
  layout_ = make_layout(scene_, cfg.embed_dim);

  const std::size_t w = cfg.grid_side;
  const std::size_t d = cfg.embed_dim;
  structure_ = Matrix(w * w, d);
  for (std::size_t y = 0; y < w; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const auto [cy, cx] = pixel_coord(y, x, w);
      const auto pi = blob_weights(layout_, cy, cx, scene_.blob_width);
      auto f = structure_.row(y * w + x);
      for (std::size_t g = 0; g < scene_.blobs; ++g) {
        const auto u = layout_.directions.row(g);
        for (std::size_t i = 0; i < d; ++i) f[i] += scene_.amplitude * pi[g] * u[i];
      }
      const auto vy = layout_.nuisance.row(0);
      const auto vx = layout_.nuisance.row(1);
      for (std::size_t i = 0; i < d; ++i)
        f[i] += scene_.noise * scene_.ramp * ((cy - 0.5) * vy[i] + (cx - 0.5) * vx[i]);
    }
  }
  fixed_noise_ = Matrix(w * w, d);
  Rng rng(mix_seed(scene_.seed, 2));
  for (double& v : fixed_noise_.data) v = scene_.noise * rng.normal();

  for (std::size_t g = 0; g < scene_.blobs; ++g) {
    std::string name = g == 0 ? "background" : "object" + std::to_string(g);
    tokens_.push_back(name);
    classes_.push_back({name, g, g + 1});
  }
}

Matrix ToyBackend::features(int timestep) const {
  Matrix f = structure_;
  for (std::size_t i = 0; i < f.data.size(); ++i) f.data[i] += fixed_noise_.data[i];
  const double t_scale = static_cast<double>(timestep) / 1000.0;
  if (t_scale != 0.0) {
    Rng rng(mix_seed(scene_.seed, 1000 + static_cast<std::uint64_t>(timestep)));
    for (double& v : f.data) v += t_scale * rng.normal();
  }
  return f;
}

Matrix ToyBackend::level_features(int timestep, std::size_t side,
                                  const std::optional<CropWindow>& crop) const {
  const std::size_t w = grid_side();
  Matrix f = features(timestep);
  if (!crop && side == w) return f;
  const SampleRegion region = crop ? window_region(*crop, w, w) : full_region(w, w);
  return resample_columns(f, w, region, side);
}

std::vector<std::int32_t> ToyBackend::truth_labels(std::size_t side) const {
  std::vector<std::int32_t> labels(side * side);
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) {
      const auto [cy, cx] = pixel_coord(y, x, side);
      std::size_t best = 0;
      double best_d = 1e300;
      for (std::size_t g = 0; g < layout_.centers.size(); ++g) {
        const double dy = cy - layout_.centers[g].first;
        const double dx = cx - layout_.centers[g].second;
        const double dist = dy * dy + dx * dx;
        if (dist < best_d) {
          best_d = dist;
          best = g;
        }
      }
      labels[y * side + x] = static_cast<std::int32_t>(best);
    }
  }
  return labels;
}

PromptParams ToyBackend::init_params() const {
  const std::size_t d = config().embed_dim;
  PromptParams p(tokens_.size(), d);
  Rng rng(mix_seed(scene_.seed, 3));
  for (std::size_t k = 0; k < tokens_.size(); ++k) {
    std::vector<double> offset(d);
    double on = 0.0;
    for (double& v : offset) {
      v = rng.normal();
      on += v * v;
    }
    on = std::sqrt(on);
    const double theta = 2.0 * std::numbers::pi * rng.uniform();
    auto e = p.row(k);
    const auto u = layout_.directions.row(k);
    const auto vy = layout_.nuisance.row(0);
    const auto vx = layout_.nuisance.row(1);
    double norm = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      e[i] = u[i] + scene_.prompt_offset * offset[i] / on +
             scene_.spatial_bias * (std::cos(theta) * vy[i] + std::sin(theta) * vx[i]);
      norm += e[i] * e[i];
    }
    norm = std::sqrt(norm);
    for (double& v : e) v /= norm;
  }
  return p;
}

void ToyBackend::check_params(const PromptParams& params) const {
  if (params.rows != tokens_.size() || params.cols != config().embed_dim ||
      params.values.size() != params.rows * params.cols) {
    throw_invalid("toy backend: params shape " + std::to_string(params.rows) + "x" +
                  std::to_string(params.cols) + " does not match " +
                  std::to_string(tokens_.size()) + "x" +
                  std::to_string(config().embed_dim));
  }
}

namespace {

Matrix params_matrix(const PromptParams& p) {
  Matrix m(p.rows, p.cols);
  m.data = p.values;
  return m;
}

std::vector<std::size_t> sorted_resolutions(std::vector<std::size_t> r) {
  std::sort(r.begin(), r.end());
  r.erase(std::unique(r.begin(), r.end()), r.end());
  return r;
}

}  // namespace

AttentionBundle ToyBackend::forward(const PromptParams& params, int timestep,
                                    const std::optional<CropWindow>& crop) const {
  check_params(params);
  const Matrix p = params_matrix(params);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(config().embed_dim));
  AttentionBundle out;
  out.image_id = "toy-" + std::to_string(scene_.seed);
  out.image_height = scene_.side;
  out.image_width = scene_.side;
  out.tokens = tokens_;
  out.classes = classes_;
  out.background_class = background_class();
  for (std::size_t side : sorted_resolutions(config().resolutions)) {
    const Matrix f = level_features(timestep, side, crop);
    AttentionLevel level;
    level.side = side;
    Matrix self(f.rows, f.rows);
    gemm(Transpose::kNo, Transpose::kYes, inv_sqrt_d, f, f, 0.0, self);
    softmax_rows(self);
    Matrix cross(f.rows, p.rows);
    gemm(Transpose::kNo, Transpose::kYes, inv_sqrt_d, f, p, 0.0, cross);
    softmax_rows(cross);
    const std::string name = "toy.r" + std::to_string(side);
    level.self_layers.push_back({std::move(self), timestep, name + ".self"});
    level.cross_layers.push_back({std::move(cross), timestep, name + ".cross"});
    out.levels.push_back(std::move(level));
  }
  return out;
}

PromptParams ToyBackend::vjp(const PromptParams& params, int timestep,
                             const std::optional<CropWindow>& crop,
                             const CrossGradients& upstream) const {
  check_params(params);
  const auto resolutions = sorted_resolutions(config().resolutions);
  if (upstream.size() != resolutions.size())
    throw_invalid("toy backend vjp: upstream level count mismatch");
  const Matrix p = params_matrix(params);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(config().embed_dim));
  Matrix grad(p.rows, p.cols);
  for (std::size_t li = 0; li < resolutions.size(); ++li) {
    const std::size_t side = resolutions[li];
    if (upstream[li].size() != 1)
      throw_invalid("toy backend vjp: expected one cross layer per level");
    const Matrix& g = upstream[li][0];
    if (g.rows != side * side || g.cols != p.rows)
      throw_invalid("toy backend vjp: upstream gradient shape mismatch");
    const Matrix f = level_features(timestep, side, crop);
    Matrix cross(f.rows, p.rows);
    gemm(Transpose::kNo, Transpose::kYes, inv_sqrt_d, f, p, 0.0, cross);
    softmax_rows(cross);
    const Matrix dz = softmax_rows_vjp(cross, g);
    gemm(Transpose::kYes, Transpose::kNo, inv_sqrt_d, dz, f, 1.0, grad);
  }
  PromptParams out(p.rows, p.cols);
  out.values = std::move(grad.data);
  return out;
}

// ---------------------------------------------------------------------------
// Static backend

StaticBackend::StaticBackend(BackendConfig config) : Backend(std::move(config)) {}

StaticBackend::StaticBackend(AttentionBundle bundle, BackendConfig config)
    : Backend(std::move(config)) {
  load(std::move(bundle));
}

void StaticBackend::load(AttentionBundle bundle) {
  validate_bundle(bundle);
  std::map<int, AttentionBundle> split;
  for (auto& level : bundle.levels) {
    for (auto& layer : level.self_layers) {
      auto& target = split[layer.timestep];
      target.level_or_add(level.side).self_layers.push_back(std::move(layer));
    }
    for (auto& layer : level.cross_layers) {
      auto& target = split[layer.timestep];
      target.level_or_add(level.side).cross_layers.push_back(std::move(layer));
    }
  }
  if (split.empty()) throw Error(ErrorCode::kValidation, "bundle has no layers");
  for (auto& [t, b] : split) {
    b.image_id = bundle.image_id;
    b.image_height = bundle.image_height;
    b.image_width = bundle.image_width;
    b.tokens = bundle.tokens;
    b.classes = bundle.classes;
    b.background_class = bundle.background_class;
  }
  by_timestep_ = std::move(split);
}

const AttentionBundle& StaticBackend::at_timestep(int timestep) const {
  if (by_timestep_.empty())
    throw Error(ErrorCode::kState, "static backend: no attention bundle loaded");
  auto best = by_timestep_.begin();
  for (auto it = by_timestep_.begin(); it != by_timestep_.end(); ++it) {
    if (std::abs(it->first - timestep) < std::abs(best->first - timestep)) best = it;
  }
  return best->second;
}

const std::vector<std::string>& StaticBackend::tokens() const {
  return at_timestep(0).tokens;
}
const std::vector<ClassSpan>& StaticBackend::classes() const {
  return at_timestep(0).classes;
}
std::optional<std::size_t> StaticBackend::background_class() const {
  return at_timestep(0).background_class;
}
std::pair<std::size_t, std::size_t> StaticBackend::image_dims() const {
  const auto& b = at_timestep(0);
  if (b.image_height == 0 || b.image_width == 0) return {grid_side(), grid_side()};
  return {b.image_height, b.image_width};
}

PromptParams StaticBackend::init_params() const {
  const std::size_t w = grid_side();
  return PromptParams(classes().size(), w * w, 0.0);
}

void StaticBackend::check_params(const PromptParams& params) const {
  const std::size_t w = grid_side();
  if (params.rows != classes().size() || params.cols != w * w ||
      params.values.size() != params.rows * params.cols) {
    throw_invalid("static backend: params shape " + std::to_string(params.rows) +
                  "x" + std::to_string(params.cols) + " does not match " +
                  std::to_string(classes().size()) + "x" + std::to_string(w * w));
  }
}

namespace {

struct OffsetContext {
  std::vector<int> token_class;     // -1 for tokens outside every span
  std::vector<ScoreMap> offsets;    // per class, on the level grid
};

std::vector<int> token_classes(const AttentionBundle& b) {
  std::vector<int> tc(b.token_count(), -1);
  for (std::size_t c = 0; c < b.classes.size(); ++c)
    for (std::size_t k = b.classes[c].begin; k < b.classes[c].end; ++k)
      tc[k] = static_cast<int>(c);
  return tc;
}

SampleRegion offset_region(const std::optional<CropWindow>& crop, std::size_t w) {
  return crop ? window_region(*crop, w, w) : full_region(w, w);
}

ScoreMap level_offsets(const PromptParams& params, std::size_t c, std::size_t w,
                       std::size_t side, const std::optional<CropWindow>& crop) {
  ScoreMap full(w, w, std::vector<double>(params.row(c).begin(), params.row(c).end()));
  if (!crop && side == w) return full;
  return resample_region(full, offset_region(crop, w), side, side);
}

// y_k = x_k e^{o_k} * (s / sum_j x_j e^{o_j}) with s = sum_j x_j: a softmax over
// (log x + o) that keeps each row's original mass. Zero offsets return x
// unchanged bit for bit.
Matrix reweight(const Matrix& x, const std::vector<int>& token_class,
                const std::vector<ScoreMap>& offsets) {
  Matrix y(x.rows, x.cols);
  std::vector<double> u(x.cols);
  for (std::size_t p = 0; p < x.rows; ++p) {
    double s = 0.0;
    double den = 0.0;
    for (std::size_t k = 0; k < x.cols; ++k) {
      const double xv = x(p, k);
      s += xv;
      const int c = token_class[k];
      u[k] = c < 0 ? xv : xv * std::exp(offsets[c].values[p]);
      den += u[k];
    }
    const double ratio = den > 0.0 ? s / den : 0.0;
    for (std::size_t k = 0; k < x.cols; ++k) y(p, k) = u[k] * ratio;
  }
  return y;
}

}  // namespace

AttentionBundle StaticBackend::forward(const PromptParams& params, int timestep,
                                       const std::optional<CropWindow>& crop) const {
  const AttentionBundle& base = at_timestep(timestep);
  check_params(params);
  const std::size_t w = grid_side();
  const auto token_class = token_classes(base);

  AttentionBundle out;
  out.image_id = base.image_id;
  out.image_height = base.image_height;
  out.image_width = base.image_width;
  out.tokens = base.tokens;
  out.classes = base.classes;
  out.background_class = base.background_class;
  for (const auto& level : base.levels) {
    AttentionLevel o;
    o.side = level.side;
    const SampleRegion region =
        crop ? window_region(*crop, w, level.side) : full_region(level.side, level.side);
    for (const auto& layer : level.self_layers) {
      AttentionLayer copy{{}, layer.timestep, layer.name};
      copy.values = crop ? resample_affinity(layer.values, level.side, region, level.side)
                         : layer.values;
      o.self_layers.push_back(std::move(copy));
    }
    std::vector<ScoreMap> offsets;
    for (std::size_t c = 0; c < base.classes.size(); ++c)
      offsets.push_back(level_offsets(params, c, w, level.side, crop));
    for (const auto& layer : level.cross_layers) {
      const Matrix x = crop ? resample_columns(layer.values, level.side, region, level.side)
                            : layer.values;
      o.cross_layers.push_back({reweight(x, token_class, offsets), layer.timestep, layer.name});
    }
    out.levels.push_back(std::move(o));
  }
  return out;
}

PromptParams StaticBackend::vjp(const PromptParams& params, int timestep,
                                const std::optional<CropWindow>& crop,
                                const CrossGradients& upstream) const {
  const AttentionBundle& base = at_timestep(timestep);
  check_params(params);
  const std::size_t w = grid_side();
  const std::size_t c_count = base.classes.size();
  const auto token_class = token_classes(base);
  if (upstream.size() != base.levels.size())
    throw_invalid("static backend vjp: upstream level count mismatch");

  PromptParams grad(c_count, w * w);
  for (std::size_t li = 0; li < base.levels.size(); ++li) {
    const auto& level = base.levels[li];
    const std::size_t n = level.side * level.side;
    if (upstream[li].size() != level.cross_layers.size())
      throw_invalid("static backend vjp: upstream layer count mismatch");
    const SampleRegion region =
        crop ? window_region(*crop, w, level.side) : full_region(level.side, level.side);
    std::vector<ScoreMap> offsets;
    for (std::size_t c = 0; c < c_count; ++c)
      offsets.push_back(level_offsets(params, c, w, level.side, crop));
    std::vector<ScoreMap> grad_level(c_count, ScoreMap(level.side, level.side));

    for (std::size_t l = 0; l < level.cross_layers.size(); ++l) {
      const Matrix& g = upstream[li][l];
      const Matrix x = crop ? resample_columns(level.cross_layers[l].values,
                                               level.side, region, level.side)
                            : level.cross_layers[l].values;
      if (g.rows != x.rows || g.cols != x.cols)
        throw_invalid("static backend vjp: upstream gradient shape mismatch");
      std::vector<double> u(x.cols);
      for (std::size_t p = 0; p < n; ++p) {
        double s = 0.0, den = 0.0;
        for (std::size_t k = 0; k < x.cols; ++k) {
          const double xv = x(p, k);
          s += xv;
          const int c = token_class[k];
          u[k] = c < 0 ? xv : xv * std::exp(offsets[c].values[p]);
          den += u[k];
        }
        if (!(den > 0.0)) continue;
        const double ratio = s / den;
        double gy = 0.0;
        for (std::size_t k = 0; k < x.cols; ++k) gy += g(p, k) * u[k] * ratio;
        for (std::size_t k = 0; k < x.cols; ++k) {
          const int c = token_class[k];
          if (c < 0) continue;
          const double du = ratio * g(p, k) - gy / den;
          grad_level[c].values[p] += du * u[k];
        }
      }
    }
    for (std::size_t c = 0; c < c_count; ++c) {
      ScoreMap back = (!crop && level.side == w)
                          ? grad_level[c]
                          : resample_region_vjp(grad_level[c], w, w, offset_region(crop, w));
      auto row = grad.row(c);
      for (std::size_t i = 0; i < w * w; ++i) row[i] += back.values[i];
    }
  }
  return grad;
}

}  // namespace invseg
