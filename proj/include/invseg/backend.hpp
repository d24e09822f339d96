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
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "invseg/linalg.hpp"
#include "invseg/maps.hpp"

namespace invseg {

enum class BackendKind { kToy, kStatic };

// Learnable parameters as a rows x cols block: K tokens x embedding dim for
// the toy backend, C classes x (grid_side^2) logit offsets for the static one.
struct PromptParams {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  PromptParams() = default;
  PromptParams(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), values(r * c, fill) {}

  std::span<double> row(std::size_t r) { return {values.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const {
    return {values.data() + r * cols, cols};
  }
};

struct BackendConfig {
  BackendKind kind = BackendKind::kToy;
  std::size_t grid_side = 64;  // working grid every map is aggregated onto
  std::size_t embed_dim = 16;
  int t_min = 5;
  int t_max = 300;
  int infer_timestep = 50;
  std::uint64_t seed = 0;
  // Attention resolutions the toy backend emits.
  std::vector<std::size_t> resolutions{16};
};

void validate_backend_config(const BackendConfig& config);

// Upstream gradients for every cross-attention layer, indexed [level][layer]
// in the order forward() returns them. Self-attention never depends on the
// parameters in either backend, so it carries no gradient.
using CrossGradients = std::vector<std::vector<Matrix>>;

class Backend {
 public:
  explicit Backend(BackendConfig config);
  virtual ~Backend() = default;

  Backend(const Backend&) = delete;
  Backend& operator=(const Backend&) = delete;
  Backend(Backend&&) = default;
  Backend& operator=(Backend&&) = default;

  virtual BackendKind kind() const = 0;
  virtual PromptParams init_params() const = 0;
  virtual AttentionBundle forward(const PromptParams& params, int timestep,
                                  const std::optional<CropWindow>& crop) const = 0;
  virtual PromptParams vjp(const PromptParams& params, int timestep,
                           const std::optional<CropWindow>& crop,
                           const CrossGradients& upstream) const = 0;

  virtual const std::vector<std::string>& tokens() const = 0;
  virtual const std::vector<ClassSpan>& classes() const = 0;
  virtual std::optional<std::size_t> background_class() const = 0;
  // Original image height/width that masks are produced at.
  virtual std::pair<std::size_t, std::size_t> image_dims() const = 0;

  const BackendConfig& config() const { return config_; }
  std::size_t grid_side() const { return config_.grid_side; }

 private:
  BackendConfig config_;
};

// Geometry of a synthetic scene: `blobs` Gaussian patterns placed in the unit
// square. Each pixel's structure feature is the soft assignment of the pixel
// to the blobs mixed over orthonormal blob directions.
struct ToyScene {
  std::size_t blobs = 2;
  std::size_t side = 32;      // ground-truth / output image side
  // Feature corruption: i.i.d. per-entry noise of this scale plus a smooth
  // linear ramp of scale noise * ramp along two nuisance directions.
  double noise = 0.3;
  std::uint64_t seed = 0;
  double blob_width = 0.08;    // Gaussian width as a fraction of the image
  double amplitude = 6.0;      // scale of the structure features
  double ramp = 25.0;
  double prompt_offset = 0.5;  // random share of initial embeddings
  double spatial_bias = 1.5;   // nuisance-direction share of initial embeddings
};

void validate_toy_scene(const ToyScene& scene);

struct BlobLayout {
  std::vector<std::pair<double, double>> centers;  // (y, x) in [0, 1]
  Matrix directions;                               // blobs x embed_dim, orthonormal
  Matrix nuisance;                                 // 2 x embed_dim (y, x), orthogonal to directions
};

class ToyBackend final : public Backend {
 public:
  ToyBackend(ToyScene scene, BackendConfig config);

  BackendKind kind() const override { return BackendKind::kToy; }
  PromptParams init_params() const override;
  AttentionBundle forward(const PromptParams& params, int timestep,
                          const std::optional<CropWindow>& crop) const override;
  PromptParams vjp(const PromptParams& params, int timestep,
                   const std::optional<CropWindow>& crop,
                   const CrossGradients& upstream) const override;

  const std::vector<std::string>& tokens() const override { return tokens_; }
  const std::vector<ClassSpan>& classes() const override { return classes_; }
  std::optional<std::size_t> background_class() const override { return 0; }
  std::pair<std::size_t, std::size_t> image_dims() const override {
    return {scene_.side, scene_.side};
  }

  const ToyScene& scene() const { return scene_; }
  const BlobLayout& layout() const { return layout_; }

  // Feature grid (grid_side^2 x embed_dim) at a timestep.
  Matrix features(int timestep) const;
  // Features resampled to a resolution, restricted to the crop when given.
  Matrix level_features(int timestep, std::size_t side,
                        const std::optional<CropWindow>& crop) const;
  // Nearest-blob labels on an arbitrary side x side raster.
  std::vector<std::int32_t> truth_labels(std::size_t side) const;

 private:
  void check_params(const PromptParams& params) const;

  ToyScene scene_;
  BlobLayout layout_;
  Matrix structure_;  // blob features plus the nuisance ramp, working grid
  Matrix fixed_noise_;
  std::vector<std::string> tokens_;
  std::vector<ClassSpan> classes_;
};

class StaticBackend final : public Backend {
 public:
  explicit StaticBackend(BackendConfig config);
  StaticBackend(AttentionBundle bundle, BackendConfig config);

  void load(AttentionBundle bundle);
  bool loaded() const { return !by_timestep_.empty(); }

  BackendKind kind() const override { return BackendKind::kStatic; }
  PromptParams init_params() const override;
  AttentionBundle forward(const PromptParams& params, int timestep,
                          const std::optional<CropWindow>& crop) const override;
  PromptParams vjp(const PromptParams& params, int timestep,
                   const std::optional<CropWindow>& crop,
                   const CrossGradients& upstream) const override;

  const std::vector<std::string>& tokens() const override;
  const std::vector<ClassSpan>& classes() const override;
  std::optional<std::size_t> background_class() const override;
  std::pair<std::size_t, std::size_t> image_dims() const override;

 private:
  const AttentionBundle& at_timestep(int timestep) const;
  void check_params(const PromptParams& params) const;

  std::map<int, AttentionBundle> by_timestep_;
};

}  // namespace invseg
