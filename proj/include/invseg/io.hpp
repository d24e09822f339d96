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
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "invseg/backend.hpp"
#include "invseg/maps.hpp"
#include "invseg/segment.hpp"

namespace invseg {

inline constexpr std::uint32_t kTensorVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 0;
inline constexpr int kManifestVersion = 1;

struct Tensor {
  std::vector<std::uint64_t> dims;  // empty for a scalar
  std::vector<float> values;
};

std::vector<std::uint8_t> encode_tensor(const Tensor& tensor);
// Throws kFormat naming the byte offset and expected vs actual byte counts.
// `origin` names the source in messages.
Tensor decode_tensor(std::span<const std::uint8_t> bytes, const std::string& origin);

void write_tensor(const std::filesystem::path& path, const Tensor& tensor);
Tensor read_tensor(const std::filesystem::path& path);

Tensor matrix_tensor(const Matrix& m);
Tensor map_tensor(const ScoreMap& map);

// Reads a JSON manifest plus the tensors it references (paths relative to the
// manifest's directory). Malformed JSON and tensor files are kFormat, missing
// files kIo, shape and stochasticity violations kValidation.
AttentionBundle load_bundle(const std::filesystem::path& manifest);
// Writes every layer as a tensor next to the manifest.
void save_bundle(const AttentionBundle& bundle, const std::filesystem::path& manifest);

// Synthetic scene description, parsed from "key=value" pairs separated by
// commas, e.g. "blobs=2,side=32,noise=0.3,seed=7".
struct FixtureSpec {
  ToyScene scene;
  std::size_t grid_side = 32;
  std::size_t embed_dim = 16;
  std::vector<std::size_t> resolutions{16};
  std::vector<int> timesteps{50};
};

FixtureSpec parse_fixture_spec(const std::string& text);
std::string format_fixture_spec(const FixtureSpec& spec);
ToyBackend make_fixture_backend(const FixtureSpec& spec);

struct Fixture {
  AttentionBundle bundle;
  LabelGrid truth;
};

// Toy forward at the initial prompt for every timestep listed; ground
// truth is the nearest blob at the scene's image side.
Fixture synth_fixture(const FixtureSpec& spec);

// 256-entry deterministic palette (the usual VOC bit-interleaved colors).
std::vector<std::uint8_t> label_palette();

void write_label_png(const std::filesystem::path& path, const LabelGrid& grid);
// Accepts 8-bit palette or grayscale PNGs; pixel values are the labels.
LabelGrid read_label_png(const std::filesystem::path& path);
// Ground truth as an indexed PNG or a [H, W] tensor of integral values.
LabelGrid read_label_grid(const std::filesystem::path& path);

}  // namespace invseg
