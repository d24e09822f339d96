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

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "invseg/error.hpp"
#include "invseg/io.hpp"
#include "invseg/random.hpp"
#include "support.hpp"

// Corrupted-bundle corpus. Every mutation is invalid by construction, so a
// correct loader must reject each case with a structured error.
namespace invseg::testing {

inline constexpr int kMutationKinds = 20;

inline const char* mutation_name(int kind) {
  static const char* names[kMutationKinds] = {
      "tensor-truncate",   "tensor-append",     "tensor-magic",     "tensor-version",
      "tensor-dtype",      "tensor-ndim",       "tensor-dim",       "tensor-nonfinite",
      "tensor-negative",   "self-row-sum",      "json-truncate",    "json-drop-key",
      "json-wrong-type",   "json-version",      "json-bad-span",    "json-missing-file",
      "json-resolution",   "json-kind",         "json-garbage",     "json-drop-token"};
  return names[kind];
}

struct FuzzCase {
  int kind = 0;
  std::filesystem::path manifest;
};

struct FuzzOutcome {
  bool rejected = false;     // structured invseg::Error with a message
  std::string detail;        // error text, or what went wrong
};

// Writes the reference bundle used as the mutation seed.
inline std::filesystem::path write_seed_bundle(const std::filesystem::path& dir) {
  FixtureSpec spec = parse_fixture_spec("blobs=2,side=8,grid=8,dim=8,res=4+8,t=50+300");
  const Fixture f = synth_fixture(spec);
  const auto manifest = dir / "bundle.json";
  save_bundle(f.bundle, manifest);
  return manifest;
}

namespace detail {

inline std::size_t header_size(std::size_t ndim) { return 4 + 4 + 1 + 1 + 8 * ndim; }

inline void put_f32(std::vector<std::uint8_t>& bytes, std::size_t offset, float v) {
  std::memcpy(bytes.data() + offset, &v, sizeof v);
}

inline float get_f32(const std::vector<std::uint8_t>& bytes, std::size_t offset) {
  float v;
  std::memcpy(&v, bytes.data() + offset, sizeof v);
  return v;
}

}  // namespace detail

// Copies the seed bundle into `dir` and applies mutation `kind` with `rng`.
inline FuzzCase make_fuzz_case(const std::filesystem::path& seed_manifest,
                               const std::filesystem::path& dir, int kind, Rng& rng) {
  namespace fs = std::filesystem;
  using nlohmann::json;
  fs::create_directories(dir);
  const fs::path src_dir = seed_manifest.parent_path();
  for (const auto& entry : fs::directory_iterator(src_dir))
    fs::copy_file(entry.path(), dir / entry.path().filename(),
                  fs::copy_options::overwrite_existing);
  FuzzCase fc{kind, dir / seed_manifest.filename()};

  json j = json::parse(read_text(fc.manifest));
  json& layers = j["layers"];
  const std::size_t li = static_cast<std::size_t>(rng.uniform_int(0, layers.size() - 1));
  json& layer = layers[li];
  const fs::path tensor_path = dir / layer["file"].get<std::string>();
  auto bytes = read_bytes(tensor_path);
  const std::size_t ndim = bytes[9];
  const std::size_t header = detail::header_size(ndim);
  const std::size_t payload_n = (bytes.size() - header) / 4;
  auto pick_payload = [&] {
    return header + 4 * static_cast<std::size_t>(rng.uniform_int(0, payload_n - 1));
  };

  switch (kind) {
    case 0:
      bytes.resize(static_cast<std::size_t>(rng.uniform_int(0, bytes.size() - 1)));
      break;
    case 1: {
      const auto extra = rng.uniform_int(1, 16);
      for (std::int64_t i = 0; i < extra; ++i)
        bytes.push_back(static_cast<std::uint8_t>(rng.next()));
      break;
    }
    case 2: {
      const auto at = static_cast<std::size_t>(rng.uniform_int(0, 3));
      bytes[at] ^= static_cast<std::uint8_t>(rng.uniform_int(1, 255));
      break;
    }
    case 3: {
      std::uint32_t v = 1;
      while (v == 1) v = static_cast<std::uint32_t>(rng.next());
      std::memcpy(bytes.data() + 4, &v, 4);
      break;
    }
    case 4:
      bytes[8] = static_cast<std::uint8_t>(rng.uniform_int(1, 255));
      break;
    case 5: {
      std::uint8_t v = 2;
      while (v == 2) v = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
      bytes[9] = v;
      break;
    }
    case 6: {
      const std::size_t d = static_cast<std::size_t>(rng.uniform_int(0, ndim - 1));
      std::uint64_t v;
      std::memcpy(&v, bytes.data() + 10 + 8 * d, 8);
      v += static_cast<std::uint64_t>(rng.uniform_int(1, 1000));
      std::memcpy(bytes.data() + 10 + 8 * d, &v, 8);
      break;
    }
    case 7: {
      const float bad[3] = {std::numeric_limits<float>::quiet_NaN(),
                            std::numeric_limits<float>::infinity(),
                            -std::numeric_limits<float>::infinity()};
      detail::put_f32(bytes, pick_payload(), bad[rng.uniform_int(0, 2)]);
      break;
    }
    case 8: {
      const std::size_t at = pick_payload();
      detail::put_f32(bytes, at,
                      -(detail::get_f32(bytes, at) + static_cast<float>(0.01 + rng.uniform())));
      break;
    }
    case 9: {
      // Retarget onto a self layer and push one row's sum well past tolerance.
      for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layers[i]["kind"] == "self") {
          const fs::path p = dir / layers[i]["file"].get<std::string>();
          auto b = read_bytes(p);
          const std::size_t h = detail::header_size(b[9]);
          const std::size_t n = (b.size() - h) / 4;
          const std::size_t at = h + 4 * static_cast<std::size_t>(rng.uniform_int(0, n - 1));
          detail::put_f32(b, at, detail::get_f32(b, at) + static_cast<float>(0.01 + rng.uniform()));
          write_bytes(p, b);
          break;
        }
      }
      return fc;
    }
    default:
      break;
  }
  if (kind <= 8) {
    write_bytes(tensor_path, bytes);
    return fc;
  }

  static const char* required[] = {"format_version", "image_id",  "image_height",
                                   "image_width",    "tokens",    "classes",
                                   "resolutions",    "timesteps", "layers"};
  switch (kind) {
    case 10: {
      const std::string text = j.dump();
      write_text(fc.manifest,
                 text.substr(0, static_cast<std::size_t>(rng.uniform_int(0, text.size() - 1))));
      return fc;
    }
    case 11:
      j.erase(required[rng.uniform_int(0, 8)]);
      break;
    case 12: {
      const std::string key = required[rng.uniform_int(0, 8)];
      if (key == "image_id")
        j[key] = rng.uniform_int(0, 100);
      else if (j[key].is_number())
        j[key] = rng.uniform() < 0.5 ? json("seven") : json(-rng.uniform_int(1, 99));
      else
        j[key] = rng.uniform() < 0.5 ? json(3.5) : json(nullptr);
      break;
    }
    case 13:
      j["format_version"] = rng.uniform_int(2, 1000);
      break;
    case 14: {
      json& cls = j["classes"][rng.uniform_int(0, j["classes"].size() - 1)];
      const auto tokens = j["tokens"].size();
      if (rng.uniform() < 0.5) {
        cls["token_end"] = tokens + static_cast<std::size_t>(rng.uniform_int(1, 5));
      } else {
        cls["token_begin"] = cls["token_end"].get<std::size_t>() + 1;
      }
      break;
    }
    case 15:
      layer["file"] = "absent_" + std::to_string(rng.next() % 100000) + ".atnb";
      break;
    case 16: {
      std::size_t r = layer["resolution"].get<std::size_t>();
      while (r == layer["resolution"].get<std::size_t>())
        r = static_cast<std::size_t>(rng.uniform_int(1, 64));
      layer["resolution"] = r;
      break;
    }
    case 17:
      layer["kind"] = rng.uniform() < 0.5 ? "selfie" : "";
      break;
    case 18: {
      std::vector<std::uint8_t> garbage(static_cast<std::size_t>(rng.uniform_int(1, 64)));
      for (auto& g : garbage) g = static_cast<std::uint8_t>(rng.next());
      write_bytes(fc.manifest, garbage);
      return fc;
    }
    case 19:
      j["tokens"].erase(j["tokens"].size() - 1);
      break;
    default:
      break;
  }
  write_text(fc.manifest, j.dump(2));
  return fc;
}

inline FuzzOutcome load_fuzz_case(const FuzzCase& fc) {
  FuzzOutcome out;
  try {
    (void)load_bundle(fc.manifest);
    out.detail = "accepted";
  } catch (const Error& e) {
    const bool structured = e.code() == ErrorCode::kFormat ||
                            e.code() == ErrorCode::kValidation || e.code() == ErrorCode::kIo;
    out.rejected = structured && std::strlen(e.what()) > 0;
    out.detail = std::string(error_code_name(e.code())) + ": " + e.what();
  } catch (const std::exception& e) {
    out.detail = std::string("unstructured exception: ") + e.what();
  }
  return out;
}

}  // namespace invseg::testing
