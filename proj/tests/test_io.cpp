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

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <limits>

#include "fuzz_corpus.hpp"
#include "invseg/error.hpp"
#include "invseg/io.hpp"
#include "support.hpp"

using namespace invseg;
using namespace invseg::testing;

namespace {

ErrorCode decode_error(const std::vector<std::uint8_t>& bytes, std::string* message = nullptr) {
  try {
    (void)decode_tensor(bytes, "mem");
  } catch (const Error& e) {
    if (message) *message = e.what();
    return e.code();
  }
  FAIL("decoded");
  return ErrorCode::kState;
}

}  // namespace

TEST_CASE("tensor encoding layout") {
  Tensor t{{2, 3}, {1, 2, 3, 4, 5, 6}};
  const auto bytes = encode_tensor(t);
  CHECK(bytes.size() == 4 + 4 + 1 + 1 + 16 + 24);
  CHECK(std::memcmp(bytes.data(), "ATNB", 4) == 0);
  CHECK(bytes[4] == 1);
  CHECK(bytes[8] == kDtypeF32);
  CHECK(bytes[9] == 2);
  CHECK(bytes[10] == 2);
  CHECK(bytes[18] == 3);
}

TEST_CASE("tensor round trips are bit exact, including special values") {
  Rng rng(51);
  for (int trial = 0; trial < 30; ++trial) {
    Tensor t;
    const auto ndim = static_cast<std::size_t>(rng.uniform_int(0, 4));
    std::size_t n = 1;
    for (std::size_t d = 0; d < ndim; ++d) {
      t.dims.push_back(static_cast<std::uint64_t>(rng.uniform_int(0, 5)));
      n *= t.dims.back();
    }
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint32_t bits = static_cast<std::uint32_t>(rng.next());
      float f;
      std::memcpy(&f, &bits, 4);
      t.values.push_back(f);
    }
    const Tensor back = decode_tensor(encode_tensor(t), "mem");
    CHECK(back.dims == t.dims);
    REQUIRE(back.values.size() == t.values.size());
    CHECK(std::memcmp(back.values.data(), t.values.data(), 4 * n) == 0);
  }
}

TEST_CASE("tensor decoding errors carry offsets and byte counts") {
  const auto good = encode_tensor(Tensor{{2, 2}, {1, 2, 3, 4}});
  std::string msg;
  auto truncated = good;
  truncated.resize(good.size() - 3);
  CHECK(decode_error(truncated, &msg) == ErrorCode::kFormat);
  CHECK(msg.find("mem") != std::string::npos);
  CHECK(msg.find("offset") != std::string::npos);

  auto magic = good;
  magic[0] = 'X';
  CHECK(decode_error(magic) == ErrorCode::kFormat);
  auto version = good;
  version[4] = 9;
  CHECK(decode_error(version) == ErrorCode::kFormat);
  auto dtype = good;
  dtype[8] = 3;
  CHECK(decode_error(dtype) == ErrorCode::kFormat);
  auto ndim = good;
  ndim[9] = 200;
  CHECK(decode_error(ndim) == ErrorCode::kFormat);
  auto trailing = good;
  trailing.push_back(0);
  CHECK(decode_error(trailing) == ErrorCode::kFormat);
  CHECK(decode_error({}) == ErrorCode::kFormat);
}

TEST_CASE("tensor dims whose product overflows are rejected") {
  auto bytes = encode_tensor(Tensor{{1, 1}, {0.5f}});
  const std::uint64_t huge = std::numeric_limits<std::uint64_t>::max() / 2;
  std::memcpy(bytes.data() + 10, &huge, 8);
  std::memcpy(bytes.data() + 18, &huge, 8);
  CHECK(decode_error(bytes) == ErrorCode::kFormat);
}

TEST_CASE("fixture specs parse, format and round trip") {
  const FixtureSpec s = parse_fixture_spec("blobs=3,side=16,noise=0.25,seed=7,res=8+16,t=50+300");
  CHECK(s.scene.blobs == 3);
  CHECK(s.scene.side == 16);
  CHECK(s.scene.noise == 0.25);
  CHECK(s.scene.seed == 7);
  CHECK(s.grid_side == 16);
  CHECK(s.resolutions == std::vector<std::size_t>{8, 16});
  CHECK(s.timesteps == std::vector<int>{50, 300});
  const FixtureSpec again = parse_fixture_spec(format_fixture_spec(s));
  CHECK(format_fixture_spec(again) == format_fixture_spec(s));
  CHECK(parse_fixture_spec("side=40").grid_side == 64);
}

TEST_CASE("malformed fixture specs are rejected") {
  for (const char* bad : {"blobs", "blobs=x", "colour=3", "side=-1", "res=", "noise=1,noise"}) {
    CHECK_THROWS_AS(parse_fixture_spec(bad), Error);
  }
}

TEST_CASE("bundles round trip through manifest and tensors") {
  TempDir dir("bundle");
  const Fixture f = synth_fixture(parse_fixture_spec("blobs=3,side=8,grid=8,dim=8,res=4+8,t=50+300"));
  save_bundle(f.bundle, dir / "a" / "m.json");
  const AttentionBundle back = load_bundle(dir / "a" / "m.json");
  CHECK(back.tokens == f.bundle.tokens);
  CHECK(back.image_height == 8);
  CHECK(back.background_class == f.bundle.background_class);
  REQUIRE(back.levels.size() == f.bundle.levels.size());
  for (std::size_t l = 0; l < back.levels.size(); ++l) {
    REQUIRE(back.levels[l].self_layers.size() == f.bundle.levels[l].self_layers.size());
    for (std::size_t k = 0; k < back.levels[l].self_layers.size(); ++k) {
      const auto& a = f.bundle.levels[l].self_layers[k].values.data;
      const auto& b = back.levels[l].self_layers[k].values.data;
      for (std::size_t i = 0; i < a.size(); ++i) CHECK(b[i] == static_cast<float>(a[i]));
    }
  }
  save_bundle(back, dir / "b" / "m.json");
  for (const auto& e : std::filesystem::directory_iterator(dir / "a"))
    CHECK(read_bytes(e.path()) == read_bytes(dir / "b" / e.path().filename().string()));
}

TEST_CASE("manifest errors are classified") {
  TempDir dir("manifest");
  const auto manifest = write_seed_bundle(dir / "seed");
  auto expect = [&](const std::string& text, ErrorCode code) {
    write_text(dir / "seed" / "edit.json", text);
    try {
      (void)load_bundle(dir / "seed" / "edit.json");
      FAIL("accepted: " << text.substr(0, 60));
    } catch (const Error& e) {
      CHECK(e.code() == code);
      CHECK(std::string(e.what()).find("edit.json") != std::string::npos);
    }
  };
  nlohmann::json j = nlohmann::json::parse(read_text(manifest));
  expect("{ not json", ErrorCode::kFormat);
  expect("[1, 2]", ErrorCode::kFormat);
  {
    auto k = j;
    k["image_height"] = -4;
    expect(k.dump(), ErrorCode::kFormat);
  }
  {
    auto k = j;
    k["image_width"] = 2.5;
    expect(k.dump(), ErrorCode::kFormat);
  }
  {
    auto k = j;
    k["layers"][0]["file"] = "gone.atnb";
    expect(k.dump(), ErrorCode::kIo);
  }
  {
    auto k = j;
    k["timesteps"] = {50};
    expect(k.dump(), ErrorCode::kValidation);
  }
  {
    auto k = j;
    k["layer_counts"] = {{{"resolution", 8}, {"self", 5}, {"cross", 2}}};
    expect(k.dump(), ErrorCode::kValidation);
  }
  try {
    (void)load_bundle(dir / "nowhere.json");
    FAIL("loaded a missing manifest");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kIo);
  }
}

TEST_CASE("every corpus mutation kind is rejected with a structured error") {
  TempDir dir("fuzz_unit");
  const auto seed = write_seed_bundle(dir / "seed");
  CHECK_NOTHROW(load_bundle(seed));
  Rng rng(52);
  for (int kind = 0; kind < kMutationKinds; ++kind) {
    for (int rep = 0; rep < 5; ++rep) {
      const auto case_dir = dir / ("k" + std::to_string(kind) + "_" + std::to_string(rep));
      const FuzzOutcome out = load_fuzz_case(make_fuzz_case(seed, case_dir, kind, rng));
      INFO(mutation_name(kind) << ": " << out.detail);
      CHECK(out.rejected);
    }
  }
}

TEST_CASE("label PNGs round trip with the palette") {
  TempDir dir("png");
  Rng rng(53);
  LabelGrid g{13, 7, {}};
  for (std::size_t i = 0; i < 13 * 7; ++i)
    g.labels.push_back(static_cast<std::int32_t>(rng.uniform_int(0, 20)));
  g.labels[5] = 255;
  write_label_png(dir / "m.png", g);
  const LabelGrid back = read_label_png(dir / "m.png");
  CHECK(back.height == 13);
  CHECK(back.width == 7);
  CHECK(back.labels == g.labels);
  CHECK(read_label_grid(dir / "m.png").labels == g.labels);
  const auto p = label_palette();
  CHECK(p.size() == 768);
  CHECK(p[3] == 128);
  CHECK(p[4] == 0);
  CHECK(p[5] == 0);
}

TEST_CASE("labels out of the palette range are refused") {
  TempDir dir("png_bad");
  LabelGrid g{1, 2, {0, 300}};
  CHECK_THROWS_AS(write_label_png(dir / "m.png", g), Error);
  write_bytes(dir / "junk.png", {0x89, 'P', 'N', 'G', 0, 1, 2});
  try {
    (void)read_label_png(dir / "junk.png");
    FAIL("decoded junk");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kFormat);
  }
}

TEST_CASE("ground truth can be a tensor of integral labels") {
  TempDir dir("gt_tensor");
  write_tensor(dir / "gt.atnb", Tensor{{2, 2}, {0, 1, 1, 255}});
  const LabelGrid g = read_label_grid(dir / "gt.atnb");
  CHECK(g.labels == std::vector<std::int32_t>{0, 1, 1, 255});
  write_tensor(dir / "bad.atnb", Tensor{{2, 2}, {0, 1.5f, 1, 0}});
  CHECK_THROWS_AS(read_label_grid(dir / "bad.atnb"), Error);
}

TEST_CASE("synthetic fixture truth matches the image size") {
  const Fixture f = synth_fixture(parse_fixture_spec("blobs=2,side=20,grid=16,res=8"));
  CHECK(f.truth.height == 20);
  CHECK(f.truth.labels.size() == 400);
  CHECK(f.bundle.image_height == 20);
}
