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

#include "invseg/io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <type_traits>

#include <json.hpp>

#include "invseg/error.hpp"

namespace invseg {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr char kMagic[4] = {'A', 'T', 'N', 'B'};
constexpr std::size_t kMaxDims = 8;

[[noreturn]] void format_error(const std::string& origin, const std::string& msg) {
  throw Error(ErrorCode::kFormat, origin + ": " + msg);
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
std::uint32_t get_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}
std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIo, "write failed for '" + path.string() + "'");
}

}  // namespace

std::vector<std::uint8_t> encode_tensor(const Tensor& tensor) {
  if (tensor.dims.size() > kMaxDims) throw_invalid("tensor: more than 8 dims");
  std::uint64_t count = 1;
  for (auto d : tensor.dims) count *= d;
  if (count != tensor.values.size())
    throw_invalid("tensor: dims product " + std::to_string(count) +
                  " does not match value count " + std::to_string(tensor.values.size()));
  std::vector<std::uint8_t> out;
  out.reserve(10 + 8 * tensor.dims.size() + 4 * tensor.values.size());
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u32(out, kTensorVersion);
  out.push_back(kDtypeF32);
  out.push_back(static_cast<std::uint8_t>(tensor.dims.size()));
  for (auto d : tensor.dims) put_u64(out, d);
  for (float v : tensor.values) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
  }
  return out;
}

Tensor decode_tensor(std::span<const std::uint8_t> bytes, const std::string& origin) {
  auto need = [&](std::size_t offset, std::size_t count, const char* what) {
    if (bytes.size() < offset + count) {
      std::ostringstream os;
      os << "truncated " << what << " at byte offset " << offset << ": expected "
         << count << " bytes, found " << (bytes.size() > offset ? bytes.size() - offset : 0);
      format_error(origin, os.str());
    }
  };
  need(0, 4, "magic");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0)
    format_error(origin, "bad magic at byte offset 0: expected 'ATNB'");
  need(4, 4, "version");
  const std::uint32_t version = get_u32(bytes.data() + 4);
  if (version != kTensorVersion)
    format_error(origin, "unsupported version " + std::to_string(version) +
                             " at byte offset 4 (expected " +
                             std::to_string(kTensorVersion) + ")");
  need(8, 1, "dtype");
  if (bytes[8] != kDtypeF32)
    format_error(origin, "unsupported dtype code " + std::to_string(bytes[8]) +
                             " at byte offset 8 (expected 0 = f32)");
  need(9, 1, "ndim");
  const std::size_t ndim = bytes[9];
  if (ndim > kMaxDims)
    format_error(origin, "ndim " + std::to_string(ndim) +
                             " at byte offset 9 exceeds the limit of 8");
  need(10, 8 * ndim, "dims");
  Tensor t;
  const std::size_t header = 10 + 8 * ndim;
  const std::uint64_t max_count = (bytes.size() - header) / 4;
  std::uint64_t count = 1;
  bool overflow = false;
  for (std::size_t i = 0; i < ndim; ++i) {
    const std::uint64_t d = get_u64(bytes.data() + 10 + 8 * i);
    t.dims.push_back(d);
    if (d != 0 && count > std::numeric_limits<std::uint64_t>::max() / d) overflow = true;
    count *= d;
  }
  if (overflow || count > max_count) {
    std::ostringstream os;
    os << "truncated payload at byte offset " << header << ": dims declare ";
    if (overflow) {
      os << "more values than addressable";
    } else {
      os << count << " values, expected " << 4 * count << " bytes, found "
         << bytes.size() - header;
    }
    format_error(origin, os.str());
  }
  const std::uint64_t expected = header + 4 * count;
  if (bytes.size() != expected) {
    std::ostringstream os;
    os << "trailing data at byte offset " << expected << ": expected " << expected
       << " bytes in total, found " << bytes.size();
    format_error(origin, os.str());
  }
  t.values.resize(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint32_t bits = get_u32(bytes.data() + header + 4 * i);
    std::memcpy(&t.values[i], &bits, 4);
  }
  return t;
}

void write_tensor(const fs::path& path, const Tensor& tensor) {
  write_file(path, encode_tensor(tensor));
}

Tensor read_tensor(const fs::path& path) {
  return decode_tensor(read_file(path), path.string());
}

Tensor matrix_tensor(const Matrix& m) {
  Tensor t;
  t.dims = {m.rows, m.cols};
  t.values.assign(m.data.begin(), m.data.end());
  return t;
}

Tensor map_tensor(const ScoreMap& map) {
  Tensor t;
  t.dims = {map.height, map.width};
  t.values.assign(map.values.begin(), map.values.end());
  return t;
}

// ---------------------------------------------------------------------------
// Manifest

namespace {

template <typename T>
struct is_vector : std::false_type {};
template <typename U>
struct is_vector<std::vector<U>> : std::true_type {
  using element = U;
};

// json's own conversions silently wrap negative or fractional numbers into
// integer fields; reject those before converting.
template <typename T>
bool integral_fits(const json& v) {
  if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_integer()) return false;
    if (v.is_number_unsigned())
      return v.get<std::uint64_t>() <=
             static_cast<std::uint64_t>(std::numeric_limits<T>::max());
    const auto x = v.get<std::int64_t>();
    return x >= static_cast<std::int64_t>(std::numeric_limits<T>::min()) &&
           (x < 0 || static_cast<std::uint64_t>(x) <=
                         static_cast<std::uint64_t>(std::numeric_limits<T>::max()));
  } else if constexpr (is_vector<T>::value) {
    if (!v.is_array()) return true;
    for (const auto& e : v)
      if (!integral_fits<typename is_vector<T>::element>(e)) return false;
    return true;
  } else {
    return true;
  }
}

template <typename T>
T field(const json& j, const char* key, const std::string& origin) {
  if (!j.contains(key)) format_error(origin, std::string("missing field '") + key + "'");
  if (!integral_fits<T>(j.at(key)))
    format_error(origin, std::string("field '") + key + "' is not a representable integer");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    format_error(origin, std::string("field '") + key + "': " + e.what());
  }
}

}  // namespace

AttentionBundle load_bundle(const fs::path& manifest) {
  const std::string origin = manifest.string();
  const auto bytes = read_file(manifest);
  json j;
  try {
    j = json::parse(bytes.begin(), bytes.end());
  } catch (const json::parse_error& e) {
    format_error(origin, std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) format_error(origin, "manifest is not a JSON object");
  const int version = field<int>(j, "format_version", origin);
  if (version != kManifestVersion)
    format_error(origin, "unsupported format_version " + std::to_string(version));

  AttentionBundle b;
  b.image_id = field<std::string>(j, "image_id", origin);
  b.image_height = field<std::size_t>(j, "image_height", origin);
  b.image_width = field<std::size_t>(j, "image_width", origin);
  b.tokens = field<std::vector<std::string>>(j, "tokens", origin);
  const json classes = field<json>(j, "classes", origin);
  if (!classes.is_array()) format_error(origin, "'classes' is not an array");
  for (const auto& c : classes) {
    b.classes.push_back({field<std::string>(c, "name", origin),
                         field<std::size_t>(c, "token_begin", origin),
                         field<std::size_t>(c, "token_end", origin)});
  }
  if (j.contains("background_class") && !j.at("background_class").is_null())
    b.background_class = field<std::size_t>(j, "background_class", origin);

  const auto resolutions = field<std::vector<std::size_t>>(j, "resolutions", origin);
  const auto timesteps = field<std::vector<int>>(j, "timesteps", origin);
  const json layers = field<json>(j, "layers", origin);
  if (!layers.is_array()) format_error(origin, "'layers' is not an array");

  const fs::path dir = manifest.parent_path();
  std::set<std::size_t> seen_res;
  std::set<int> seen_t;
  std::map<std::size_t, std::pair<std::size_t, std::size_t>> counts;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const json& l = layers[i];
    const auto kind = field<std::string>(l, "kind", origin);
    const auto res = field<std::size_t>(l, "resolution", origin);
    const int t = field<int>(l, "timestep", origin);
    const auto name = l.contains("name") ? field<std::string>(l, "name", origin)
                                         : "layer" + std::to_string(i);
    const fs::path file = dir / field<std::string>(l, "file", origin);
    if (kind != "self" && kind != "cross")
      format_error(origin, "layer " + std::to_string(i) + " has unknown kind '" + kind + "'");
    if (!fs::exists(file))
      throw Error(ErrorCode::kIo, origin + ": layer '" + name + "' references missing file '" +
                                      file.string() + "'");
    const Tensor tensor = read_tensor(file);
    const std::uint64_t n = static_cast<std::uint64_t>(res) * res;
    const std::uint64_t cols = kind == "self" ? n : b.tokens.size();
    if (tensor.dims.size() != 2 || tensor.dims[0] != n || tensor.dims[1] != cols) {
      std::ostringstream os;
      os << origin << ": " << kind << " layer '" << name << "' in '" << file.string()
         << "' has shape [";
      for (std::size_t d = 0; d < tensor.dims.size(); ++d) os << (d ? "," : "") << tensor.dims[d];
      os << "], expected [" << n << "," << cols << "]";
      throw Error(ErrorCode::kValidation, os.str());
    }
    Matrix m(n, cols);
    std::copy(tensor.values.begin(), tensor.values.end(), m.data.begin());
    AttentionLevel& level = b.level_or_add(res);
    if (kind == "self") {
      level.self_layers.push_back({std::move(m), t, name});
      counts[res].first++;
    } else {
      level.cross_layers.push_back({std::move(m), t, name});
      counts[res].second++;
    }
    seen_res.insert(res);
    seen_t.insert(t);
  }
  if (std::set<std::size_t>(resolutions.begin(), resolutions.end()) != seen_res)
    throw Error(ErrorCode::kValidation,
                origin + ": 'resolutions' does not match the resolutions of the layers");
  if (std::set<int>(timesteps.begin(), timesteps.end()) != seen_t)
    throw Error(ErrorCode::kValidation,
                origin + ": 'timesteps' does not match the timesteps of the layers");
  if (j.contains("layer_counts")) {
    const json lc = j.at("layer_counts");
    if (!lc.is_array()) format_error(origin, "'layer_counts' is not an array");
    for (const auto& e : lc) {
      const auto res = field<std::size_t>(e, "resolution", origin);
      const auto self_n = field<std::size_t>(e, "self", origin);
      const auto cross_n = field<std::size_t>(e, "cross", origin);
      const auto it = counts.find(res);
      const auto actual = it == counts.end() ? std::pair<std::size_t, std::size_t>{0, 0}
                                              : it->second;
      if (actual.first != self_n || actual.second != cross_n)
        throw Error(ErrorCode::kValidation,
                    origin + ": layer_counts for resolution " + std::to_string(res) +
                        " declare " + std::to_string(self_n) + " self / " +
                        std::to_string(cross_n) + " cross layers, found " +
                        std::to_string(actual.first) + " / " + std::to_string(actual.second));
    }
  }
  try {
    validate_bundle(b);
  } catch (const Error& e) {
    throw Error(e.code(), origin + ": " + e.what());
  }
  return b;
}

void save_bundle(const AttentionBundle& bundle, const fs::path& manifest) {
  const fs::path dir = manifest.parent_path();
  if (!dir.empty()) fs::create_directories(dir);
  json j;
  j["format_version"] = kManifestVersion;
  j["image_id"] = bundle.image_id;
  j["image_height"] = bundle.image_height;
  j["image_width"] = bundle.image_width;
  j["tokens"] = bundle.tokens;
  json classes = json::array();
  for (const auto& c : bundle.classes)
    classes.push_back({{"name", c.name}, {"token_begin", c.begin}, {"token_end", c.end}});
  j["classes"] = classes;
  j["background_class"] =
      bundle.background_class ? json(*bundle.background_class) : json(nullptr);

  std::set<std::size_t> resolutions;
  std::set<int> timesteps;
  json layers = json::array();
  json counts = json::array();
  const std::string stem = manifest.stem().string();
  for (const auto& level : bundle.levels) {
    resolutions.insert(level.side);
    counts.push_back({{"resolution", level.side},
                      {"self", level.self_layers.size()},
                      {"cross", level.cross_layers.size()}});
    auto emit = [&](const std::vector<AttentionLayer>& list, const char* kind) {
      for (std::size_t i = 0; i < list.size(); ++i) {
        const auto& layer = list[i];
        const std::string file = stem + "_" + kind + "_r" + std::to_string(level.side) +
                                 "_t" + std::to_string(layer.timestep) + "_" +
                                 std::to_string(i) + ".atnb";
        write_tensor(dir / file, matrix_tensor(layer.values));
        layers.push_back({{"kind", kind},
                          {"resolution", level.side},
                          {"timestep", layer.timestep},
                          {"name", layer.name},
                          {"file", file}});
        timesteps.insert(layer.timestep);
      }
    };
    emit(level.self_layers, "self");
    emit(level.cross_layers, "cross");
  }
  j["resolutions"] = std::vector<std::size_t>(resolutions.begin(), resolutions.end());
  j["timesteps"] = std::vector<int>(timesteps.begin(), timesteps.end());
  j["layer_counts"] = counts;
  j["layers"] = layers;
  const std::string text = j.dump(2) + "\n";
  write_file(manifest, std::span(reinterpret_cast<const std::uint8_t*>(text.data()),
                                 text.size()));
}

// ---------------------------------------------------------------------------
// Fixtures

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double d = 0.0;
  try {
    d = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty() || !std::isfinite(d))
    throw_invalid("fixture spec: '" + key + "' expects a number, got '" + v + "'");
  return d;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
    throw_invalid("fixture spec: '" + key + "' expects an unsigned integer, got '" + v + "'");
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw_invalid("fixture spec: '" + key + "' is out of range");
  }
}

}  // namespace

FixtureSpec parse_fixture_spec(const std::string& text) {
  FixtureSpec spec;
  bool grid_given = false;
  for (const auto& part : split(text, ',')) {
    if (part.empty()) continue;
    const auto eq = part.find('=');
    if (eq == std::string::npos)
      throw_invalid("fixture spec: expected key=value, got '" + part + "'");
    const std::string key = part.substr(0, eq);
    const std::string value = part.substr(eq + 1);
    if (key == "blobs") {
      spec.scene.blobs = parse_uint(key, value);
    } else if (key == "side") {
      spec.scene.side = parse_uint(key, value);
    } else if (key == "noise") {
      spec.scene.noise = parse_double(key, value);
    } else if (key == "seed") {
      spec.scene.seed = parse_uint(key, value);
    } else if (key == "width") {
      spec.scene.blob_width = parse_double(key, value);
    } else if (key == "amplitude") {
      spec.scene.amplitude = parse_double(key, value);
    } else if (key == "offset") {
      spec.scene.prompt_offset = parse_double(key, value);
    } else if (key == "ramp") {
      spec.scene.ramp = parse_double(key, value);
    } else if (key == "bias") {
      spec.scene.spatial_bias = parse_double(key, value);
    } else if (key == "grid") {
      spec.grid_side = parse_uint(key, value);
      grid_given = true;
    } else if (key == "dim") {
      spec.embed_dim = parse_uint(key, value);
    } else if (key == "res") {
      spec.resolutions.clear();
      for (const auto& r : split(value, '+')) spec.resolutions.push_back(parse_uint(key, r));
    } else if (key == "t") {
      spec.timesteps.clear();
      for (const auto& r : split(value, '+'))
        spec.timesteps.push_back(static_cast<int>(parse_uint(key, r)));
    } else {
      throw_invalid("fixture spec: unknown key '" + key + "'");
    }
  }
  if (!grid_given) {
    const std::size_t s = spec.scene.side;
    spec.grid_side = (s == 8 || s == 16 || s == 32 || s == 64) ? s : 64;
  }
  if (spec.resolutions.empty()) throw_invalid("fixture spec: no resolutions");
  if (spec.timesteps.empty()) throw_invalid("fixture spec: no timesteps");
  validate_toy_scene(spec.scene);
  return spec;
}

std::string format_fixture_spec(const FixtureSpec& spec) {
  std::ostringstream os;
  os.precision(17);
  os << "blobs=" << spec.scene.blobs << ",side=" << spec.scene.side
     << ",noise=" << spec.scene.noise << ",seed=" << spec.scene.seed
     << ",width=" << spec.scene.blob_width << ",amplitude=" << spec.scene.amplitude
     << ",offset=" << spec.scene.prompt_offset << ",ramp=" << spec.scene.ramp
     << ",bias=" << spec.scene.spatial_bias << ",grid=" << spec.grid_side
     << ",dim=" << spec.embed_dim << ",res=";
  for (std::size_t i = 0; i < spec.resolutions.size(); ++i)
    os << (i ? "+" : "") << spec.resolutions[i];
  os << ",t=";
  for (std::size_t i = 0; i < spec.timesteps.size(); ++i)
    os << (i ? "+" : "") << spec.timesteps[i];
  return os.str();
}

ToyBackend make_fixture_backend(const FixtureSpec& spec) {
  BackendConfig config;
  config.kind = BackendKind::kToy;
  config.grid_side = spec.grid_side;
  config.embed_dim = spec.embed_dim;
  config.seed = spec.scene.seed;
  config.resolutions = spec.resolutions;
  return ToyBackend(spec.scene, config);
}

Fixture synth_fixture(const FixtureSpec& spec) {
  const ToyBackend backend = make_fixture_backend(spec);
  const PromptParams params = backend.init_params();
  Fixture f;
  for (int t : spec.timesteps) {
    AttentionBundle b = backend.forward(params, t, std::nullopt);
    if (f.bundle.levels.empty()) {
      f.bundle = std::move(b);
      continue;
    }
    for (auto& level : b.levels) {
      AttentionLevel& dst = f.bundle.level_or_add(level.side);
      for (auto& l : level.self_layers) dst.self_layers.push_back(std::move(l));
      for (auto& l : level.cross_layers) dst.cross_layers.push_back(std::move(l));
    }
  }
  const std::size_t side = spec.scene.side;
  f.truth = LabelGrid{side, side, backend.truth_labels(side)};
  return f;
}

// ---------------------------------------------------------------------------
// PNG

std::vector<std::uint8_t> label_palette() {
  std::vector<std::uint8_t> p(256 * 3, 0);
  for (int i = 0; i < 256; ++i) {
    int c = i;
    int r = 0, g = 0, b = 0;
    for (int j = 0; j < 8; ++j) {
      r |= ((c >> 0) & 1) << (7 - j);
      g |= ((c >> 1) & 1) << (7 - j);
      b |= ((c >> 2) & 1) << (7 - j);
      c >>= 3;
    }
    p[3 * i] = static_cast<std::uint8_t>(r);
    p[3 * i + 1] = static_cast<std::uint8_t>(g);
    p[3 * i + 2] = static_cast<std::uint8_t>(b);
  }
  return p;
}

namespace {

struct PngMessage {
  char text[256] = {0};
};

void png_error_fn(png_structp png, png_const_charp msg) {
  auto* m = static_cast<PngMessage*>(png_get_error_ptr(png));
  if (m != nullptr) std::snprintf(m->text, sizeof(m->text), "%s", msg);
  png_longjmp(png, 1);
}

void png_warning_fn(png_structp, png_const_charp) {}

// Both helpers keep every C++ object with a destructor outside the setjmp
// frame so that longjmp skips nothing.
bool write_png_raw(std::FILE* fp, const LabelGrid& grid, const std::uint8_t* rows,
                   const std::uint8_t* palette, PngMessage* msg) {
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, msg, png_error_fn, png_warning_fn);
  if (png == nullptr) return false;
  png_infop info = png_create_info_struct(png);
  if (info == nullptr || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(grid.width),
               static_cast<png_uint_32>(grid.height), 8, PNG_COLOR_TYPE_PALETTE,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_color colors[256];
  for (int i = 0; i < 256; ++i) {
    colors[i].red = palette[3 * i];
    colors[i].green = palette[3 * i + 1];
    colors[i].blue = palette[3 * i + 2];
  }
  png_set_PLTE(png, info, colors, 256);
  png_write_info(png, info);
  for (std::size_t y = 0; y < grid.height; ++y)
    png_write_row(png, const_cast<png_bytep>(rows + y * grid.width));
  png_write_end(png, info);
  png_destroy_write_struct(&png, &info);
  return true;
}

struct PngHeader {
  png_uint_32 width = 0;
  png_uint_32 height = 0;
  int bit_depth = 0;
  int color_type = 0;
};

bool read_png_header(std::FILE* fp, png_structp* png_out, png_infop* info_out,
                     PngHeader* header, PngMessage* msg) {
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, msg, png_error_fn, png_warning_fn);
  if (png == nullptr) return false;
  png_infop info = png_create_info_struct(png);
  if (info == nullptr || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    return false;
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  header->width = png_get_image_width(png, info);
  header->height = png_get_image_height(png, info);
  header->bit_depth = png_get_bit_depth(png, info);
  header->color_type = png_get_color_type(png, info);
  *png_out = png;
  *info_out = info;
  return true;
}

bool read_png_rows(png_structp png, png_infop info, std::uint8_t* dst,
                   std::size_t width, std::size_t height) {
  if (setjmp(png_jmpbuf(png))) return false;
  if (png_get_bit_depth(png, info) < 8) png_set_packing(png);
  png_read_update_info(png, info);
  for (std::size_t y = 0; y < height; ++y) png_read_row(png, dst + y * width, nullptr);
  png_read_end(png, nullptr);
  return true;
}

}  // namespace

void write_label_png(const fs::path& path, const LabelGrid& grid) {
  if (grid.width == 0 || grid.height == 0) throw_invalid("png: empty label grid");
  if (grid.labels.size() != grid.width * grid.height)
    throw_invalid("png: label count does not match grid dims");
  std::vector<std::uint8_t> rows(grid.labels.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (grid.labels[i] < 0 || grid.labels[i] > 255)
      throw_invalid("png: label " + std::to_string(grid.labels[i]) + " not in [0, 255]");
    rows[i] = static_cast<std::uint8_t>(grid.labels[i]);
  }
  const auto palette = label_palette();
  std::FILE* fp = std::fopen(path.string().c_str(), "wb");
  if (fp == nullptr) throw Error(ErrorCode::kIo, "cannot write '" + path.string() + "'");
  PngMessage msg;
  const bool ok = write_png_raw(fp, grid, rows.data(), palette.data(), &msg);
  const bool closed = std::fclose(fp) == 0;
  if (!ok || !closed)
    throw Error(ErrorCode::kIo, "png write failed for '" + path.string() + "': " + msg.text);
}

LabelGrid read_label_png(const fs::path& path) {
  std::FILE* fp = std::fopen(path.string().c_str(), "rb");
  if (fp == nullptr) throw Error(ErrorCode::kIo, "cannot open '" + path.string() + "'");
  unsigned char sig[8] = {0};
  if (std::fread(sig, 1, 8, fp) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    std::fclose(fp);
    throw Error(ErrorCode::kFormat, path.string() + ": not a PNG file");
  }
  std::rewind(fp);
  png_structp png = nullptr;
  png_infop info = nullptr;
  PngHeader header;
  PngMessage msg;
  if (!read_png_header(fp, &png, &info, &header, &msg)) {
    std::fclose(fp);
    throw Error(ErrorCode::kFormat, path.string() + ": " + msg.text);
  }
  const bool indexed = header.color_type == PNG_COLOR_TYPE_PALETTE;
  const bool gray = header.color_type == PNG_COLOR_TYPE_GRAY;
  if ((!indexed && !gray) || header.bit_depth > 8) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw Error(ErrorCode::kFormat,
                path.string() + ": label PNGs must be 8-bit (or less) palette or grayscale");
  }
  LabelGrid grid{header.height, header.width, {}};
  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(header.width) * header.height);
  const bool ok = read_png_rows(png, info, pixels.data(), header.width, header.height);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  if (!ok) throw Error(ErrorCode::kFormat, path.string() + ": " + msg.text);
  grid.labels.assign(pixels.begin(), pixels.end());
  return grid;
}

LabelGrid read_label_grid(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open '" + path.string() + "'");
  char head[4] = {0};
  in.read(head, 4);
  in.close();
  if (std::memcmp(head, kMagic, 4) != 0) return read_label_png(path);
  const Tensor t = read_tensor(path);
  if (t.dims.size() != 2)
    throw Error(ErrorCode::kFormat, path.string() + ": label tensor must be 2-D");
  LabelGrid grid{t.dims[0], t.dims[1], std::vector<std::int32_t>(t.values.size())};
  for (std::size_t i = 0; i < t.values.size(); ++i) {
    const float v = t.values[i];
    if (!std::isfinite(v) || v != std::floor(v) || v < 0.0f || v > 65535.0f)
      throw Error(ErrorCode::kFormat, path.string() + ": label tensor value at index " +
                                          std::to_string(i) + " is not a valid label");
    grid.labels[i] = static_cast<std::int32_t>(v);
  }
  return grid;
}

}  // namespace invseg
