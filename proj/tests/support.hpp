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

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "invseg/linalg.hpp"
#include "invseg/loss.hpp"
#include "invseg/maps.hpp"
#include "invseg/random.hpp"
#include "invseg/refine.hpp"

// Hand-rolled generators shared by the unit and acceptance suites.
namespace invseg::testing {

// Row-stochastic n x n matrix. `peaked` sharpens rows so entries span
// several orders of magnitude.
inline Matrix random_stochastic(Rng& rng, std::size_t rows, std::size_t cols,
                                double peaked = 1.0) {
  Matrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      m(r, c) = std::exp(peaked * rng.normal());
      sum += m(r, c);
    }
    for (std::size_t c = 0; c < cols; ++c) m(r, c) /= sum;
  }
  return m;
}

inline Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols,
                            double scale = 1.0) {
  Matrix m(rows, cols);
  for (double& v : m.data) v = scale * rng.normal();
  return m;
}

// Min-max normalized random class maps on a side x side grid, like the
// output of the class-map stage.
inline ClassMaps random_class_maps(Rng& rng, std::size_t classes, std::size_t side) {
  ClassMaps maps;
  maps.side = side;
  for (std::size_t c = 0; c < classes; ++c) {
    ScoreMap m(side, side);
    for (double& v : m.values) v = rng.uniform();
    maps.maps.push_back(minmax_norm(m));
    maps.names.push_back("class" + std::to_string(c));
  }
  return maps;
}

inline std::vector<std::vector<double>> as_grid(const ClassMaps& maps) {
  std::vector<std::vector<double>> g;
  for (const auto& m : maps.maps) g.push_back(m.values);
  return g;
}

inline std::vector<std::vector<double>> as_grid(const std::vector<ScoreMap>& maps) {
  std::vector<std::vector<double>> g;
  for (const auto& m : maps) g.push_back(m.values);
  return g;
}

inline double rel_error(double value, double reference) {
  return std::abs(value - reference) / std::max(std::abs(reference), 1e-300);
}

// Max-norm relative error: max |a - b| / max |b|.
inline double max_rel_error(const std::vector<double>& a, const std::vector<double>& b) {
  double err = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    err = std::max(err, std::abs(a[i] - b[i]));
    scale = std::max(scale, std::abs(b[i]));
  }
  return scale > 0.0 ? err / scale : err;
}

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const std::filesystem::path& path,
                        const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    Rng rng(static_cast<std::uint64_t>(
        std::hash<std::string>{}(tag) ^
        static_cast<std::uint64_t>(std::filesystem::file_time_type::clock::now()
                                       .time_since_epoch()
                                       .count())));
    path_ = std::filesystem::temp_directory_path() /
            ("invseg_" + tag + "_" + std::to_string(rng.next() % 1000000007ull));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace invseg::testing
