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

#include "invseg/error.hpp"
#include "invseg/loss.hpp"
#include "invseg/reference.hpp"
#include "support.hpp"

using namespace invseg;
using namespace invseg::testing;

namespace {

struct Problem {
  DistanceMatrix s;
  reference::Grid s_ref;
  ClassMaps maps;
};

Problem random_problem(Rng& rng, std::size_t classes, std::size_t side) {
  Problem p;
  const Matrix a = random_stochastic(rng, side * side, side * side, 1.5);
  p.s = skl_matrix(a);
  p.s_ref.assign(side * side, std::vector<double>(side * side));
  for (std::size_t i = 0; i < side * side; ++i)
    for (std::size_t j = 0; j < side * side; ++j) p.s_ref[i][j] = p.s.at(i, j);
  p.maps = random_class_maps(rng, classes, side);
  return p;
}

std::vector<std::vector<ScoreMap>> views_of(const ClassMaps& maps, const AugmentSpec& spec) {
  std::vector<std::vector<ScoreMap>> out;
  for (std::size_t v = 0; v < spec.views(); ++v) out.push_back(apply_augment(maps.maps, spec, v));
  return out;
}

}  // namespace

TEST_CASE("cluster terms match the nested-loop reference") {
  Rng rng(21);
  for (int trial = 0; trial < 12; ++trial) {
    const auto classes = static_cast<std::size_t>(rng.uniform_int(2, 5));
    const auto side = static_cast<std::size_t>(rng.uniform_int(3, 8));
    const Problem p = random_problem(rng, classes, side);
    const auto g = as_grid(p.maps);
    const double scale = 1.0 + 6.0 * rng.uniform(), center = 0.3 + 0.4 * rng.uniform();
    CHECK(d_intra(p.s, p.maps, scale, center) ==
          doctest::Approx(reference::d_intra(p.s_ref, g, scale, center)).epsilon(1e-10));
    CHECK(d_inter(p.s, p.maps, scale, center) ==
          doctest::Approx(reference::d_inter(p.s_ref, g, scale, center)).epsilon(1e-10));
    CHECK(d_inter(p.s, p.maps, scale, center, InterPairing::kSymmetric) ==
          doctest::Approx(reference::d_inter(p.s_ref, g, scale, center, true)).epsilon(1e-10));
    CHECK(cluster_loss(p.s, p.maps, scale, center) ==
          doctest::Approx(reference::cluster(p.s_ref, g, scale, center)).epsilon(1e-10));
  }
}

TEST_CASE("cluster loss combines the terms with the class-count normalizers") {
  Rng rng(22);
  const Problem p = random_problem(rng, 3, 5);
  const double intra = d_intra(p.s, p.maps, 4.0, 0.5);
  const double inter = d_inter(p.s, p.maps, 4.0, 0.5);
  CHECK(cluster_loss(p.s, p.maps, 4.0, 0.5) ==
        doctest::Approx(intra / 3.0 - 2.0 * inter / 6.0).epsilon(1e-12));
}

TEST_CASE("cluster loss needs two classes") {
  Rng rng(23);
  const Problem p = random_problem(rng, 1, 4);
  CHECK_THROWS_AS(cluster_loss(p.s, p.maps, 4.0, 0.5), Error);
}

TEST_CASE("an all-zero class map is flagged degenerate instead of dividing by zero") {
  Rng rng(24);
  Problem p = random_problem(rng, 3, 4);
  std::fill(p.maps.maps[1].values.begin(), p.maps.maps[1].values.end(), 0.0);
  const ClusterTerms t = cluster_terms(p.s, as_grid(p.maps), {}, ClusterOptions{}, false);
  CHECK(t.degenerate[1]);
  CHECK(std::isfinite(t.loss));
}

TEST_CASE("entropy of uniform class maps is log C") {
  for (std::size_t classes : {2, 3, 4, 7}) {
    const std::vector<ScoreMap> maps(classes, ScoreMap(5, 5, 0.8));
    CHECK(std::abs(entropy_loss({maps}, identity_augment(5, 1)) - std::log(double(classes))) <=
          1e-9);
  }
}

TEST_CASE("entropy of one-hot maps is zero") {
  std::vector<ScoreMap> maps(3, ScoreMap(4, 4, 0.0));
  for (std::size_t i = 0; i < 16; ++i) maps[i % 3].values[i] = 1.0;
  CHECK(entropy_loss({maps}, identity_augment(4, 1)) == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("entropy matches the reference across random crops") {
  Rng rng(25);
  for (int trial = 0; trial < 12; ++trial) {
    const auto side = static_cast<std::size_t>(rng.uniform_int(4, 10));
    const ClassMaps maps = random_class_maps(rng, 3, side);
    const AugmentSpec spec = random_augment(side, 1 + trial % 3, 0.5, rng.next());
    const auto views = views_of(maps, spec);
    std::vector<reference::Grid> ref_views;
    for (const auto& v : views) ref_views.push_back(as_grid(v));
    for (bool normalize : {true, false})
      CHECK(entropy_loss(views, spec, normalize) ==
            doctest::Approx(reference::entropy(ref_views, spec.windows, side, normalize))
                .epsilon(1e-10));
  }
}

TEST_CASE("random crops respect the minimum side and stay inside the grid") {
  Rng rng(26);
  for (int trial = 0; trial < 200; ++trial) {
    const auto side = static_cast<std::size_t>(rng.uniform_int(1, 64));
    const double min_crop = 0.1 + 0.9 * rng.uniform();
    const AugmentSpec spec = random_augment(side, 3, min_crop, rng.next());
    for (const CropWindow& w : spec.windows) {
      CHECK(w.height >= std::max<std::size_t>(1, std::ceil(min_crop * side - 1e-9)));
      CHECK(w.width >= 1);
      CHECK(w.top + w.height <= side);
      CHECK(w.left + w.width <= side);
    }
  }
  CHECK_THROWS_AS(random_augment(8, 2, 0.0, 1), Error);
  CHECK_THROWS_AS(random_augment(8, 2, 1.5, 1), Error);
}

TEST_CASE("identity augmentation round-trips maps") {
  Rng rng(27);
  const ClassMaps maps = random_class_maps(rng, 2, 6);
  const AugmentSpec spec = identity_augment(6, 2);
  const auto view = apply_augment(maps.maps, spec, 0);
  const AlignedView back = invert_augment(view, spec, 0);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < 36; ++i)
      CHECK(back.maps[c].values[i] == doctest::Approx(maps.maps[c].values[i]));
  for (double v : back.coverage.values) CHECK(v == 1.0);
}

TEST_CASE("view averaging counts coverage") {
  Rng rng(28);
  const ClassMaps maps = random_class_maps(rng, 2, 8);
  AugmentSpec spec;
  spec.grid_side = 8;
  spec.windows = {{0, 0, 5, 5}, {3, 3, 5, 5}};
  const ViewAverage avg = average_views(views_of(maps, spec), spec);
  CHECK(avg.coverage.at(0, 0) == 1.0);
  CHECK(avg.coverage.at(4, 4) == 2.0);
  CHECK(avg.coverage.at(0, 7) == 0.0);
  CHECK(avg.maps[0].at(0, 7) == 0.0);
}

TEST_CASE("total loss is cluster plus alpha times entropy and matches the reference") {
  Rng rng(29);
  for (int trial = 0; trial < 6; ++trial) {
    const Problem p = random_problem(rng, 3, 6);
    const AugmentSpec spec = random_augment(6, 2, 0.6, rng.next());
    const auto views = views_of(p.maps, spec);
    LossOptions options;
    options.alpha = 0.25 + rng.uniform();
    const LossBreakdown l = total_loss(p.s, views, spec, options);
    CHECK(l.total == doctest::Approx(l.cluster + options.alpha * l.entropy).epsilon(1e-12));
    std::vector<reference::Grid> ref_views;
    for (const auto& v : views) ref_views.push_back(as_grid(v));
    CHECK(l.total == doctest::Approx(reference::total(p.s_ref, ref_views, spec.windows, 6,
                                                      options.alpha, 4.0, 0.5))
                         .epsilon(1e-10));
  }
}

TEST_CASE("total loss gradient with respect to view maps matches central differences") {
  Rng rng(30);
  for (int trial = 0; trial < 4; ++trial) {
    Problem p = random_problem(rng, 2 + trial % 3, 5);
    // Keep every value off zero: the entropy clamps probabilities there and
    // is not differentiable at that point.
    for (auto& m : p.maps.maps)
      for (double& v : m.values) v = 0.05 + 0.9 * v;
    const AugmentSpec spec = random_augment(5, 2, 0.6, rng.next());
    auto views = views_of(p.maps, spec);
    LossOptions options;
    options.cluster.pairing = trial % 2 ? InterPairing::kSymmetric : InterPairing::kOrdered;
    const LossWithGrad lw = total_loss_with_grad(p.s, views, spec, options);
    const double h = 1e-6;
    double err = 0.0, scale = 0.0;
    for (std::size_t v = 0; v < views.size(); ++v)
      for (std::size_t c = 0; c < views[v].size(); ++c)
        for (std::size_t i = 0; i < views[v][c].values.size(); ++i) {
          auto plus = views, minus = views;
          plus[v][c].values[i] += h;
          minus[v][c].values[i] -= h;
          const double fd = (total_loss(p.s, plus, spec, options).total -
                             total_loss(p.s, minus, spec, options).total) /
                            (2.0 * h);
          err = std::max(err, std::abs(fd - lw.grad[v][c].values[i]));
          scale = std::max(scale, std::abs(fd));
        }
    CHECK(err / scale < 1e-5);
  }
}
