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

// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
// criterion fails.

#include <sys/resource.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "fuzz_corpus.hpp"
#include "invseg/backend.hpp"
#include "invseg/distance.hpp"
#include "invseg/io.hpp"
#include "invseg/loss.hpp"
#include "invseg/metrics.hpp"
#include "invseg/optim.hpp"
#include "invseg/reference.hpp"
#include "invseg/segment.hpp"
#include "support.hpp"

namespace {

using namespace invseg;
using namespace invseg::testing;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

int g_failures = 0;

void report(const char* name, const std::function<Verdict()>& check) {
  Verdict v;
  try {
    v = check();
  } catch (const std::exception& e) {
    v = {false, std::string("exception: ") + e.what()};
  }
  if (!v.pass) ++g_failures;
  std::printf("%s %s: %s\n", v.pass ? "PASS" : "FAIL", name, v.detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

FixtureSpec small_fixture(std::size_t classes, std::uint64_t seed) {
  return parse_fixture_spec("blobs=" + std::to_string(classes) + ",side=8,grid=8,dim=8,res=8,seed=" +
                            std::to_string(seed));
}

Verdict oracle_equivalence() {
  const auto start = Clock::now();
  double worst = 0.0;
  std::string worst_where = "none";
  std::size_t cases = 0;
  const InversionConfig config;
  const double scale = config.anchor_scale, center = config.anchor_center;
  for (std::size_t classes : {2, 3, 4}) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const FixtureSpec spec = small_fixture(classes, seed);
      const ToyBackend backend = make_fixture_backend(spec);
      const auto weights = AggregationWeights::one_hot(8);
      // Perturbed prompts so the maps are not the backend's canonical ones.
      PromptParams params = backend.init_params();
      Rng rng(mix_seed(seed, classes));
      for (double& v : params.values) v += 0.3 * rng.normal();
      const int t = static_cast<int>(rng.uniform_int(5, 300));

      const Matrix a_self = working_self_attention(backend, params, t, weights);
      const DistanceMatrix s = skl_matrix(a_self);
      const reference::Grid s_ref = reference::skl(a_self);
      std::vector<double> flat, flat_ref;
      for (std::size_t p = 0; p < s.size(); ++p)
        for (std::size_t q = 0; q < s.size(); ++q) {
          flat.push_back(s.at(p, q));
          flat_ref.push_back(s_ref[p][q]);
        }

      const ClassMaps maps = infer_class_maps(backend, params, t, weights);
      const auto grid = as_grid(maps);
      const AugmentSpec aug = random_augment(8, 2, 0.6, mix_seed(seed, 77 + classes));
      std::vector<std::vector<ScoreMap>> views;
      std::vector<reference::Grid> views_ref;
      for (std::size_t v = 0; v < aug.views(); ++v) {
        views.push_back(apply_augment(maps.maps, aug, v));
        views_ref.push_back(as_grid(views.back()));
      }

      const std::pair<const char*, double> errors[] = {
          {"skl_matrix", max_rel_error(flat, flat_ref)},
          {"d_intra", rel_error(d_intra(s, maps, scale, center),
                                reference::d_intra(s_ref, grid, scale, center))},
          {"d_inter", rel_error(d_inter(s, maps, scale, center),
                                reference::d_inter(s_ref, grid, scale, center))},
          {"cluster_loss", rel_error(cluster_loss(s, maps, scale, center),
                                     reference::cluster(s_ref, grid, scale, center))},
          {"entropy_loss", rel_error(entropy_loss(views, aug),
                                     reference::entropy(views_ref, aug.windows, 8))},
      };
      for (const auto& [name, err] : errors) {
        if (!(err <= worst)) {
          worst = err;
          worst_where = fmt("%s C=%zu seed=%llu", name, classes,
                            static_cast<unsigned long long>(seed));
        }
      }
      ++cases;
    }
  }
  const double secs = seconds_since(start);
  return {worst < 1e-5 && secs < 30.0,
          fmt("%zu cases, max relative error %.3e (%s), %.2fs", cases, worst,
              worst_where.c_str(), secs)};
}

struct FdCheck {
  bool admissible = true;  // no stencil crosses a change of the active set
  double rel_error = 0.0;
};

FdCheck fd_check(const Backend& backend, const PromptParams& params, const AugmentSpec& aug,
                 const InversionConfig& config, int t) {
  const ObjectiveResult analytic = evaluate_objective(backend, params, t, aug, config, true);
  const double h = 1e-3;
  FdCheck out;
  std::vector<double> fd(params.values.size());
  for (std::size_t i = 0; i < params.values.size(); ++i) {
    PromptParams plus = params, minus = params;
    plus.values[i] += h;
    minus.values[i] -= h;
    const ObjectiveResult fp = evaluate_objective(backend, plus, t, aug, config, false);
    const ObjectiveResult fm = evaluate_objective(backend, minus, t, aug, config, false);
    if (fp.active_set != analytic.active_set || fm.active_set != analytic.active_set)
      out.admissible = false;
    fd[i] = (fp.loss.total - fm.loss.total) / (2.0 * h);
  }
  out.rel_error = max_rel_error(analytic.grad->values, fd);
  return out;
}

// Draws evaluation points until every central-difference stencil stays on one
// smooth piece; the count of discarded draws is reported.
template <typename Draw>
double checked_point(const Backend& backend, const AugmentSpec& aug,
                     const InversionConfig& config, int t, Draw draw, std::size_t& redraws) {
  for (int attempt = 0;; ++attempt) {
    const FdCheck c = fd_check(backend, draw(attempt), aug, config, t);
    if (c.admissible || attempt == 20) return c.rel_error;
    ++redraws;
  }
}

Verdict gradient_check() {
  const auto start = Clock::now();
  double worst_toy = 0.0, worst_static = 0.0;
  std::size_t redraws = 0;
  InversionConfig config;
  config.weights = AggregationWeights::one_hot(8);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const ToyBackend toy = make_fixture_backend(small_fixture(3, seed));
    const AugmentSpec aug = random_augment(8, 2, 0.6, mix_seed(seed, 5));
    const int t = static_cast<int>(Rng(mix_seed(seed, 0x7)).uniform_int(5, 300));
    worst_toy = std::max(
        worst_toy, checked_point(toy, aug, config, t,
                                 [&](int attempt) {
                                   Rng rng(mix_seed(seed, 0x6ead + attempt));
                                   PromptParams p = toy.init_params();
                                   for (double& v : p.values) v += 0.2 * rng.normal();
                                   return p;
                                 },
                                 redraws));

    BackendConfig bc = toy.config();
    bc.kind = BackendKind::kStatic;
    const StaticBackend stat(toy.forward(toy.init_params(), t, std::nullopt), bc);
    worst_static = std::max(
        worst_static, checked_point(stat, aug, config, t,
                                    [&](int attempt) {
                                      Rng rng(mix_seed(seed, 0x57a7 + attempt));
                                      PromptParams q = stat.init_params();
                                      for (double& v : q.values) v = 0.3 * rng.normal();
                                      return q;
                                    },
                                    redraws));
  }
  const double secs = seconds_since(start);
  return {worst_toy < 1e-4 && worst_static < 1e-4 && secs < 120.0,
          fmt("max relative error toy %.3e, static %.3e over 10 seeds (%zu draw(s) "
              "straddling a kink redrawn), %.2fs",
              worst_toy, worst_static, redraws, secs)};
}

Verdict hand_values() {
  Matrix rows(2, 2);
  rows(0, 0) = 0.5;
  rows(0, 1) = 0.5;
  rows(1, 0) = 0.9;
  rows(1, 1) = 0.1;
  const double skl = skl_matrix(rows).at(0, 1);

  ScoreMap one(1, 1, 1.0);
  const double anchor = soft_anchors(one, 4.0, 0.5).values[0];

  std::vector<ScoreMap> uniform(4, ScoreMap(4, 4, 0.5));
  const double h = entropy_loss({uniform}, identity_augment(4, 1));

  const bool ok = std::abs(skl - 0.8789) <= 1e-4 && std::abs(anchor - 0.8808) <= 1e-4 &&
                  std::abs(h - std::log(4.0)) <= 1e-9;
  return {ok, fmt("skl %.6f (0.8789), anchor %.6f (0.8808), entropy %.12f (log 4 = %.12f)", skl,
                  anchor, h, std::log(4.0))};
}

double fixture_miou(const ToyBackend& backend, const ClassMaps& maps) {
  const std::size_t side = backend.scene().side;
  const LabelGrid pred = predict_mask(maps, side, side);
  const auto truth = backend.truth_labels(side);
  ConfusionMatrix conf(maps.count());
  conf.accumulate(pred.labels, truth);
  return miou(conf);
}

InversionResult fixture_run(const ToyBackend& backend, double alpha) {
  InversionConfig config;
  config.seed = backend.scene().seed;
  config.alpha = alpha;
  return invert_prompt(backend, config);
}

bool moving_average_non_increasing(const std::vector<double>& v, std::size_t window) {
  for (std::size_t i = window; i < v.size(); ++i) {
    double prev = 0.0, next = 0.0;
    for (std::size_t j = 0; j < window; ++j) {
      prev += v[i - window + j];
      next += v[i - window + 1 + j];
    }
    if (next > prev) return false;
  }
  return true;
}

Verdict inversion_efficacy() {
  const auto start = Clock::now();
  const ToyBackend backend =
      make_fixture_backend(parse_fixture_spec("blobs=2,side=32,noise=0.3,seed=2"));
  const InversionResult r = fixture_run(backend, 1.0);
  const double secs = seconds_since(start);
  std::vector<double> eval;
  for (const auto& l : r.eval_trace) eval.push_back(l.total);
  const double base = fixture_miou(backend, r.baseline);
  const double final = fixture_miou(backend, r.final_maps);
  const bool decreased = !eval.empty() && eval.back() < eval.front();
  const bool smooth = moving_average_non_increasing(eval, 5);
  const bool ok = !r.aborted && decreased && smooth && final - base >= 0.03 && final >= 0.90 &&
                  secs < 60.0;
  return {ok, fmt("loss %.4f -> %.4f, 5-step average non-increasing %s, mIoU %.4f -> %.4f "
                  "(gain %.4f), %.2fs",
                  eval.empty() ? 0.0 : eval.front(), eval.empty() ? 0.0 : eval.back(),
                  smooth ? "yes" : "no", base, final, final - base, secs)};
}

Verdict entropy_ablation() {
  const auto start = Clock::now();
  double with = 0.0, without = 0.0;
  int identical = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const ToyBackend backend = make_fixture_backend(
        parse_fixture_spec("blobs=2,side=32,noise=0.3,seed=" + std::to_string(seed)));
    const ClassMaps a1 = fixture_run(backend, 1.0).final_maps;
    const ClassMaps a0 = fixture_run(backend, 0.0).final_maps;
    with += fixture_miou(backend, a1);
    without += fixture_miou(backend, a0);
    identical += predict_mask(a1, 32, 32).labels == predict_mask(a0, 32, 32).labels;
  }
  with /= 10.0;
  without /= 10.0;
  return {with - without >= 0.0,
          fmt("mean mIoU alpha=1 %.6f, alpha=0 %.6f, difference %+.6f, identical masks on "
              "%d/10 seeds, %.2fs",
              with, without, with - without, identical, seconds_since(start))};
}

Verdict skl_performance() {
  // Measured in a child so the peak resident size covers only this workload.
  int fds[2];
  if (pipe(fds) != 0) return {false, "pipe failed"};
  const pid_t pid = fork();
  if (pid < 0) return {false, "fork failed"};
  if (pid == 0) {
    close(fds[0]);
    Rng rng(4096);
    const Matrix a = random_stochastic(rng, 4096, 4096, 2.0);
    const auto start = Clock::now();
    const DistanceMatrix s = skl_matrix(a);
    const double secs = seconds_since(start);
    // Spot-check a few entries against the pairwise definition.
    double err = 0.0;
    for (std::size_t k = 0; k < 8; ++k) {
      const std::size_t p = static_cast<std::size_t>(rng.uniform_int(0, 4095));
      const std::size_t q = static_cast<std::size_t>(rng.uniform_int(0, 4095));
      double ref = 0.0;
      for (std::size_t m = 0; m < 4096; ++m) {
        const double x = std::max(a(p, m), 1e-12), y = std::max(a(q, m), 1e-12);
        ref += (x - y) * (std::log(x) - std::log(y));
      }
      err = std::max(err, rel_error(s.at(p, q), ref));
    }
    const double payload[2] = {secs, err};
    [[maybe_unused]] const auto n = write(fds[1], payload, sizeof payload);
    _exit(0);
  }
  close(fds[1]);
  double payload[2] = {-1.0, -1.0};
  const auto got = read(fds[0], payload, sizeof payload);
  close(fds[0]);
  int status = 0;
  struct rusage usage {};
  wait4(pid, &status, 0, &usage);
  if (got != sizeof payload || !WIFEXITED(status) || WEXITSTATUS(status) != 0)
    return {false, "benchmark child failed"};
  // Peak includes the input matrix.
  const double peak_mb = static_cast<double>(usage.ru_maxrss) / 1024.0;
  const int threads = kernel_threads();
  return {payload[0] < 60.0 && peak_mb < 512.0 && payload[1] < 1e-4,
          fmt("HW=4096 in %.2fs on %d thread(s), peak RSS %.1f MB, spot-check relative "
              "error %.2e",
              payload[0], threads, peak_mb, payload[1])};
}

Verdict determinism() {
  TempDir dir("determinism");
  std::vector<std::vector<std::uint8_t>> traces, masks;
  const ToyBackend backend =
      make_fixture_backend(parse_fixture_spec("blobs=3,side=32,noise=0.3,seed=5"));
  for (int run = 0; run < 2; ++run) {
    InversionConfig config;
    config.seed = 11;
    const InversionResult r = invert_prompt(backend, config);
    std::string csv;
    char line[256];
    for (std::size_t i = 0; i < r.trace.size(); ++i) {
      std::snprintf(line, sizeof line, "%zu,%d,%a,%a,%a\n", r.trace[i].step,
                    r.trace[i].timestep, r.trace[i].loss.cluster, r.trace[i].loss.entropy,
                    r.trace[i].loss.total);
      csv += line;
    }
    traces.emplace_back(csv.begin(), csv.end());
    const auto png = dir / ("mask" + std::to_string(run) + ".png");
    write_label_png(png, predict_mask(r.final_maps, 32, 32));
    masks.push_back(read_bytes(png));
  }
  const bool ok = traces[0] == traces[1] && masks[0] == masks[1] && !traces[0].empty();
  return {ok, fmt("trace %zu bytes %s, mask %zu bytes %s", traces[0].size(),
                  traces[0] == traces[1] ? "identical" : "differ", masks[0].size(),
                  masks[0] == masks[1] ? "identical" : "differ")};
}

Verdict bundle_format() {
  TempDir dir("fuzz");
  const auto seed_manifest = write_seed_bundle(dir / "seed");
  std::size_t rejected = 0;
  std::string first_miss;
  Rng rng(0xf0220);
  for (std::size_t i = 0; i < 1000; ++i) {
    const int kind = static_cast<int>(i % kMutationKinds);
    const auto case_dir = dir / ("case" + std::to_string(i));
    const FuzzCase fc = make_fuzz_case(seed_manifest, case_dir, kind, rng);
    const FuzzOutcome out = load_fuzz_case(fc);
    if (out.rejected) {
      ++rejected;
    } else if (first_miss.empty()) {
      first_miss = fmt("case %zu (%s): %s", i, mutation_name(kind), out.detail.c_str());
    }
    std::filesystem::remove_all(case_dir);
  }

  // Round trip: load, save, load again; tensors and metadata bit-exact.
  const AttentionBundle a = load_bundle(seed_manifest);
  save_bundle(a, dir / "copy" / "bundle.json");
  const AttentionBundle b = load_bundle(dir / "copy" / "bundle.json");
  bool same = a.tokens == b.tokens && a.image_height == b.image_height &&
              a.image_width == b.image_width && a.background_class == b.background_class &&
              a.levels.size() == b.levels.size();
  for (std::size_t l = 0; same && l < a.levels.size(); ++l) {
    const auto& la = a.levels[l];
    const auto& lb = b.levels[l];
    same = la.side == lb.side && la.self_layers.size() == lb.self_layers.size() &&
           la.cross_layers.size() == lb.cross_layers.size();
    for (std::size_t k = 0; same && k < la.self_layers.size(); ++k)
      same = la.self_layers[k].values.data == lb.self_layers[k].values.data;
    for (std::size_t k = 0; same && k < la.cross_layers.size(); ++k)
      same = la.cross_layers[k].values.data == lb.cross_layers[k].values.data;
  }
  bool files_same = true;
  for (const auto& entry : std::filesystem::directory_iterator(dir / "seed"))
    files_same = files_same && read_bytes(entry.path()) ==
                                   read_bytes(dir / "copy" / entry.path().filename());
  const bool ok = rejected == 1000 && same && files_same;
  return {ok, fmt("%zu/1000 corrupted bundles rejected with structured errors; round trip %s%s%s",
                  rejected, same && files_same ? "bit-exact" : "differs",
                  first_miss.empty() ? "" : "; first miss ", first_miss.c_str())};
}

Verdict metrics_oracle() {
  struct Case {
    std::size_t classes;
    std::vector<std::int32_t> truth, pred;
    double miou, macc;
  };
  // Confusion matrices (rows truth, columns prediction):
  //   [[2,1],[1,2]]
  //   [[3,1,0],[0,4,0],[0,0,0]] with class 2 absent everywhere
  //   [[1,0,1],[0,0,0],[0,0,2]] plus two ignored pixels
  const std::vector<Case> cases = {
      {2, {0, 0, 0, 1, 1, 1}, {0, 0, 1, 0, 1, 1}, (0.5 + 0.5) / 2.0, (2.0 / 3 + 2.0 / 3) / 2.0},
      {3, {0, 0, 0, 0, 1, 1, 1, 1}, {0, 0, 0, 1, 1, 1, 1, 1}, (0.75 + 0.8) / 2.0,
       (0.75 + 1.0) / 2.0},
      {3, {0, 0, 2, 2, 255, 255}, {0, 2, 2, 2, 1, 0}, (0.5 + 2.0 / 3) / 2.0, (0.5 + 1.0) / 2.0},
  };
  std::string detail;
  bool ok = true;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const Case& c = cases[i];
    ConfusionMatrix conf(c.classes);
    conf.accumulate(c.pred, c.truth);
    const double mi = miou(conf), ma = macc(conf);
    ok = ok && mi == c.miou && ma == c.macc;
    detail += fmt("%s#%zu mIoU %.6f mAcc %.6f", i ? ", " : "", i + 1, mi, ma);
  }
  return {ok, detail + (ok ? " (exact)" : " (mismatch)")};
}

}  // namespace

int main() {
  report("oracle-equivalence", oracle_equivalence);
  report("gradient-check", gradient_check);
  report("hand-values", hand_values);
  report("inversion-efficacy", inversion_efficacy);
  report("entropy-ablation", entropy_ablation);
  report("skl-performance", skl_performance);
  report("determinism", determinism);
  report("bundle-format", bundle_format);
  report("metrics-oracle", metrics_oracle);
  std::printf("%d criterion(s) failed\n", g_failures);
  return g_failures == 0 ? 0 : 1;
}
