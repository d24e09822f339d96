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

// Command-line front end. Uses only the C API.

#include <cstdint>
#include <cstdio>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "invseg/invseg.h"

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitValidation = 2;
constexpr int kExitNonFinite = 3;

int exit_code(invseg_status status) {
  switch (status) {
    case INVSEG_OK: return 0;
    case INVSEG_ERR_INVALID_ARGUMENT:
    case INVSEG_ERR_VALIDATION:
    case INVSEG_ERR_FORMAT: return kExitValidation;
    case INVSEG_ERR_NON_FINITE: return kExitNonFinite;
    default: return kExitFailure;
  }
}

int report(invseg_status status, const std::string& context) {
  std::fprintf(stderr, "invseg: %s: %s: %s\n", context.c_str(), invseg_status_name(status),
               invseg_last_error());
  return exit_code(status);
}

struct BundleDeleter {
  void operator()(invseg_bundle* p) const { invseg_bundle_free(p); }
};
struct BackendDeleter {
  void operator()(invseg_backend* p) const { invseg_backend_free(p); }
};
struct ResultDeleter {
  void operator()(invseg_result* p) const { invseg_result_free(p); }
};

// "16" or "16,32" (uniform) or "16:0.7,32:0.3".
bool parse_resolutions(const std::string& text, std::vector<size_t>& sides,
                       std::vector<double>& weights, bool& explicit_weights) {
  sides.clear();
  weights.clear();
  explicit_weights = false;
  bool any_plain = false;
  for (const std::string& item : CLI::detail::split(text, ',')) {
    const std::string entry = CLI::detail::trim_copy(item);
    if (entry.empty()) return false;
    const auto colon = entry.find(':');
    try {
      std::size_t used = 0;
      const unsigned long side = std::stoul(entry.substr(0, colon), &used);
      if (used != (colon == std::string::npos ? entry.size() : colon)) return false;
      sides.push_back(side);
      if (colon == std::string::npos) {
        any_plain = true;
        weights.push_back(0.0);
      } else {
        explicit_weights = true;
        const std::string w = entry.substr(colon + 1);
        weights.push_back(std::stod(w, &used));
        if (used != w.size()) return false;
      }
    } catch (const std::exception&) {
      return false;
    }
  }
  if (explicit_weights && any_plain) return false;
  return !sides.empty();
}

bool parse_range(const std::string& text, int& lo, int& hi) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) return false;
  try {
    std::size_t a = 0, b = 0;
    lo = std::stoi(text.substr(0, colon), &a);
    hi = std::stoi(text.substr(colon + 1), &b);
    return a == colon && b == text.size() - colon - 1;
  } catch (const std::exception&) {
    return false;
  }
}

struct RunArgs {
  std::string backend = "toy";
  std::string bundle;
  std::string fixture = "blobs=2,side=32,noise=0.3,seed=0";
  std::string resolutions = "16";
  std::string timestep_range = "5:300";
  std::string out_mask;
  std::string gt;
  std::string emit_maps;
  std::string loss_trace;
  std::string mask_order = "resize-argmax";
  std::string pairing = "ordered";
  std::size_t grid = 0;
  int threads = 0;
  bool quiet = false;
  invseg_run_options options{};
};

int print_metrics(const invseg_result* result, const std::string& gt_path) {
  size_t h = 0, w = 0;
  invseg_result_image_dims(result, &h, &w);
  size_t gh = 0, gw = 0;
  invseg_status s = invseg_read_labels(gt_path.c_str(), &gh, &gw, nullptr, 0);
  if (s != INVSEG_OK) return report(s, "reading ground truth");
  if (gh != h || gw != w) {
    std::fprintf(stderr, "invseg: ground truth is %zux%zu but the mask is %zux%zu\n", gh, gw, h,
                 w);
    return kExitValidation;
  }
  std::vector<int32_t> truth(h * w), pred(h * w), base(h * w);
  s = invseg_read_labels(gt_path.c_str(), &gh, &gw, truth.data(), truth.size());
  if (s != INVSEG_OK) return report(s, "reading ground truth");
  const size_t classes = invseg_result_class_count(result);
  for (int baseline = 1; baseline >= 0; --baseline) {
    std::vector<int32_t>& labels = baseline ? base : pred;
    s = invseg_result_mask(result, baseline, labels.data(), labels.size());
    if (s != INVSEG_OK) return report(s, "computing mask");
    double miou = 0.0, macc = 0.0;
    s = invseg_metrics(labels.data(), truth.data(), labels.size(), classes, 255, &miou, &macc);
    if (s != INVSEG_OK) return report(s, "computing metrics");
    std::printf("%s mIoU %.4f mAcc %.4f\n", baseline ? "baseline" : "inverted", miou, macc);
  }
  return 0;
}

int run_command(RunArgs& args) {
  invseg_run_options& o = args.options;
  std::vector<size_t> sides;
  std::vector<double> weights;
  bool explicit_weights = false;
  if (!parse_resolutions(args.resolutions, sides, weights, explicit_weights)) {
    std::fprintf(stderr, "invseg: malformed --resolutions '%s'\n", args.resolutions.c_str());
    return kExitValidation;
  }
  o.resolutions = sides.data();
  o.resolution_weights = explicit_weights ? weights.data() : nullptr;
  o.resolution_count = sides.size();
  if (!parse_range(args.timestep_range, o.t_min, o.t_max)) {
    std::fprintf(stderr, "invseg: malformed --timestep-range '%s'\n",
                 args.timestep_range.c_str());
    return kExitValidation;
  }
  o.grid_side = args.grid;
  o.argmax_then_resize = args.mask_order == "argmax-nearest";
  o.symmetric_inter = args.pairing == "symmetric";
  if (args.threads > 0) invseg_set_threads(args.threads);

  invseg_backend* raw_backend = nullptr;
  invseg_status s = INVSEG_OK;
  if (args.backend == "toy") {
    s = invseg_backend_create_toy(args.fixture.c_str(), &o, &raw_backend);
  } else {
    if (args.bundle.empty()) {
      std::fprintf(stderr, "invseg: --backend static requires --bundle\n");
      return kExitValidation;
    }
    invseg_bundle* raw_bundle = nullptr;
    s = invseg_bundle_load(args.bundle.c_str(), &raw_bundle);
    if (s != INVSEG_OK) return report(s, "loading bundle");
    std::unique_ptr<invseg_bundle, BundleDeleter> bundle(raw_bundle);
    s = invseg_backend_create_static(bundle.get(), &o, &raw_backend);
  }
  if (s != INVSEG_OK) return report(s, "creating backend");
  std::unique_ptr<invseg_backend, BackendDeleter> backend(raw_backend);

  invseg_result* raw_result = nullptr;
  s = invseg_run(backend.get(), &o, &raw_result);
  std::unique_ptr<invseg_result, ResultDeleter> result(raw_result);
  if (s != INVSEG_OK && s != INVSEG_ERR_NON_FINITE) return report(s, "inversion");
  const bool aborted = s == INVSEG_ERR_NON_FINITE;

  // A partial trace is still written on abort; it helps locate the step.
  if (!args.loss_trace.empty()) {
    const invseg_status ts =
        invseg_result_write_trace_csv(result.get(), args.loss_trace.c_str());
    if (ts != INVSEG_OK) return report(ts, "writing loss trace");
  }
  if (aborted) {
    std::fprintf(stderr, "invseg: inversion aborted: %s\n",
                 invseg_result_diagnostic(result.get()));
    return kExitNonFinite;
  }

  if (!args.quiet) {
    invseg_loss initial{};
    if (invseg_result_initial_eval(result.get(), &initial) == INVSEG_OK)
      std::printf("initial total %.6f\n", initial.total);
    const size_t n = invseg_result_trace_length(result.get());
    if (n > 0) {
      invseg_trace_entry last{};
      invseg_result_trace_entry(result.get(), n - 1, &last);
      std::printf("final total %.6f after %zu steps\n", last.eval.total, n);
    }
  }
  if (!args.out_mask.empty()) {
    s = invseg_result_write_mask_png(result.get(), args.out_mask.c_str());
    if (s != INVSEG_OK) return report(s, "writing mask");
  }
  if (!args.emit_maps.empty()) {
    s = invseg_result_write_maps(result.get(), args.emit_maps.c_str());
    if (s != INVSEG_OK) return report(s, "writing maps");
  }
  if (!args.gt.empty()) return print_metrics(result.get(), args.gt);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Test-time prompt inversion for attention-based segmentation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", invseg_version());

  RunArgs run;
  invseg_run_options_default(&run.options);
  auto* run_cmd = app.add_subcommand("run", "invert the class prompts and write a mask");
  run_cmd->add_option("--backend", run.backend, "attention source")
      ->check(CLI::IsMember({"toy", "static"}))
      ->capture_default_str();
  run_cmd->add_option("--bundle", run.bundle, "bundle manifest (static backend)");
  run_cmd->add_option("--fixture", run.fixture, "toy fixture spec")->capture_default_str();
  run_cmd->add_option("--steps", run.options.steps)->capture_default_str();
  run_cmd->add_option("--lr", run.options.lr)->capture_default_str();
  run_cmd->add_option("--alpha", run.options.alpha, "entropy weight")->capture_default_str();
  run_cmd->add_option("--anchor-scale", run.options.anchor_scale)->capture_default_str();
  run_cmd->add_option("--anchor-center", run.options.anchor_center)->capture_default_str();
  run_cmd->add_option("--views", run.options.views)->capture_default_str();
  run_cmd->add_option("--crop-min", run.options.crop_min)->capture_default_str();
  run_cmd->add_option("--resolutions", run.resolutions, "sides, optionally side:weight")
      ->capture_default_str();
  run_cmd->add_option("--timestep-range", run.timestep_range, "lo:hi inclusive")
      ->capture_default_str();
  run_cmd->add_option("--infer-timestep", run.options.infer_timestep)->capture_default_str();
  run_cmd->add_option("--seed", run.options.seed)->capture_default_str();
  run_cmd->add_option("--grid", run.grid, "working grid side (0 = auto)")
      ->capture_default_str();
  run_cmd->add_option("--mask-order", run.mask_order)
      ->check(CLI::IsMember({"resize-argmax", "argmax-nearest"}))
      ->capture_default_str();
  run_cmd->add_option("--pairing", run.pairing, "inter-class pair set")
      ->check(CLI::IsMember({"ordered", "symmetric"}))
      ->capture_default_str();
  run_cmd->add_flag("--no-entropy-normalize{0}", run.options.normalize_entropy,
                    "use raw map values in the entropy term");
  run_cmd->add_option("--threads", run.threads, "kernel threads (0 = default)");
  run_cmd->add_option("--out-mask", run.out_mask, "indexed PNG mask path");
  run_cmd->add_option("--gt", run.gt, "ground-truth labels (PNG or tensor)");
  run_cmd->add_option("--emit-maps", run.emit_maps, "directory for class map tensors");
  run_cmd->add_option("--loss-trace", run.loss_trace, "CSV loss trace path");
  run_cmd->add_flag("--quiet", run.quiet);

  std::string validate_path;
  auto* validate_cmd = app.add_subcommand("validate", "check an attention bundle");
  validate_cmd->add_option("manifest", validate_path)->required();

  std::string oracle_spec;
  std::uint64_t oracle_seed = 0;
  auto* oracle_cmd =
      app.add_subcommand("oracle", "compare the loss kernels with the nested-loop reference");
  oracle_cmd->add_option("fixture", oracle_spec)->required();
  oracle_cmd->add_option("--augment-seed", oracle_seed)->capture_default_str();

  std::string synth_spec, synth_out, synth_gt;
  auto* synth_cmd = app.add_subcommand("synth", "write a toy fixture as a bundle");
  synth_cmd->add_option("fixture", synth_spec)->required();
  synth_cmd->add_option("--out", synth_out, "manifest path")->required();
  synth_cmd->add_option("--gt", synth_gt, "ground-truth PNG path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  if (*run_cmd) return run_command(run);

  if (*validate_cmd) {
    const invseg_status s = invseg_validate(validate_path.c_str());
    // Any rejection of the bundle, including unreadable files, is a
    // validation failure here.
    if (s != INVSEG_OK) {
      const int code = report(s, validate_path);
      return s == INVSEG_ERR_INTERNAL ? code : kExitValidation;
    }
    std::printf("%s: ok\n", validate_path.c_str());
    return 0;
  }

  if (*oracle_cmd) {
    invseg_oracle_report r{};
    const invseg_status s = invseg_oracle(oracle_spec.c_str(), oracle_seed, &r);
    if (s != INVSEG_OK) return report(s, "oracle");
    std::printf("pixels %zu classes %zu\n", r.pixels, r.classes);
    std::printf("%-8s %22s %22s\n", "term", "kernel", "reference");
    std::printf("%-8s %22.15g %22.15g\n", "d_intra", r.d_intra, r.d_intra_ref);
    std::printf("%-8s %22.15g %22.15g\n", "d_inter", r.d_inter, r.d_inter_ref);
    std::printf("%-8s %22.15g %22.15g\n", "cluster", r.cluster, r.cluster_ref);
    std::printf("%-8s %22.15g %22.15g\n", "entropy", r.entropy, r.entropy_ref);
    std::printf("%-8s %22.15g %22.15g\n", "total", r.total, r.total_ref);
    std::printf("skl max relative error %.3e\n", r.skl_max_rel_error);
    return 0;
  }

  if (*synth_cmd) {
    const invseg_status s = invseg_fixture_write(synth_spec.c_str(), synth_out.c_str(),
                                                 synth_gt.empty() ? nullptr : synth_gt.c_str());
    if (s != INVSEG_OK) return report(s, "synth");
    std::printf("wrote %s\n", synth_out.c_str());
    return 0;
  }
  return kExitFailure;
}
