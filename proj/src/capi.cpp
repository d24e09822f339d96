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

#include "invseg/invseg.h"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <new>
#include <optional>
#include <string>

#include "invseg/backend.hpp"
#include "invseg/error.hpp"
#include "invseg/io.hpp"
#include "invseg/linalg.hpp"
#include "invseg/metrics.hpp"
#include "invseg/optim.hpp"
#include "invseg/reference.hpp"
#include "invseg/segment.hpp"

struct invseg_bundle {
  invseg::AttentionBundle bundle;
};

struct invseg_backend {
  std::unique_ptr<invseg::Backend> backend;
};

struct invseg_result {
  invseg::InversionResult inversion;
  invseg::MaskOrder order = invseg::MaskOrder::kResizeThenArgmax;
  std::size_t height = 0;
  std::size_t width = 0;
};

namespace {

using invseg::Error;
using invseg::ErrorCode;

thread_local std::string g_last_error;

invseg_status to_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return INVSEG_ERR_INVALID_ARGUMENT;
    case ErrorCode::kFormat: return INVSEG_ERR_FORMAT;
    case ErrorCode::kValidation: return INVSEG_ERR_VALIDATION;
    case ErrorCode::kState: return INVSEG_ERR_STATE;
    case ErrorCode::kNonFinite: return INVSEG_ERR_NON_FINITE;
    case ErrorCode::kUndefinedMetric: return INVSEG_ERR_UNDEFINED_METRIC;
    case ErrorCode::kIo: return INVSEG_ERR_IO;
  }
  return INVSEG_ERR_INTERNAL;
}

invseg_status fail(invseg_status status, const std::string& message) {
  g_last_error = message;
  return status;
}

template <typename F>
invseg_status guarded(F&& body) {
  try {
    g_last_error.clear();
    return body();
  } catch (const Error& e) {
    return fail(to_status(e.code()), e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(INVSEG_ERR_IO, e.what());
  } catch (const std::bad_alloc&) {
    return fail(INVSEG_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(INVSEG_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(INVSEG_ERR_INTERNAL, "unknown failure");
  }
}

void require(bool condition, const char* message) {
  if (!condition) invseg::throw_invalid(message);
}

invseg::AggregationWeights weights_from(const invseg_run_options& o) {
  if (o.resolution_count == 0) return invseg::AggregationWeights::one_hot(16);
  require(o.resolutions != nullptr, "resolutions pointer is null");
  std::vector<std::pair<std::size_t, double>> entries;
  for (std::size_t i = 0; i < o.resolution_count; ++i) {
    const double w = o.resolution_weights != nullptr
                         ? o.resolution_weights[i]
                         : 1.0 / static_cast<double>(o.resolution_count);
    entries.emplace_back(o.resolutions[i], w);
  }
  return invseg::AggregationWeights(std::move(entries));
}

invseg::InversionConfig config_from(const invseg_run_options& o) {
  invseg::InversionConfig c;
  c.steps = o.steps;
  c.lr = o.lr;
  c.alpha = o.alpha;
  c.anchor_scale = o.anchor_scale;
  c.anchor_center = o.anchor_center;
  c.views = o.views;
  c.crop_min = o.crop_min;
  c.t_min = o.t_min;
  c.t_max = o.t_max;
  c.infer_timestep = o.infer_timestep;
  c.seed = o.seed;
  c.weights = weights_from(o);
  c.pairing = o.symmetric_inter ? invseg::InterPairing::kSymmetric
                                : invseg::InterPairing::kOrdered;
  c.normalize_entropy = o.normalize_entropy != 0;
  invseg::validate_inversion_config(c);
  return c;
}

invseg_loss loss_of(const invseg::LossBreakdown& l) {
  return {l.cluster, l.entropy, l.total, l.intra, l.inter};
}

const invseg::ClassMaps& maps_of(const invseg_result* r, bool baseline) {
  return baseline ? r->inversion.baseline : r->inversion.final_maps;
}

}  // namespace

extern "C" {

const char* invseg_last_error(void) { return g_last_error.c_str(); }

const char* invseg_status_name(invseg_status status) {
  switch (status) {
    case INVSEG_OK: return "ok";
    case INVSEG_ERR_INVALID_ARGUMENT: return "invalid-argument";
    case INVSEG_ERR_VALIDATION: return "validation";
    case INVSEG_ERR_NON_FINITE: return "non-finite";
    case INVSEG_ERR_FORMAT: return "format";
    case INVSEG_ERR_IO: return "io";
    case INVSEG_ERR_STATE: return "state";
    case INVSEG_ERR_UNDEFINED_METRIC: return "undefined-metric";
    case INVSEG_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

const char* invseg_version(void) { return "0.1.0"; }

void invseg_set_threads(int threads) { invseg::set_kernel_threads(threads); }

invseg_status invseg_bundle_load(const char* manifest_path, invseg_bundle** out) {
  return guarded([&] {
    require(manifest_path != nullptr && out != nullptr, "null argument");
    *out = nullptr;
    auto b = std::make_unique<invseg_bundle>();
    b->bundle = invseg::load_bundle(manifest_path);
    *out = b.release();
    return INVSEG_OK;
  });
}

invseg_status invseg_bundle_save(const invseg_bundle* bundle, const char* manifest_path) {
  return guarded([&] {
    require(bundle != nullptr && manifest_path != nullptr, "null argument");
    invseg::save_bundle(bundle->bundle, manifest_path);
    return INVSEG_OK;
  });
}

invseg_status invseg_bundle_class_count(const invseg_bundle* bundle, size_t* out) {
  return guarded([&] {
    require(bundle != nullptr && out != nullptr, "null argument");
    *out = bundle->bundle.class_count();
    return INVSEG_OK;
  });
}

void invseg_bundle_free(invseg_bundle* bundle) { delete bundle; }

invseg_status invseg_validate(const char* manifest_path) {
  return guarded([&] {
    require(manifest_path != nullptr, "null argument");
    (void)invseg::load_bundle(manifest_path);
    return INVSEG_OK;
  });
}

invseg_status invseg_fixture_write(const char* fixture_spec, const char* manifest_path,
                                   const char* gt_path) {
  return guarded([&] {
    require(fixture_spec != nullptr && manifest_path != nullptr, "null argument");
    const invseg::Fixture f = invseg::synth_fixture(invseg::parse_fixture_spec(fixture_spec));
    invseg::save_bundle(f.bundle, manifest_path);
    if (gt_path != nullptr) invseg::write_label_png(gt_path, f.truth);
    return INVSEG_OK;
  });
}

void invseg_run_options_default(invseg_run_options* options) {
  if (options == nullptr) return;
  const invseg::InversionConfig c;
  std::memset(options, 0, sizeof(*options));
  options->steps = c.steps;
  options->lr = c.lr;
  options->alpha = c.alpha;
  options->anchor_scale = c.anchor_scale;
  options->anchor_center = c.anchor_center;
  options->views = c.views;
  options->crop_min = c.crop_min;
  options->t_min = c.t_min;
  options->t_max = c.t_max;
  options->infer_timestep = c.infer_timestep;
  options->seed = c.seed;
  options->normalize_entropy = 1;
}

invseg_status invseg_backend_create_toy(const char* fixture_spec,
                                        const invseg_run_options* options,
                                        invseg_backend** out) {
  return guarded([&] {
    require(fixture_spec != nullptr && options != nullptr && out != nullptr,
            "null argument");
    *out = nullptr;
    invseg::FixtureSpec spec = invseg::parse_fixture_spec(fixture_spec);
    if (options->grid_side != 0) spec.grid_side = options->grid_side;
    spec.resolutions.clear();
    const invseg::AggregationWeights weights = weights_from(*options);
    for (const auto& entry : weights.entries()) spec.resolutions.push_back(entry.first);
    auto h = std::make_unique<invseg_backend>();
    h->backend = std::make_unique<invseg::ToyBackend>(invseg::make_fixture_backend(spec));
    *out = h.release();
    return INVSEG_OK;
  });
}

invseg_status invseg_backend_create_static(const invseg_bundle* bundle,
                                           const invseg_run_options* options,
                                           invseg_backend** out) {
  return guarded([&] {
    require(bundle != nullptr && options != nullptr && out != nullptr, "null argument");
    *out = nullptr;
    invseg::BackendConfig config;
    config.kind = invseg::BackendKind::kStatic;
    config.grid_side = options->grid_side != 0 ? options->grid_side : 64;
    config.seed = options->seed;
    auto h = std::make_unique<invseg_backend>();
    h->backend = std::make_unique<invseg::StaticBackend>(bundle->bundle, config);
    *out = h.release();
    return INVSEG_OK;
  });
}

void invseg_backend_free(invseg_backend* backend) { delete backend; }

invseg_status invseg_run(const invseg_backend* backend, const invseg_run_options* options,
                         invseg_result** out) {
  return guarded([&] {
    require(backend != nullptr && options != nullptr && out != nullptr, "null argument");
    *out = nullptr;
    const invseg::InversionConfig config = config_from(*options);
    auto r = std::make_unique<invseg_result>();
    r->inversion = invseg::invert_prompt(*backend->backend, config);
    r->order = options->argmax_then_resize ? invseg::MaskOrder::kArgmaxThenNearest
                                           : invseg::MaskOrder::kResizeThenArgmax;
    std::tie(r->height, r->width) = backend->backend->image_dims();
    const bool aborted = r->inversion.aborted;
    const std::string diagnostic = r->inversion.diagnostic;
    *out = r.release();
    if (aborted) return fail(INVSEG_ERR_NON_FINITE, diagnostic);
    return INVSEG_OK;
  });
}

void invseg_result_free(invseg_result* result) { delete result; }

size_t invseg_result_trace_length(const invseg_result* result) {
  return result == nullptr ? 0 : result->inversion.trace.size();
}

invseg_status invseg_result_trace_entry(const invseg_result* result, size_t index,
                                        invseg_trace_entry* out) {
  return guarded([&] {
    require(result != nullptr && out != nullptr, "null argument");
    const auto& inv = result->inversion;
    require(index < inv.trace.size(), "trace index out of range");
    out->step = inv.trace[index].step;
    out->timestep = inv.trace[index].timestep;
    out->train = loss_of(inv.trace[index].loss);
    out->eval = index + 1 < inv.eval_trace.size() ? loss_of(inv.eval_trace[index + 1])
                                                  : invseg_loss{};
    return INVSEG_OK;
  });
}

invseg_status invseg_result_initial_eval(const invseg_result* result, invseg_loss* out) {
  return guarded([&] {
    require(result != nullptr && out != nullptr, "null argument");
    if (result->inversion.eval_trace.empty())
      throw Error(ErrorCode::kState, "no evaluation recorded (zero steps)");
    *out = loss_of(result->inversion.eval_trace.front());
    return INVSEG_OK;
  });
}

int invseg_result_aborted(const invseg_result* result) {
  return result != nullptr && result->inversion.aborted ? 1 : 0;
}

const char* invseg_result_diagnostic(const invseg_result* result) {
  return result == nullptr ? "" : result->inversion.diagnostic.c_str();
}

size_t invseg_result_class_count(const invseg_result* result) {
  return result == nullptr ? 0 : result->inversion.final_maps.count();
}

void invseg_result_image_dims(const invseg_result* result, size_t* height, size_t* width) {
  if (height != nullptr) *height = result == nullptr ? 0 : result->height;
  if (width != nullptr) *width = result == nullptr ? 0 : result->width;
}

invseg_status invseg_result_mask(const invseg_result* result, int baseline, int32_t* labels,
                                 size_t count) {
  return guarded([&] {
    require(result != nullptr && labels != nullptr, "null argument");
    require(count == result->height * result->width, "label buffer size mismatch");
    const invseg::LabelGrid grid = invseg::predict_mask(
        maps_of(result, baseline != 0), result->height, result->width, result->order);
    std::copy(grid.labels.begin(), grid.labels.end(), labels);
    return INVSEG_OK;
  });
}

invseg_status invseg_result_write_mask_png(const invseg_result* result, const char* path) {
  return guarded([&] {
    require(result != nullptr && path != nullptr, "null argument");
    invseg::write_label_png(path, invseg::predict_mask(result->inversion.final_maps,
                                                       result->height, result->width,
                                                       result->order));
    return INVSEG_OK;
  });
}

invseg_status invseg_result_write_trace_csv(const invseg_result* result, const char* path) {
  return guarded([&] {
    require(result != nullptr && path != nullptr, "null argument");
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, std::string("cannot write '") + path + "'");
    out << std::setprecision(17);
    out << "step,timestep,cluster,entropy,total,intra,inter,eval_cluster,eval_entropy,"
           "eval_total\n";
    const auto& inv = result->inversion;
    auto row = [&](const std::string& step, const std::string& t,
                   const invseg::LossBreakdown* train, const invseg::LossBreakdown& eval) {
      out << step << ',' << t << ',';
      if (train != nullptr) {
        out << train->cluster << ',' << train->entropy << ',' << train->total << ','
            << train->intra << ',' << train->inter << ',';
      } else {
        out << ",,,,,";
      }
      out << eval.cluster << ',' << eval.entropy << ',' << eval.total << '\n';
    };
    // The initial row carries only the pre-update evaluation.
    if (!inv.eval_trace.empty()) row("init", "", nullptr, inv.eval_trace.front());
    for (std::size_t i = 0; i < inv.trace.size(); ++i) {
      const invseg::LossBreakdown empty;
      const auto& eval = i + 1 < inv.eval_trace.size() ? inv.eval_trace[i + 1] : empty;
      row(std::to_string(inv.trace[i].step), std::to_string(inv.trace[i].timestep),
          &inv.trace[i].loss, eval);
    }
    if (!out) throw Error(ErrorCode::kIo, std::string("write failed for '") + path + "'");
    return INVSEG_OK;
  });
}

invseg_status invseg_result_write_maps(const invseg_result* result, const char* dir) {
  return guarded([&] {
    require(result != nullptr && dir != nullptr, "null argument");
    const std::filesystem::path root(dir);
    std::filesystem::create_directories(root);
    auto emit = [&](const invseg::ClassMaps& maps, const char* prefix) {
      for (std::size_t c = 0; c < maps.count(); ++c) {
        std::string name = maps.names[c];
        for (char& ch : name)
          if (!std::isalnum(static_cast<unsigned char>(ch))) ch = '_';
        invseg::write_tensor(root / (std::string(prefix) + "_" + std::to_string(c) + "_" +
                                     name + ".atnb"),
                             invseg::map_tensor(maps.maps[c]));
      }
    };
    emit(result->inversion.final_maps, "final");
    emit(result->inversion.baseline, "baseline");
    return INVSEG_OK;
  });
}

invseg_status invseg_read_labels(const char* path, size_t* height, size_t* width,
                                 int32_t* labels, size_t capacity) {
  return guarded([&] {
    require(path != nullptr && height != nullptr && width != nullptr, "null argument");
    const invseg::LabelGrid grid = invseg::read_label_grid(path);
    *height = grid.height;
    *width = grid.width;
    if (labels != nullptr) {
      require(capacity >= grid.labels.size(), "label buffer too small");
      std::copy(grid.labels.begin(), grid.labels.end(), labels);
    }
    return INVSEG_OK;
  });
}

invseg_status invseg_metrics(const int32_t* predicted, const int32_t* truth, size_t count,
                             size_t classes, int32_t ignore_label, double* miou,
                             double* macc) {
  return guarded([&] {
    require((predicted != nullptr && truth != nullptr) || count == 0, "null label array");
    invseg::ConfusionMatrix conf(classes);
    conf.accumulate(std::span(predicted, count), std::span(truth, count), ignore_label);
    if (miou != nullptr) *miou = invseg::miou(conf);
    if (macc != nullptr) *macc = invseg::macc(conf);
    return INVSEG_OK;
  });
}

invseg_status invseg_oracle(const char* fixture_spec, uint64_t augment_seed,
                            invseg_oracle_report* out) {
  return guarded([&] {
    require(fixture_spec != nullptr && out != nullptr, "null argument");
    const invseg::FixtureSpec spec = invseg::parse_fixture_spec(fixture_spec);
    const invseg::ToyBackend backend = invseg::make_fixture_backend(spec);
    const invseg::InversionConfig config;
    const auto weights =
        invseg::AggregationWeights::one_hot(spec.resolutions.front());
    const int t = spec.timesteps.front();
    const auto params = backend.init_params();
    const std::size_t g = backend.grid_side();

    const invseg::Matrix a_self = invseg::working_self_attention(backend, params, t, weights);
    const invseg::DistanceMatrix s = invseg::skl_matrix(a_self);
    const auto s_ref = invseg::reference::skl(a_self);
    double max_abs = 0.0, max_ref = 0.0;
    for (std::size_t p = 0; p < s.size(); ++p) {
      for (std::size_t q = 0; q < s.size(); ++q) {
        max_abs = std::max(max_abs, std::abs(static_cast<double>(s.at(p, q)) - s_ref[p][q]));
        max_ref = std::max(max_ref, std::abs(s_ref[p][q]));
      }
    }

    const invseg::ClassMaps maps = invseg::infer_class_maps(backend, params, t, weights);
    invseg::reference::Grid grid_maps;
    for (const auto& m : maps.maps) grid_maps.push_back(m.values);
    const double scale = config.anchor_scale, center = config.anchor_center;

    const invseg::AugmentSpec aug =
        invseg::random_augment(g, config.views, config.crop_min, augment_seed);
    std::vector<std::vector<invseg::ScoreMap>> per_view;
    std::vector<invseg::reference::Grid> per_view_ref;
    for (std::size_t v = 0; v < aug.views(); ++v) {
      per_view.push_back(invseg::apply_augment(maps.maps, aug, v));
      invseg::reference::Grid gv;
      for (const auto& m : per_view.back()) gv.push_back(m.values);
      per_view_ref.push_back(std::move(gv));
    }
    const invseg::LossBreakdown total =
        invseg::total_loss(s, per_view, aug, config.loss_options());

    out->pixels = s.size();
    out->classes = maps.count();
    out->skl_max_rel_error = max_ref > 0.0 ? max_abs / max_ref : max_abs;
    out->d_intra = invseg::d_intra(s, maps, scale, center);
    out->d_intra_ref = invseg::reference::d_intra(s_ref, grid_maps, scale, center);
    out->d_inter = invseg::d_inter(s, maps, scale, center);
    out->d_inter_ref = invseg::reference::d_inter(s_ref, grid_maps, scale, center);
    out->cluster = invseg::cluster_loss(s, maps, scale, center);
    out->cluster_ref = invseg::reference::cluster(s_ref, grid_maps, scale, center);
    out->entropy = invseg::entropy_loss(per_view, aug);
    out->entropy_ref = invseg::reference::entropy(per_view_ref, aug.windows, g);
    out->total = total.total;
    out->total_ref = invseg::reference::total(s_ref, per_view_ref, aug.windows, g,
                                              config.alpha, scale, center);
    return INVSEG_OK;
  });
}

}  // extern "C"
