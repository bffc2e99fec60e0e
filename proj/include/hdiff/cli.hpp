#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "hdiff/applications.hpp"
#include "hdiff/exact_backward.hpp"
#include "hdiff/generator.hpp"
#include "hdiff/point_cloud.hpp"
#include "hdiff/score_model.hpp"
#include "hdiff/support.hpp"
#include "hdiff/validation.hpp"

namespace hdiff::cli {

using nlohmann::json;

inline json default_config() {
  return json::parse(R"({
    "seed": 0,
    "threads": 1,
    "process": {"kind": "brownian", "dim": 2, "rate": 0.5, "theta": 1.0, "kernel": "auto", "quad_nodes": 256},
    "forward": {"variant": "constant", "target": null, "radius": 5.0, "kill_radius": 0.05},
    "support": {"epsilon": 0.1},
    "sampling": {"dt": 0.001, "step_cap": 1000000, "start_radius": 0.001, "count": 100, "exact": false},
    "train": {"epochs": 10, "steps_per_epoch": 0, "batch_size": 256, "learning_rate": 0.001,
              "lr_final_fraction": 1.0, "adam_beta1": 0.9, "adam_beta2": 0.999, "adam_eps": 1e-8,
              "grad_clip_norm": 10.0, "hidden": [64, 64], "activation": "tanh",
              "paths_per_point": 64, "corpus_dt": 0.005},
    "simulate": {"start": null, "trace": false},
    "query": {"point": null, "runs": 200, "threshold": null, "calibration_level": 0.99,
              "calibration_probes": 50},
    "validate": {"checks": ["endpoint-constant", "endpoint-bridge", "endpoint-sphere", "control", "ou-approx"],
                 "endpoint_runs": 10000, "endpoint_dt": 0.001, "sphere_dim": 3, "sphere_radius": 5.0,
                 "bridge_distance": 1.5, "control_runs": 5000, "control_dt": 0.001,
                 "control_kill_radius": 0.1, "control_rate": 0.5, "ou_dim": 100, "ou_rate": 0.5},
    "paths": {"dataset": "", "checkpoint": "", "output_dir": "."}
  })");
}

class ConfigError : public Error {
 public:
  using Error::Error;
};

struct RunConfig {
  json raw;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  GreenKernel kernel;
  std::string forward_variant;
  std::optional<Vec> forward_target;
  double sphere_radius = 5.0;
  double kill_radius = 0.05;
  double epsilon = 0.1;
  double dt = 1e-3;
  std::size_t step_cap = kDefaultStepCap;
  double start_radius = kDefaultStartRadius;
  std::size_t count = 100;
  bool exact = false;
  TrainConfig train;
  std::optional<Vec> simulate_start;
  bool trace = false;
  std::optional<Vec> point;
  std::size_t runs = 200;
  std::optional<double> threshold;
  double calibration_level = 0.99;
  std::size_t calibration_probes = 50;
  std::string dataset, checkpoint, output_dir;
};

inline Vec parse_point(const std::string& s) {
  Vec out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("cannot parse point coordinate '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError("empty point");
  return out;
}

// Applies "a.b.c=value"; the value is read as JSON when possible, else as a string.
inline void apply_override(json& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key.path=value: " + assignment);
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json* node = &cfg;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->contains(parts[i]) || !(*node)[parts[i]].is_object()) (*node)[parts[i]] = json::object();
    node = &(*node)[parts[i]];
  }
  (*node)[parts.back()] = value;
}

template <typename T>
T get(const json& j, const char* section, const char* key) {
  try {
    return j.at(section).at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config ") + section + "." + key + ": " + e.what());
  }
}

inline std::optional<Vec> get_point(const json& j, const char* section, const char* key) {
  const json& v = j.at(section).at(key);
  if (v.is_null()) return std::nullopt;
  if (v.is_string()) return parse_point(v.get<std::string>());
  try {
    return v.get<Vec>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config ") + section + "." + key + ": " + e.what());
  }
}

inline RunConfig parse_config(const json& j) {
  RunConfig c;
  c.raw = j;
  try {
    c.seed = j.at("seed").get<std::uint64_t>();
    c.threads = j.at("threads").get<unsigned>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config seed/threads: ") + e.what());
  }
  const auto kind = get<std::string>(j, "process", "kind");
  const auto dim = get<std::size_t>(j, "process", "dim");
  const auto rate = get<double>(j, "process", "rate");
  const auto mode = get<std::string>(j, "process", "kernel");
  if (dim < 1) throw ConfigError("process.dim must be positive");
  if (!(rate > 0.0)) throw ConfigError("process.rate must be positive");
  if (kind == "brownian" || kind == "bm") {
    c.kernel = GreenKernel::brownian(dim, rate);
    if (mode == "quadrature") c.kernel.mode = KernelMode::Quadrature;
    else if (mode != "auto" && mode != "analytic") throw ConfigError("process.kernel must be auto, analytic or quadrature");
  } else if (kind == "ou" || kind == "ornstein-uhlenbeck") {
    if (mode == "analytic") throw ConfigError("the OU kernel has no analytic mode");
    c.kernel = GreenKernel::ornstein_uhlenbeck(dim, rate, get<double>(j, "process", "theta"),
                                               get<int>(j, "process", "quad_nodes"));
  } else {
    throw ConfigError("process.kind must be brownian or ou, got '" + kind + "'");
  }
  try {
    c.kernel.validate();
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }

  c.forward_variant = get<std::string>(j, "forward", "variant");
  c.forward_target = get_point(j, "forward", "target");
  c.sphere_radius = get<double>(j, "forward", "radius");
  c.kill_radius = get<double>(j, "forward", "kill_radius");
  c.epsilon = get<double>(j, "support", "epsilon");
  c.dt = get<double>(j, "sampling", "dt");
  c.step_cap = get<std::size_t>(j, "sampling", "step_cap");
  c.start_radius = get<double>(j, "sampling", "start_radius");
  c.count = get<std::size_t>(j, "sampling", "count");
  c.exact = get<bool>(j, "sampling", "exact");
  if (!(c.epsilon > 0.0)) throw ConfigError("support.epsilon must be positive");
  if (!(c.dt > 0.0)) throw ConfigError("sampling.dt must be positive");
  if (c.step_cap < 1) throw ConfigError("sampling.step_cap must be positive");

  auto& t = c.train;
  t.epochs = get<std::size_t>(j, "train", "epochs");
  t.steps_per_epoch = get<std::size_t>(j, "train", "steps_per_epoch");
  t.batch_size = get<std::size_t>(j, "train", "batch_size");
  t.learning_rate = get<double>(j, "train", "learning_rate");
  t.lr_final_fraction = get<double>(j, "train", "lr_final_fraction");
  t.adam_beta1 = get<double>(j, "train", "adam_beta1");
  t.adam_beta2 = get<double>(j, "train", "adam_beta2");
  t.adam_eps = get<double>(j, "train", "adam_eps");
  t.grad_clip_norm = get<double>(j, "train", "grad_clip_norm");
  t.hidden = get<std::vector<std::size_t>>(j, "train", "hidden");
  t.paths_per_point = get<std::size_t>(j, "train", "paths_per_point");
  t.corpus_dt = get<double>(j, "train", "corpus_dt");
  try {
    t.activation = parse_activation(get<std::string>(j, "train", "activation"));
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  t.seed = c.seed;
  t.threads = c.threads;
  t.bridge_kill_radius = c.kill_radius;
  try {
    t.validate();
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }

  c.simulate_start = get_point(j, "simulate", "start");
  c.trace = get<bool>(j, "simulate", "trace");
  c.point = get_point(j, "query", "point");
  c.runs = get<std::size_t>(j, "query", "runs");
  if (!j.at("query").at("threshold").is_null()) c.threshold = get<double>(j, "query", "threshold");
  c.calibration_level = get<double>(j, "query", "calibration_level");
  c.calibration_probes = get<std::size_t>(j, "query", "calibration_probes");
  c.dataset = get<std::string>(j, "paths", "dataset");
  c.checkpoint = get<std::string>(j, "paths", "checkpoint");
  c.output_dir = get<std::string>(j, "paths", "output_dir");
  for (const auto* p : {&c.simulate_start, &c.point, &c.forward_target})
    if (*p && (*p)->size() != dim)
      throw ConfigError("dimension mismatch: point of size " + std::to_string((*p)->size()) +
                        " but process.dim = " + std::to_string(dim));
  return c;
}

inline HSpec forward_spec(const RunConfig& c) {
  if (c.forward_variant == "constant") return HSpec::constant(c.kernel);
  if (c.forward_variant == "bridge") {
    Vec target = c.forward_target.value_or(Vec(c.kernel.dim(), 0.0));
    return HSpec::bridge(c.kernel, std::move(target), c.kill_radius);
  }
  if (c.forward_variant == "sphere") {
    HSpec s = HSpec::sphere(c.kernel, c.sphere_radius);
    try {
      s.validate();
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
    return s;
  }
  throw ConfigError("forward.variant must be constant, bridge or sphere, got '" + c.forward_variant + "'");
}

inline std::uint32_t variant_tag(const std::string& v) {
  if (v == "constant") return 0;
  if (v == "bridge") return 1;
  return 2;
}

// ---- output helpers -------------------------------------------------------

inline std::filesystem::path output_path(const RunConfig& c, const std::string& name) {
  std::filesystem::create_directories(c.output_dir);
  return std::filesystem::path(c.output_dir) / name;
}

inline std::ofstream open_output(const std::filesystem::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write " + p.string());
  out << std::setprecision(17);
  return out;
}

inline void write_json(const std::filesystem::path& p, const json& j) {
  auto out = open_output(p);
  out << j.dump(2) << '\n';
}

inline void write_row(std::ostream& out, std::span<const double> v) {
  for (std::size_t i = 0; i < v.size(); ++i) out << (i ? "," : "") << v[i];
}

inline void write_header(std::ostream& out, const char* prefix, std::size_t dim) {
  for (std::size_t i = 0; i < dim; ++i) out << (i ? "," : "") << prefix << i;
}

class MetricsLog {
 public:
  MetricsLog(const std::filesystem::path& p, std::uint64_t seed) : out_(open_output(p)), seed_(seed) {}
  void event(const std::string& name, std::size_t step, double value) {
    out_ << json{{"event", name}, {"step", step}, {"value", value}, {"seed", seed_}}.dump() << '\n';
  }

 private:
  std::ofstream out_;
  std::uint64_t seed_;
};

// ---- model loading ---------------------------------------------------------

inline PointCloud load_dataset(const RunConfig& c) {
  if (c.dataset.empty()) throw ConfigError("paths.dataset (--dataset) is required");
  if (!std::filesystem::exists(c.dataset)) throw ConfigError("dataset not found: " + c.dataset);
  PointCloud data = read_dataset_csv(c.dataset);
  if (data.dim() != c.kernel.dim())
    throw ConfigError("dimension mismatch: dataset has dimension " + std::to_string(data.dim()) +
                      " but process.dim = " + std::to_string(c.kernel.dim()));
  return data;
}

inline std::string checkpoint_path(const RunConfig& c) {
  return c.checkpoint.empty() ? output_path(c, "model.ckpt").string() : c.checkpoint;
}

struct Model {
  HSpec forward;
  HSpec backward;
  SupportEstimate support;
};

// Exact backward from the dataset, or the learned backward from a
// checkpoint and its support sidecar.
inline Model load_model(const RunConfig& c) {
  HSpec forward = forward_spec(c);
  if (c.exact) {
    PointCloud data = load_dataset(c);
    HSpec back = build_exact_backward(data, forward);
    return {forward, std::move(back), SupportEstimate::build(std::move(data), c.epsilon)};
  }
  if (c.checkpoint.empty()) throw ConfigError("paths.checkpoint (--checkpoint) is required unless sampling.exact");
  if (!std::filesystem::exists(c.checkpoint)) throw ConfigError("checkpoint not found: " + c.checkpoint);
  const std::string sidecar = c.checkpoint + ".support";
  if (!std::filesystem::exists(sidecar)) throw ConfigError("support sidecar not found: " + sidecar);
  CheckpointHeader header;
  auto params = std::make_shared<const ScoreParams>(load_checkpoint(c.checkpoint, &header));
  if (params->dim() != c.kernel.dim())
    throw ConfigError("dimension mismatch: checkpoint has dimension " + std::to_string(params->dim()) +
                      " but process.dim = " + std::to_string(c.kernel.dim()));
  if (header.forward_variant != variant_tag(c.forward_variant))
    throw ConfigError("checkpoint was trained with a different forward variant");
  if (header.rate != c.kernel.rate()) throw ConfigError("checkpoint was trained with a different rate");
  SupportEstimate support = SupportEstimate::load(sidecar);
  if (support.dim() != c.kernel.dim()) throw ConfigError("dimension mismatch: support sidecar");
  if (support.epsilon() != c.epsilon) support = SupportEstimate::build(support.points(), c.epsilon);
  HSpec back{c.kernel, LearnedBackward{params, std::make_shared<const HSpec>(forward)}};
  return {forward, std::move(back), std::move(support)};
}

inline Vec require_point(const RunConfig& c) {
  if (!c.point) throw ConfigError("query.point (--point) is required");
  return *c.point;
}

// ---- subcommands -----------------------------------------------------------

inline int cmd_simulate_forward(const RunConfig& c) {
  const HSpec forward = forward_spec(c);
  const std::size_t d = c.kernel.dim();
  const Vec start = c.simulate_start.value_or(Vec(d, 0.0));
  const KillRule rule = forward_kill_rule(forward, c.kill_radius, c.step_cap);
  const auto paths = parallel_map(c.count, c.threads, [&](std::size_t i) {
    return simulate(forward, start, rule, c.dt, stream_seed(c.seed, i));
  });
  auto out = open_output(output_path(c, "forward_paths.csv"));
  out << "path,lifetime,steps,kill_reason,clipped_steps,";
  write_header(out, "x", d);
  out << '\n';
  std::map<std::string, std::size_t> reasons;
  double total = 0.0;
  for (std::size_t i = 0; i < paths.size(); ++i) {
    const Path& p = paths[i];
    out << i << ',' << p.lifetime << ',' << p.kill_index << ',' << kill_reason_name(p.kill_reason) << ','
        << p.clipped_steps << ',';
    write_row(out, p.final_state());
    out << '\n';
    ++reasons[kill_reason_name(p.kill_reason)];
    total += p.lifetime;
  }
  if (c.trace) {
    auto tr = open_output(output_path(c, "trace.csv"));
    write_trace_header(tr, d);
    for (std::size_t i = 0; i < paths.size(); ++i) write_trace_rows(tr, paths[i], i);
  }
  write_json(output_path(c, "forward_metrics.json"),
             {{"count", c.count}, {"variant", forward.variant_name()}, {"seed", c.seed},
              {"mean_lifetime", c.count ? total / static_cast<double>(c.count) : 0.0}, {"kill_reasons", reasons}});
  return 0;
}

inline int cmd_train(const RunConfig& c) {
  const HSpec forward = forward_spec(c);
  PointCloud data = load_dataset(c);
  const SupportEstimate support = SupportEstimate::build(data, c.epsilon);
  const std::string ckpt = checkpoint_path(c);
  MetricsLog log(output_path(c, "metrics.jsonl"), c.seed);
  TrainReport report;
  const ScoreParams params = train(data, forward, support, c.train, &report,
                                   [&](std::size_t epoch, double loss, const ScoreParams&) {
                                     log.event("epoch_loss", epoch, loss);
                                   });
  log.event("corpus_size", 0, static_cast<double>(report.corpus_size));
  if (std::filesystem::path(ckpt).has_parent_path())
    std::filesystem::create_directories(std::filesystem::path(ckpt).parent_path());
  save_checkpoint(ckpt, params, {variant_tag(c.forward_variant), c.kernel.rate(), c.epsilon});
  support.save(ckpt + ".support");
  write_json(ckpt + ".json", {{"epoch_losses", report.epoch_losses},
                              {"corpus_size", report.corpus_size},
                              {"steps", report.steps},
                              {"seed", c.seed},
                              {"layer_dims", params.layer_dims},
                              {"activation", activation_name(params.activation)},
                              {"forward_variant", c.forward_variant},
                              {"rate", c.kernel.rate()},
                              {"epsilon", c.epsilon}});
  return 0;
}

inline int cmd_generate(const RunConfig& c) {
  const Model m = load_model(c);
  const std::size_t d = c.kernel.dim();
  const auto runs = generate_unconditional_batch(m.backward, m.forward, m.support, c.count, c.dt, c.seed, c.threads,
                                                 c.start_radius, c.step_cap);
  auto out = open_output(output_path(c, "samples.csv"));
  write_header(out, "x", d);
  out << ",lifetime,steps,";
  write_header(out, "init", d);
  out << '\n';
  std::size_t failures = 0, clipped = 0;
  double total = 0.0;
  for (const auto& [init, g] : runs) {
    clipped += g.clipped_steps;
    if (!g.ok()) {
      ++failures;
      continue;
    }
    write_row(out, g.sample);
    out << ',' << g.lifetime << ',' << g.steps << ',';
    write_row(out, init);
    out << '\n';
    total += g.lifetime;
  }
  const std::size_t ok = c.count - failures;
  write_json(output_path(c, "generate_metrics.json"),
             {{"requested", c.count}, {"generated", ok}, {"failures", failures},
              {"failure_rate", c.count ? static_cast<double>(failures) / static_cast<double>(c.count) : 0.0},
              {"mean_lifetime", ok ? total / static_cast<double>(ok) : 0.0}, {"clipped_steps", clipped},
              {"seed", c.seed}, {"exact", c.exact}});
  return 0;
}

inline int cmd_sample_exact(const RunConfig& c) {
  const HSpec forward = forward_spec(c);
  const PointCloud data = load_dataset(c);
  const HSpec back = build_exact_backward(data, forward);
  const SupportEstimate support = SupportEstimate::build(data, c.epsilon);
  const std::size_t d = c.kernel.dim();
  const auto runs = parallel_map(c.count, c.threads, [&](std::size_t i) {
    const std::uint64_t s = stream_seed(c.seed, i);
    Vec init = c.point ? *c.point : init_unconditional(forward, support, s, c.start_radius);
    ExactSample e = sample_exact(back, support, init, c.dt, splitmix64(s), c.step_cap);
    return std::make_pair(std::move(init), std::move(e));
  });
  auto out = open_output(output_path(c, "samples.csv"));
  out << "index,";
  write_header(out, "y", d);
  out << ",lifetime,steps,";
  write_header(out, "init", d);
  out << '\n';
  std::size_t failures = 0;
  std::vector<double> freq(data.size(), 0.0);
  for (const auto& [init, e] : runs) {
    if (!e.ok()) {
      ++failures;
      continue;
    }
    out << e.endpoint_index << ',';
    write_row(out, e.endpoint);
    out << ',' << e.lifetime << ',' << e.steps << ',';
    write_row(out, init);
    out << '\n';
    freq[e.endpoint_index] += 1.0;
  }
  const std::size_t ok = c.count - failures;
  if (ok)
    for (double& f : freq) f /= static_cast<double>(ok);
  json report{{"requested", c.count}, {"failures", failures}, {"endpoint_frequencies", freq}, {"seed", c.seed}};
  if (c.point && !support.contains(*c.point)) report["posterior"] = posterior_endpoint_law(back, *c.point);
  write_json(output_path(c, "sample_exact_metrics.json"), report);
  return 0;
}

inline int cmd_condition(const RunConfig& c) {
  const Model m = load_model(c);
  const Vec x = require_point(c);
  if (m.support.contains(x)) throw ConfigError("conditioning point lies inside the support");
  const std::size_t d = c.kernel.dim();
  const auto runs = generate_from(m.backward, m.support, x, c.count, c.dt, c.seed, c.threads, c.step_cap);
  auto out = open_output(output_path(c, "samples.csv"));
  write_header(out, "x", d);
  out << ",lifetime,steps,nearest\n";
  const PointCloud& pts = m.support.points();
  std::vector<double> freq(pts.size(), 0.0);
  std::size_t failures = 0;
  for (const auto& g : runs) {
    if (!g.ok()) {
      ++failures;
      continue;
    }
    write_row(out, g.sample);
    out << ',' << g.lifetime << ',' << g.steps << ',' << g.nearest_index << '\n';
    freq[g.nearest_index] += 1.0;
  }
  const std::size_t ok = c.count - failures;
  if (ok)
    for (double& f : freq) f /= static_cast<double>(ok);
  const HSpec exact = build_exact_backward(pts, m.forward);
  write_json(output_path(c, "condition.json"),
             {{"point", x}, {"count", c.count}, {"failures", failures}, {"frequencies", freq},
              {"exact_posterior", posterior_endpoint_law(exact, x)}, {"seed", c.seed}, {"exact", c.exact}});
  return 0;
}

// In-distribution probes for threshold calibration: points at distance 2
// epsilon from evenly spaced data points, in random directions.
inline std::vector<Vec> calibration_probes(const SupportEstimate& support, std::size_t count, std::uint64_t seed) {
  const PointCloud& pts = support.points();
  const std::size_t n = std::min(count, pts.size());
  Rng rng(seed, 0xca1);
  std::vector<Vec> probes;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t i = k * pts.size() / n;
    for (int attempt = 0; attempt < 100; ++attempt) {
      Vec u = rng.unit_vector(pts.dim());
      scale(u, 2.0 * support.epsilon());
      axpy(1.0, pts.point(i), u);
      if (!support.contains(u)) {
        probes.push_back(std::move(u));
        break;
      }
    }
  }
  if (probes.empty()) throw PreconditionError("calibration: no probe outside the support");
  return probes;
}

inline int cmd_anomaly(const RunConfig& c) {
  const Model m = load_model(c);
  const Vec x = require_point(c);
  double threshold;
  std::string source = "config";
  if (c.threshold) {
    threshold = *c.threshold;
  } else {
    const auto probes = calibration_probes(m.support, c.calibration_probes, c.seed);
    threshold = calibrate_threshold(probes, m.backward, m.support, c.runs, c.dt, stream_seed(c.seed, 0xca11),
                                    c.calibration_level, c.threads, c.step_cap);
    source = "calibrated";
  }
  const AnomalyResult a = anomaly_score(x, m.backward, m.support, c.runs, c.dt, c.seed, threshold, c.threads,
                                        c.step_cap);
  write_json(output_path(c, "anomaly.json"),
             {{"point", x}, {"mean_lifetime", a.mean_lifetime}, {"threshold", a.threshold},
              {"threshold_source", source}, {"decision", a.is_anomaly ? "anomaly" : "normal"},
              {"in_support", a.in_support}, {"N", a.runs}, {"failures", a.failures}, {"seed", c.seed}});
  return 0;
}

inline int cmd_classify(const RunConfig& c) {
  const Model m = load_model(c);
  if (!m.support.has_classes()) throw ConfigError("classify needs a labelled dataset");
  const Vec x = require_point(c);
  const ClassifyResult r = classify(x, m.backward, m.support, c.dt, c.seed, c.step_cap);
  const ClassPosterior post =
      class_posterior(x, m.backward, m.support, c.runs, c.dt, stream_seed(c.seed, 1), c.threads, c.step_cap);
  json report{{"point", x}, {"lifetime", r.lifetime}, {"in_support", r.in_support}, {"M", post.runs},
              {"failures", post.failures}, {"seed", c.seed},
              {"posterior", {{"labels", post.labels}, {"frequencies", post.frequencies}}}};
  report["class"] = r.label ? json(*r.label) : json(nullptr);
  if (post.exact) report["posterior"]["exact"] = *post.exact;
  else if (!m.support.contains(x)) {
    const HSpec exact = build_exact_backward(m.support.points(), m.forward);
    report["posterior"]["exact"] = *exact_class_posterior(x, exact, m.support);
  }
  write_json(output_path(c, "classify.json"), report);
  return r.ok() ? 0 : 3;
}

inline int cmd_validate(const RunConfig& c, std::ostream& log) {
  const json& v = c.raw.at("validate");
  const auto checks = v.at("checks").get<std::vector<std::string>>();
  const double rate = c.kernel.rate();
  const std::size_t d = c.kernel.dim();
  EndpointCheckConfig ec;
  ec.runs = v.at("endpoint_runs").get<std::size_t>();
  ec.dt = v.at("endpoint_dt").get<double>();
  ec.seed = c.seed;
  ec.threads = c.threads;
  ec.bridge_kill_radius = c.kill_radius;
  ec.step_cap = c.step_cap;
  json reports = json::array();
  bool all = true;
  for (const auto& name : checks) {
    CheckReport r;
    if (name == "endpoint-constant") {
      r = check_endpoint_law(HSpec::constant(GreenKernel::brownian(d, rate)), Vec(d, 0.0), ec);
    } else if (name == "endpoint-bridge") {
      Vec target(d, 0.0);
      target[0] = v.at("bridge_distance").get<double>();
      r = check_endpoint_law(HSpec::bridge(GreenKernel::brownian(d, rate), target, c.kill_radius), Vec(d, 0.0), ec);
    } else if (name == "endpoint-sphere") {
      const auto sd = v.at("sphere_dim").get<std::size_t>();
      r = check_endpoint_law(HSpec::sphere(GreenKernel::brownian(sd, rate), v.at("sphere_radius").get<double>()),
                             Vec(sd, 0.0), ec);
    } else if (name == "control") {
      ControlCheckConfig cc;
      cc.runs = v.at("control_runs").get<std::size_t>();
      cc.dt = v.at("control_dt").get<double>();
      cc.kill_radius = v.at("control_kill_radius").get<double>();
      cc.seed = c.seed;
      cc.threads = c.threads;
      cc.step_cap = c.step_cap;
      Vec target(2, 0.0);
      target[0] = v.at("bridge_distance").get<double>();
      r = check_control_optimality(
          HSpec::bridge(GreenKernel::brownian(2, v.at("control_rate").get<double>()), target), Vec(2, 0.0), cc);
    } else if (name == "ou-approx") {
      std::vector<double> radii;
      for (int i = 0; i <= 20; ++i) radii.push_back(0.05 * i);
      r = check_ou_approx(v.at("ou_dim").get<std::size_t>(), v.at("ou_rate").get<double>(), radii);
    } else {
      throw ConfigError("unknown validation check '" + name + "'");
    }
    log << (r.passed ? "PASS " : "FAIL ") << r.name << '\n';
    all = all && r.passed;
    reports.push_back(to_json(r));
  }
  write_json(output_path(c, "validation.json"), {{"passed", all}, {"seed", c.seed}, {"checks", reports}});
  return all ? 0 : 1;
}

// ---- entry point -----------------------------------------------------------

// Exit codes: 0 success, 1 a validation check failed, 2 usage or
// configuration error, 3 runtime failure.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  CLI::App app{"Generative diffusion with random horizons via Doob h-transforms", "hdiff"};
  app.require_subcommand(1);
  std::string config_file;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  std::optional<std::size_t> count;
  std::string output_dir, dataset, checkpoint, point;
  bool exact = false, trace = false;
  app.add_option("--config,-c", config_file, "JSON config file");
  app.add_option("--set", overrides, "override a config value, e.g. --set support.epsilon=0.05");
  app.add_option("--seed", seed, "master seed");
  app.add_option("--threads", threads, "worker threads");
  app.add_option("--output-dir,-o", output_dir, "directory for output files");
  app.add_option("--dataset", dataset, "dataset CSV");
  app.add_option("--checkpoint", checkpoint, "model checkpoint");
  app.add_option("--count,-n", count, "number of paths or samples");
  app.add_option("--point", point, "query point as comma-separated coordinates");
  app.add_flag("--exact", exact, "use the exact backward built from the dataset");
  app.add_flag("--trace", trace, "write per-step trajectories (simulate-forward)");

  const std::vector<std::pair<const char*, const char*>> commands = {
      {"simulate-forward", "simulate forward h-transformed paths"},
      {"train", "fit the score network by denoising score matching"},
      {"generate", "unconditional generation with the backward process"},
      {"sample-exact", "sample with the exact backward of the dataset"},
      {"condition", "generate from a given initial point"},
      {"anomaly", "anomaly score by mean backward lifetime"},
      {"classify", "classify by the class of the first-hit support"},
      {"validate", "run the statistical self-checks"}};
  for (const auto& [name, help] : commands) app.add_subcommand(name, help)->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 2;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    json cfg = default_config();
    if (!config_file.empty()) {
      std::ifstream in(config_file);
      if (!in) throw ConfigError("cannot open config " + config_file);
      json user = json::parse(in, nullptr, false);
      if (user.is_discarded() || !user.is_object()) throw ConfigError("malformed config " + config_file);
      cfg.merge_patch(user);
    }
    for (const auto& o : overrides) apply_override(cfg, o);
    if (seed) cfg["seed"] = *seed;
    if (threads) cfg["threads"] = *threads;
    if (count) cfg["sampling"]["count"] = *count;
    if (!output_dir.empty()) cfg["paths"]["output_dir"] = output_dir;
    if (!dataset.empty()) cfg["paths"]["dataset"] = dataset;
    if (!checkpoint.empty()) cfg["paths"]["checkpoint"] = checkpoint;
    if (!point.empty()) cfg["query"]["point"] = parse_point(point);
    if (exact) cfg["sampling"]["exact"] = true;
    if (trace) cfg["simulate"]["trace"] = true;
    const RunConfig c = parse_config(cfg);

    if (command == "simulate-forward") return cmd_simulate_forward(c);
    if (command == "train") return cmd_train(c);
    if (command == "generate") return cmd_generate(c);
    if (command == "sample-exact") return cmd_sample_exact(c);
    if (command == "condition") return cmd_condition(c);
    if (command == "anomaly") return cmd_anomaly(c);
    if (command == "classify") return cmd_classify(c);
    return cmd_validate(c, out);
  } catch (const ConfigError& e) {
    err << "hdiff " << command << ": error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "hdiff " << command << ": error: " << e.what() << '\n';
    return 3;
  }
}

}  // namespace hdiff::cli
