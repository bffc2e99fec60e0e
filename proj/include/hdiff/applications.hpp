#pragma once

#include <map>
#include <optional>

#include "hdiff/exact_backward.hpp"
#include "hdiff/generator.hpp"
#include "hdiff/stats.hpp"

namespace hdiff {

struct AnomalyResult {
  double mean_lifetime = 0.0;
  bool is_anomaly = false;
  double threshold = 0.0;
  bool in_support = false;
  std::size_t runs = 0;
  std::size_t failures = 0;  // capped runs, counted at the cap time
};

// Mean backward lifetime from x over N generations; anomalous when it
// exceeds `threshold`.
inline AnomalyResult anomaly_score(std::span<const double> x, const HSpec& backward, const SupportEstimate& support,
                                   std::size_t runs, double dt, std::uint64_t seed, double threshold,
                                   unsigned threads = 1, std::size_t step_cap = kDefaultStepCap) {
  require(runs >= 1, "anomaly_score: N must be at least 1");
  AnomalyResult out;
  out.threshold = threshold;
  out.runs = runs;
  if (support.contains(x)) {
    out.in_support = true;
    return out;
  }
  const auto results = generate_from(backward, support, x, runs, dt, seed, threads, step_cap);
  double total = 0.0;
  for (const auto& g : results) {
    total += g.lifetime;
    if (!g.ok()) ++out.failures;
  }
  out.mean_lifetime = total / static_cast<double>(runs);
  out.is_anomaly = out.mean_lifetime > threshold;
  return out;
}

// Threshold as the `level` quantile of mean lifetimes over in-distribution
// probes (probes inside the support contribute 0).
inline double calibrate_threshold(const std::vector<Vec>& probes, const HSpec& backward,
                                  const SupportEstimate& support, std::size_t runs, double dt, std::uint64_t seed,
                                  double level = 0.99, unsigned threads = 1,
                                  std::size_t step_cap = kDefaultStepCap) {
  require(!probes.empty(), "calibrate_threshold: no probes");
  std::vector<double> means;
  means.reserve(probes.size());
  for (std::size_t i = 0; i < probes.size(); ++i)
    means.push_back(anomaly_score(probes[i], backward, support, runs, dt, stream_seed(seed, i),
                                  std::numeric_limits<double>::infinity(), threads, step_cap)
                        .mean_lifetime);
  return stats::quantile(std::move(means), level);
}

struct ClassifyResult {
  std::optional<std::int64_t> label;  // empty on a capped run
  double lifetime = 0.0;
  bool in_support = false;
  KillReason reason = KillReason::HitKill;

  bool ok() const { return label.has_value(); }
};

inline ClassifyResult classify(std::span<const double> x, const HSpec& backward, const SupportEstimate& classes,
                               double dt, std::uint64_t seed, std::size_t step_cap = kDefaultStepCap) {
  if (!classes.has_classes()) throw PreconditionError("classify: support has no class labels");
  ClassifyResult out;
  if (classes.contains(x)) {
    out.in_support = true;
    out.label = classes.nearest_class(x);
    return out;
  }
  const GenerationResult g = generate(backward, classes, x, dt, seed, step_cap);
  out.lifetime = g.lifetime;
  out.reason = g.reason;
  if (g.ok()) out.label = classes.nearest_class(g.sample);
  return out;
}

struct ClassPosterior {
  std::vector<std::int64_t> labels;  // ascending
  std::vector<double> frequencies;   // over successful runs
  std::optional<std::vector<double>> exact;
  std::size_t runs = 0;
  std::size_t failures = 0;
  double mean_lifetime = 0.0;
};

// Exact class posterior of a discrete backward whose data coincide with
// the labelled support points.
inline std::optional<std::vector<double>> exact_class_posterior(std::span<const double> x, const HSpec& backward,
                                                                const SupportEstimate& classes) {
  const auto* v = std::get_if<DiscreteBackward>(&backward.variant);
  if (!v || v->data->size() != classes.points().size()) return std::nullopt;
  const auto part = classes.class_partition();
  const auto p = posterior_endpoint_law(backward, x);
  std::vector<double> out;
  for (const auto& [label, idx] : part) {
    double s = 0.0;
    for (auto i : idx) s += p[i];
    out.push_back(s);
  }
  return out;
}

inline ClassPosterior class_posterior(std::span<const double> x, const HSpec& backward,
                                      const SupportEstimate& classes, std::size_t runs, double dt,
                                      std::uint64_t seed, unsigned threads = 1,
                                      std::size_t step_cap = kDefaultStepCap) {
  require(runs >= 1, "class_posterior: M must be at least 1");
  if (!classes.has_classes()) throw PreconditionError("class_posterior: support has no class labels");
  ClassPosterior out;
  out.runs = runs;
  std::map<std::int64_t, std::size_t> slot;
  for (const auto& [label, idx] : classes.class_partition()) {
    slot.emplace(label, out.labels.size());
    out.labels.push_back(label);
  }
  out.frequencies.assign(out.labels.size(), 0.0);
  if (!classes.contains(x)) out.exact = exact_class_posterior(x, backward, classes);
  const auto results = parallel_map(runs, threads, [&](std::size_t i) {
    return classify(x, backward, classes, dt, stream_seed(seed, i), step_cap);
  });
  std::size_t ok = 0;
  for (const auto& r : results) {
    if (!r.ok()) {
      ++out.failures;
      continue;
    }
    out.frequencies[slot.at(*r.label)] += 1.0;
    out.mean_lifetime += r.lifetime;
    ++ok;
  }
  if (ok) {
    for (double& f : out.frequencies) f /= static_cast<double>(ok);
    out.mean_lifetime /= static_cast<double>(ok);
  }
  return out;
}

}  // namespace hdiff
