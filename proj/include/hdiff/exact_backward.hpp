#pragma once

#include <memory>

#include "hdiff/core.hpp"
#include "hdiff/generator.hpp"
#include "hdiff/htransform.hpp"
#include "hdiff/point_cloud.hpp"
#include "hdiff/support.hpp"

namespace hdiff {

// Closed-form backward h-transform for alpha = sum_i w_i delta_{y_i}:
//   h_back(x) = sum_i w_i G_r(x, y_i) / h(y_i).
inline HSpec build_exact_backward(const PointCloud& data, const HSpec& forward) {
  if (data.empty()) throw EmptyDataError("build_exact_backward: empty data");
  forward.validate();
  require(forward.is_forward(), "build_exact_backward: forward must be constant, bridge or sphere");
  require(data.dim() == forward.dim(), "build_exact_backward: dimension mismatch");
  DiscreteBackward back;
  back.data = std::make_shared<const PointCloud>(data);
  back.forward = std::make_shared<const HSpec>(forward);
  back.log_mass.resize(data.size());
  for (std::size_t i = 0; i < data.size(); ++i)
    back.log_mass[i] = std::log(data.weight(i)) - h_value(forward, data.point(i));
  HSpec out{forward.kernel, std::move(back), forward.drift_limit};
  return out;
}

struct ExactSample {
  std::size_t endpoint_index = 0;  // nearest data point at the hitting state
  Vec endpoint;
  Vec hit_state;
  double lifetime = 0.0;
  std::size_t steps = 0;
  KillReason reason = KillReason::StepCapReached;

  bool ok() const { return reason == KillReason::HitKill; }
};

inline ExactSample sample_exact(const HSpec& backward, const SupportEstimate& support,
                                std::span<const double> init, double dt, std::uint64_t seed,
                                std::size_t step_cap = kDefaultStepCap) {
  const auto* v = std::get_if<DiscreteBackward>(&backward.variant);
  if (!v) throw PreconditionError("sample_exact: requires a discrete backward");
  GenerationResult g = generate(backward, support, init, dt, seed, step_cap);
  ExactSample out;
  out.endpoint_index = v->data->nearest_index(g.sample);
  const auto y = v->data->point(out.endpoint_index);
  out.endpoint.assign(y.begin(), y.end());
  out.hit_state = std::move(g.sample);
  out.lifetime = g.lifetime;
  out.steps = g.steps;
  out.reason = g.reason;
  return out;
}

// Builds the union of epsilon-balls around the backward's data points.
inline ExactSample sample_exact(const HSpec& backward, std::span<const double> init, double epsilon,
                                double dt, std::uint64_t seed, std::size_t step_cap = kDefaultStepCap) {
  const auto* v = std::get_if<DiscreteBackward>(&backward.variant);
  if (!v) throw PreconditionError("sample_exact: requires a discrete backward");
  const SupportEstimate support = SupportEstimate::build(*v->data, epsilon);
  return sample_exact(backward, support, init, dt, seed, step_cap);
}

// Endpoint frequencies over `runs` exact samples from `init` (failed runs
// are excluded and counted).
struct EndpointFrequencies {
  std::vector<double> frequencies;
  std::size_t failures = 0;
  double mean_lifetime = 0.0;
};

inline EndpointFrequencies exact_endpoint_frequencies(const HSpec& backward, const SupportEstimate& support,
                                                      std::span<const double> init, std::size_t runs,
                                                      double dt, std::uint64_t seed, unsigned threads = 1,
                                                      std::size_t step_cap = kDefaultStepCap) {
  const auto& data = *std::get<DiscreteBackward>(backward.variant).data;
  const auto samples = parallel_map(runs, threads, [&](std::size_t i) {
    return sample_exact(backward, support, init, dt, stream_seed(seed, i), step_cap);
  });
  EndpointFrequencies out;
  out.frequencies.assign(data.size(), 0.0);
  std::size_t ok = 0;
  for (const auto& s : samples) {
    if (!s.ok()) {
      ++out.failures;
      continue;
    }
    out.frequencies[s.endpoint_index] += 1.0;
    out.mean_lifetime += s.lifetime;
    ++ok;
  }
  if (ok) {
    for (double& f : out.frequencies) f /= static_cast<double>(ok);
    out.mean_lifetime /= static_cast<double>(ok);
  }
  return out;
}

inline double total_variation(std::span<const double> p, std::span<const double> q) {
  require(p.size() == q.size(), "total_variation: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return 0.5 * s;
}

}  // namespace hdiff
