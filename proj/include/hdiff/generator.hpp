#pragma once

#include <functional>
#include <memory>
#include <string>
#include <string_view>

#include "hdiff/core.hpp"
#include "hdiff/htransform.hpp"
#include "hdiff/rng.hpp"
#include "hdiff/sde.hpp"
#include "hdiff/support.hpp"

namespace hdiff {

inline constexpr double kDefaultStartRadius = 1e-3;
inline constexpr std::size_t kDefaultStepCap = 1'000'000;

struct GenerationResult {
  Vec sample;  // first state inside the support (last state when capped)
  double lifetime = 0.0;
  std::size_t steps = 0;
  KillReason reason = KillReason::StepCapReached;
  std::size_t nearest_index = 0;  // nearest base point of the support to `sample`
  std::size_t clipped_steps = 0;

  bool ok() const { return reason == KillReason::HitKill; }
};

using WarningSink = std::function<void(std::string_view)>;

// Draws a backward initial state approximating the forward terminal law:
// x1 + start_radius * u for a bridge, R * u for a sphere hit, and the OU
// stationary law N(0, I / (2 theta)) for h = 1. Resamples while the draw
// lies inside the support.
inline Vec init_unconditional(const HSpec& forward, const SupportEstimate& support, std::uint64_t seed,
                              double start_radius = kDefaultStartRadius, const WarningSink& warn = {}) {
  forward.validate();
  require(support.dim() == forward.dim(), "init_unconditional: dimension mismatch");
  Rng rng(seed, 0x1417);
  const std::size_t d = forward.dim();
  if (std::holds_alternative<ConstantH>(forward.variant)) {
    const auto& p = forward.kernel.process;
    if (p.kind != ProcessKind::OrnsteinUhlenbeck)
      throw PreconditionError("init_unconditional: h = 1 needs an OU kernel (no stationary law for BM)");
    if (warn && p.rate > p.ou_theta / 10.0)
      warn("rate r exceeds theta/10: the forward terminal law is far from stationary");
  } else if (!std::holds_alternative<Bridge>(forward.variant) &&
             !std::holds_alternative<SphereHit>(forward.variant)) {
    throw PreconditionError("init_unconditional: forward variant required");
  }
  require(start_radius > 0.0, "init_unconditional: start radius must be positive");
  for (int attempt = 0; attempt < 100; ++attempt) {
    Vec x;
    if (const auto* b = std::get_if<Bridge>(&forward.variant)) {
      x = rng.unit_vector(d);
      scale(x, start_radius);
      axpy(1.0, b->target, x);
    } else if (const auto* s = std::get_if<SphereHit>(&forward.variant)) {
      x = rng.unit_vector(d);
      scale(x, s->radius);
    } else {
      x.resize(d);
      rng.fill_normal(x);
      scale(x, 1.0 / std::sqrt(2.0 * forward.kernel.process.ou_theta));
    }
    if (!support.contains(x)) return x;
  }
  throw PreconditionError("init_unconditional: initial law keeps landing inside the support");
}

inline std::shared_ptr<const SupportEstimate> borrow(const SupportEstimate& s) {
  return std::shared_ptr<const SupportEstimate>(&s, [](const SupportEstimate*) {});
}

// Runs the backward process from `init` until it first enters the support.
inline GenerationResult generate(const HSpec& backward, const SupportEstimate& support,
                                 std::span<const double> init, double dt, std::uint64_t seed,
                                 std::size_t step_cap = kDefaultStepCap) {
  require(std::holds_alternative<LearnedBackward>(backward.variant) ||
              std::holds_alternative<DiscreteBackward>(backward.variant),
          "generate: backward variant required");
  require(support.dim() == backward.dim(), "generate: dimension mismatch");
  if (support.contains(init)) throw PreconditionError("generate: initial state lies inside the support");
  const KillRule rule = KillRule::hit_support(borrow(support), step_cap);
  PathSummary s = simulate_endpoint(backward, init, rule, dt, seed);
  GenerationResult out;
  out.reason = s.kill_reason;
  out.steps = s.kill_index;
  out.lifetime = s.lifetime;
  out.clipped_steps = s.clipped_steps;
  out.nearest_index = support.nearest(s.final_state).index;
  out.sample = std::move(s.final_state);
  return out;
}

// `count` unconditional generations; run i uses stream i of `seed` for both
// its initial state and its noise.
inline std::vector<std::pair<Vec, GenerationResult>> generate_unconditional_batch(
    const HSpec& backward, const HSpec& forward, const SupportEstimate& support, std::size_t count, double dt,
    std::uint64_t seed, unsigned threads = 1, double start_radius = kDefaultStartRadius,
    std::size_t step_cap = kDefaultStepCap) {
  return parallel_map(count, threads, [&](std::size_t i) {
    const std::uint64_t s = stream_seed(seed, i);
    Vec init = init_unconditional(forward, support, s, start_radius);
    GenerationResult g = generate(backward, support, init, dt, splitmix64(s), step_cap);
    return std::make_pair(std::move(init), std::move(g));
  });
}

// `count` conditional generations from the same initial state.
inline std::vector<GenerationResult> generate_from(const HSpec& backward, const SupportEstimate& support,
                                                   std::span<const double> init, std::size_t count, double dt,
                                                   std::uint64_t seed, unsigned threads = 1,
                                                   std::size_t step_cap = kDefaultStepCap) {
  return parallel_map(count, threads, [&](std::size_t i) {
    return generate(backward, support, init, dt, stream_seed(seed, i), step_cap);
  });
}

}  // namespace hdiff
