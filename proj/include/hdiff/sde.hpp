#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <ostream>
#include <variant>
#include <vector>

#include "hdiff/core.hpp"
#include "hdiff/htransform.hpp"
#include "hdiff/rng.hpp"
#include "hdiff/support.hpp"

namespace hdiff {

enum class KillReason { RateKill, HitKill, StepCapReached };

inline const char* kill_reason_name(KillReason k) {
  switch (k) {
    case KillReason::RateKill: return "rate";
    case KillReason::HitKill: return "hit";
    default: return "step-cap";
  }
}

struct BallRegion {
  Vec center;
  double radius;
};

// Stops at the first state with |x| >= radius.
struct SphereExitRegion {
  double radius;
};

struct SupportRegion {
  std::shared_ptr<const SupportEstimate> support;
};

using HitRegion = std::variant<BallRegion, SphereExitRegion, SupportRegion>;

inline bool in_region(const HitRegion& region, std::span<const double> x) {
  return std::visit(
      [&](const auto& r) -> bool {
        using T = std::decay_t<decltype(r)>;
        if constexpr (std::is_same_v<T, BallRegion>) return distance(x, r.center) <= r.radius;
        else if constexpr (std::is_same_v<T, SphereExitRegion>) return norm(x) >= r.radius;
        else return r.support->contains(x);
      },
      region);
}

struct KillRule {
  enum class Kind { ExponentialRate, HitSet, None };

  Kind kind = Kind::None;
  double rate = 0.0;
  HitRegion region = SphereExitRegion{INFINITY};
  std::size_t step_cap = 1'000'000;

  static KillRule exponential(double rate, std::size_t cap = 1'000'000) {
    return {Kind::ExponentialRate, rate, SphereExitRegion{INFINITY}, cap};
  }
  static KillRule hit_ball(Vec center, double radius, std::size_t cap = 1'000'000) {
    return {Kind::HitSet, 0.0, BallRegion{std::move(center), radius}, cap};
  }
  static KillRule sphere_exit(double radius, std::size_t cap = 1'000'000) {
    return {Kind::HitSet, 0.0, SphereExitRegion{radius}, cap};
  }
  static KillRule hit_support(std::shared_ptr<const SupportEstimate> s, std::size_t cap = 1'000'000) {
    return {Kind::HitSet, 0.0, SupportRegion{std::move(s)}, cap};
  }
  static KillRule none(std::size_t cap) { return {Kind::None, 0.0, SphereExitRegion{INFINITY}, cap}; }

  void validate() const {
    require(step_cap >= 1, "KillRule: step cap must be >= 1");
    if (kind == Kind::ExponentialRate) require(rate > 0.0, "KillRule: rate must be positive");
    if (const auto* s = std::get_if<SupportRegion>(&region))
      require(s->support != nullptr, "KillRule: missing support estimate");
  }
};

// One simulated killed trajectory. states holds kill_index + 1 points.
struct Path {
  std::size_t dim = 0;
  double dt = 0.0;
  std::vector<double> states;  // row-major, (kill_index + 1) x dim
  KillReason kill_reason = KillReason::StepCapReached;
  std::size_t kill_index = 0;
  double lifetime = 0.0;  // exact Exp(r) draw for RateKill, kill_index * dt otherwise
  std::optional<std::size_t> last_exit_index;
  std::size_t clipped_steps = 0;

  std::size_t size() const { return dim ? states.size() / dim : 0; }
  std::span<const double> state(std::size_t k) const { return {states.data() + k * dim, dim}; }
  std::span<const double> start() const { return state(0); }
  std::span<const double> final_state() const { return state(kill_index); }
};

// Terminal information only, for runs where the trajectory is not needed.
struct PathSummary {
  Vec final_state;
  KillReason kill_reason = KillReason::StepCapReached;
  std::size_t kill_index = 0;
  double lifetime = 0.0;
  std::size_t clipped_steps = 0;
};

namespace detail {

// Euler-Maruyama x_{k+1} = x_k + b(x_k) dt + sqrt(dt) xi_k. Calls
// record(k, x_k) for every visited state and returns the terminal summary.
template <typename Record>
PathSummary euler_maruyama(const HSpec& spec, std::span<const double> start, const KillRule& rule,
                           double dt, std::uint64_t seed, Record&& record) {
  require(dt > 0.0 && std::isfinite(dt), "simulate: dt must be positive");
  require_dim(start, spec.dim(), "simulate start");
  rule.validate();
  Rng rng(seed);
  const std::size_t d = spec.dim();
  const double sdt = std::sqrt(dt);
  PathSummary out;
  Vec x(start.begin(), start.end());
  Vec noise(d);
  record(0, x);

  std::size_t target_steps = rule.step_cap;
  double rate_lifetime = 0.0;
  if (rule.kind == KillRule::Kind::ExponentialRate) {
    rate_lifetime = rng.exponential(rule.rate);
    const double steps = std::ceil(rate_lifetime / dt);
    if (steps <= static_cast<double>(rule.step_cap)) target_steps = static_cast<std::size_t>(steps);
    else rate_lifetime = -1.0;
  } else if (rule.kind == KillRule::Kind::HitSet && in_region(rule.region, x)) {
    out.final_state = x;
    out.kill_reason = KillReason::HitKill;
    return out;
  }

  for (std::size_t k = 0; k < target_steps; ++k) {
    Vec b = drift(spec, x);
    const double bn = norm(b);
    if (bn > spec.drift_limit) {
      scale(b, spec.drift_limit / bn);
      ++out.clipped_steps;
    }
    rng.fill_normal(noise);
    for (std::size_t i = 0; i < d; ++i) x[i] += b[i] * dt + sdt * noise[i];
    record(k + 1, x);
    if (rule.kind == KillRule::Kind::HitSet && in_region(rule.region, x)) {
      out.final_state = x;
      out.kill_reason = KillReason::HitKill;
      out.kill_index = k + 1;
      out.lifetime = static_cast<double>(k + 1) * dt;
      return out;
    }
  }
  out.final_state = x;
  out.kill_index = target_steps;
  if (rule.kind == KillRule::Kind::ExponentialRate && rate_lifetime >= 0.0) {
    out.kill_reason = KillReason::RateKill;
    out.lifetime = rate_lifetime;
  } else {
    out.kill_reason = KillReason::StepCapReached;
    out.lifetime = static_cast<double>(target_steps) * dt;
  }
  return out;
}

}  // namespace detail

// Simulates the h-transformed diffusion from `start` until the kill rule fires.
inline Path simulate(const HSpec& spec, std::span<const double> start, const KillRule& rule, double dt,
                     std::uint64_t seed) {
  Path path;
  path.dim = spec.dim();
  path.dt = dt;
  auto s = detail::euler_maruyama(spec, start, rule, dt, seed, [&](std::size_t, const Vec& x) {
    path.states.insert(path.states.end(), x.begin(), x.end());
  });
  path.kill_reason = s.kill_reason;
  path.kill_index = s.kill_index;
  path.lifetime = s.lifetime;
  path.clipped_steps = s.clipped_steps;
  return path;
}

inline PathSummary simulate_endpoint(const HSpec& spec, std::span<const double> start,
                                     const KillRule& rule, double dt, std::uint64_t seed) {
  return detail::euler_maruyama(spec, start, rule, dt, seed, [](std::size_t, const Vec&) {});
}

// Largest k <= kill_index with states[k] in the support's epsilon-enlargement.
inline std::size_t last_exit_index(const Path& path, const SupportEstimate& support) {
  require(path.dim == support.dim(), "last_exit_index: dimension mismatch");
  for (std::size_t k = path.kill_index + 1; k-- > 0;)
    if (support.contains(path.state(k))) return k;
  throw PreconditionError("last_exit_index: path never visits the support");
}

// One row per step: path id, step index, coordinates.
inline void write_trace_header(std::ostream& out, std::size_t dim) {
  out << "path,step";
  for (std::size_t i = 0; i < dim; ++i) out << ",x" << i;
  out << '\n';
}

inline void write_trace_rows(std::ostream& out, const Path& path, std::size_t path_id) {
  out.precision(17);
  for (std::size_t k = 0; k <= path.kill_index; ++k) {
    out << path_id << ',' << k;
    for (double v : path.state(k)) out << ',' << v;
    out << '\n';
  }
}

}  // namespace hdiff

namespace hdiff {

// The natural kill rule of a forward variant: Exp(r) lifetime for h = 1,
// entry into the kill ball for a bridge, exit of the ball for a sphere hit.
inline KillRule forward_kill_rule(const HSpec& spec, double bridge_kill_radius,
                                  std::size_t cap = 1'000'000) {
  return std::visit(
      [&](const auto& v) -> KillRule {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, ConstantH>) {
          return KillRule::exponential(spec.kernel.rate(), cap);
        } else if constexpr (std::is_same_v<T, Bridge>) {
          const double radius = v.kill_radius > 0.0 ? v.kill_radius : bridge_kill_radius;
          require(radius > 0.0, "forward_kill_rule: bridge needs a positive kill radius");
          return KillRule::hit_ball(v.target, radius, cap);
        } else if constexpr (std::is_same_v<T, SphereHit>) {
          return KillRule::sphere_exit(v.radius, cap);
        } else {
          throw PreconditionError("forward_kill_rule: not a forward variant");
        }
      },
      spec.variant);
}

}  // namespace hdiff
