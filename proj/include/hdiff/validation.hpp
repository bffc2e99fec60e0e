#pragma once

#include <cmath>
#include <numbers>
#include <string>

#include <boost/math/special_functions/beta.hpp>
#include "json.hpp"

#include "hdiff/htransform.hpp"
#include "hdiff/rng.hpp"
#include "hdiff/sde.hpp"
#include "hdiff/stats.hpp"

namespace hdiff {

struct CheckReport {
  std::string name;
  bool passed = false;
  std::uint64_t seed = 0;
  nlohmann::json details = nlohmann::json::object();
};

inline nlohmann::json to_json(const CheckReport& r) {
  return {{"check", r.name}, {"passed", r.passed}, {"seed", r.seed}, {"details", r.details}};
}

struct EndpointCheckConfig {
  std::size_t runs = 10000;
  double dt = 1e-3;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  double bridge_kill_radius = 0.05;
  std::size_t step_cap = 1'000'000;
  double alpha = 0.01;  // significance level of the goodness-of-fit tests
};

namespace detail {

// Equal-probability bin of a uniformly distributed unit vector. In d = 3:
// three equal-area latitude bands times four longitude sectors; in d = 2:
// twelve arcs; otherwise twelve quantile bins of the first coordinate.
inline std::size_t sphere_bin(std::span<const double> u) {
  const std::size_t d = u.size();
  const auto sector = [](double a, int parts) {
    const double t = (a + std::numbers::pi) / (2.0 * std::numbers::pi);
    return std::min<std::size_t>(static_cast<std::size_t>(t * parts), parts - 1);
  };
  if (d == 2) return sector(std::atan2(u[1], u[0]), 12);
  if (d == 3) {
    const std::size_t band = u[2] < -1.0 / 3.0 ? 0 : (u[2] < 1.0 / 3.0 ? 1 : 2);
    return band * 4 + sector(std::atan2(u[1], u[0]), 4);
  }
  const double a = 0.5 * (static_cast<double>(d) - 1.0);
  const double f = boost::math::ibeta(a, a, std::clamp(0.5 * (u[0] + 1.0), 0.0, 1.0));
  return std::min<std::size_t>(static_cast<std::size_t>(f * 12.0), 11);
}

}  // namespace detail

// Forward endpoint law: point mass at x1 for a bridge, uniform law on the
// sphere for a sphere hit, Exp(r) lifetime for h = 1.
inline CheckReport check_endpoint_law(const HSpec& forward, std::span<const double> start,
                                      const EndpointCheckConfig& cfg) {
  forward.validate();
  require(forward.is_forward(), "check_endpoint_law: forward variant required");
  require(cfg.runs >= 2, "check_endpoint_law: need at least two runs");
  CheckReport rep;
  rep.name = std::string("endpoint-law/") + forward.variant_name();
  rep.seed = cfg.seed;
  const KillRule rule = forward_kill_rule(forward, cfg.bridge_kill_radius, cfg.step_cap);
  const auto runs = parallel_map(cfg.runs, cfg.threads, [&](std::size_t i) {
    return simulate_endpoint(forward, start, rule, cfg.dt, stream_seed(cfg.seed, i));
  });
  std::size_t capped = 0;
  for (const auto& r : runs) capped += r.kill_reason == KillReason::StepCapReached;
  rep.details["runs"] = cfg.runs;
  rep.details["dt"] = cfg.dt;
  rep.details["capped"] = capped;

  if (const auto* b = std::get_if<Bridge>(&forward.variant)) {
    const double radius = b->kill_radius > 0.0 ? b->kill_radius : cfg.bridge_kill_radius;
    double worst = 0.0;
    for (const auto& r : runs) worst = std::max(worst, distance(r.final_state, b->target));
    rep.details["kill_radius"] = radius;
    rep.details["max_endpoint_distance"] = worst;
    rep.passed = capped == 0 && worst <= radius;
  } else if (std::holds_alternative<SphereHit>(forward.variant)) {
    std::vector<double> counts(12, 0.0);
    for (const auto& r : runs) {
      if (r.kill_reason != KillReason::HitKill) continue;
      Vec u = r.final_state;
      scale(u, 1.0 / norm(u));
      counts[detail::sphere_bin(u)] += 1.0;
    }
    const double hits = static_cast<double>(cfg.runs - capped);
    std::vector<double> expected(12, hits / 12.0);
    const double chi2 = stats::chi_square_statistic(counts, expected);
    const double p = stats::chi_square_p_value(chi2, 11.0);
    rep.details["bin_counts"] = counts;
    rep.details["chi_square"] = chi2;
    rep.details["p_value"] = p;
    rep.passed = capped == 0 && p > cfg.alpha;
  } else {
    std::vector<double> life;
    life.reserve(runs.size());
    for (const auto& r : runs) life.push_back(r.lifetime);
    const double rate = forward.kernel.rate();
    const auto ms = stats::mean_se(life);
    const double ks = stats::ks_statistic_exponential(life, rate);
    const double crit = stats::ks_critical_value(life.size(), cfg.alpha);
    const bool mean_ok = std::abs(ms.mean - 1.0 / rate) <= 3.0 * ms.se;
    rep.details["mean_lifetime"] = ms.mean;
    rep.details["standard_error"] = ms.se;
    rep.details["expected_mean"] = 1.0 / rate;
    rep.details["ks_statistic"] = ks;
    rep.details["ks_critical"] = crit;
    rep.passed = capped == 0 && mean_ok && ks < crit;
  }
  return rep;
}

struct ControlCheckConfig {
  std::vector<double> scales = {0.0, -1.0, -0.5, 0.5, 1.0};
  Vec direction;  // constant field v; default 0.8 * unit(x1 - start)
  std::size_t runs = 5000;
  double dt = 1e-3;
  double kill_radius = 0.1;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  std::size_t step_cap = 1'000'000;
};

namespace detail {

struct ControlRun {
  double cost = 0.0;
  bool capped = false;
};

// One path of dZ = (b + grad log h + c v) dt + dW stopped on entering
// B(x1, kill_radius); returns int_0^tau (r + |u|^2 / 2) dt - log h(Z_tau).
inline ControlRun control_cost(const GreenKernel& kernel, std::span<const double> target,
                               std::span<const double> start, std::span<const double> cv, double kill_radius,
                               double dt, std::uint64_t seed, std::size_t cap) {
  const std::size_t d = kernel.dim();
  const double r = kernel.rate();
  const double sdt = std::sqrt(dt);
  Rng rng(seed);
  Vec x(start.begin(), start.end()), noise(d);
  ControlRun out;
  for (std::size_t k = 0; k < cap; ++k) {
    Vec u = grad_log_green(kernel, x, target);
    axpy(1.0, cv, u);
    const Vec b = base_drift(kernel.process, x);
    out.cost += (r + 0.5 * squared_norm(u)) * dt;
    rng.fill_normal(noise);
    for (std::size_t i = 0; i < d; ++i) x[i] += (b[i] + u[i]) * dt + sdt * noise[i];
    if (distance(x, target) <= kill_radius) {
      out.cost -= log_green(kernel, x, target);
      return out;
    }
  }
  out.cost -= log_green(kernel, x, target);
  out.capped = true;
  return out;
}

}  // namespace detail

// Monte-Carlo check that the bridge control u* = grad log h minimises
// J(u, x) = E[int_0^tau (r + |u|^2/2) dt - log h(Z_tau)], with J(u*, x) = -log h(x).
// All controls share the noise of path i, so gaps are judged on paired differences.
inline CheckReport check_control_optimality(const HSpec& forward, std::span<const double> start,
                                            ControlCheckConfig cfg) {
  forward.validate();
  const auto* bridge = std::get_if<Bridge>(&forward.variant);
  if (!bridge) throw PreconditionError("check_control_optimality: bridge forward required");
  require(std::find(cfg.scales.begin(), cfg.scales.end(), 0.0) != cfg.scales.end(),
          "check_control_optimality: perturbation scales must include 0");
  require(cfg.runs >= 2 && cfg.kill_radius > 0.0, "check_control_optimality: bad configuration");
  require_dim(start, forward.dim(), "check_control_optimality start");
  require(distance(start, bridge->target) > cfg.kill_radius, "check_control_optimality: start inside kill ball");
  if (cfg.direction.empty()) {
    cfg.direction = difference(bridge->target, start);
    scale(cfg.direction, 0.8 / norm(cfg.direction));
  }
  require_dim(cfg.direction, forward.dim(), "control direction");

  CheckReport rep;
  rep.name = "control-optimality";
  rep.seed = cfg.seed;
  std::vector<std::vector<double>> costs;
  std::size_t capped = 0;
  for (double c : cfg.scales) {
    Vec cv = cfg.direction;
    scale(cv, c);
    const auto runs = parallel_map(cfg.runs, cfg.threads, [&](std::size_t i) {
      return detail::control_cost(forward.kernel, bridge->target, start, cv, cfg.kill_radius, cfg.dt,
                                  stream_seed(cfg.seed, i), cfg.step_cap);
    });
    std::vector<double> v;
    v.reserve(runs.size());
    for (const auto& r : runs) {
      v.push_back(r.cost);
      capped += r.capped;
    }
    costs.push_back(std::move(v));
  }
  const std::size_t base = static_cast<std::size_t>(
      std::find(cfg.scales.begin(), cfg.scales.end(), 0.0) - cfg.scales.begin());
  const auto j0 = stats::mean_se(costs[base]);
  const double log_h = log_green(forward.kernel, start, bridge->target);
  const bool identity_ok = std::abs(j0.mean + log_h) <= 3.0 * j0.se;

  bool gaps_ok = true;
  nlohmann::json per_scale = nlohmann::json::array();
  for (std::size_t s = 0; s < cfg.scales.size(); ++s) {
    const auto js = stats::mean_se(costs[s]);
    nlohmann::json e{{"scale", cfg.scales[s]}, {"J", js.mean}, {"standard_error", js.se}};
    if (s != base) {
      std::vector<double> diff(costs[s].size());
      for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = costs[s][i] - costs[base][i];
      const auto g = stats::mean_se(diff);
      e["gap"] = g.mean;
      e["gap_standard_error"] = g.se;
      gaps_ok = gaps_ok && g.mean >= 2.0 * g.se;
    }
    per_scale.push_back(e);
  }
  // J grows with |c| on each side of 0.
  bool monotone = true;
  for (std::size_t a = 0; a < cfg.scales.size(); ++a)
    for (std::size_t b = 0; b < cfg.scales.size(); ++b) {
      const double ca = cfg.scales[a], cb = cfg.scales[b];
      if (ca * cb >= 0.0 && std::abs(ca) < std::abs(cb) && !(ca == 0.0 && cb == 0.0)) {
        double m_a = 0.0, m_b = 0.0;
        for (std::size_t i = 0; i < costs[a].size(); ++i) {
          m_a += costs[a][i];
          m_b += costs[b][i];
        }
        monotone = monotone && m_a < m_b;
      }
    }
  rep.details["runs"] = cfg.runs;
  rep.details["dt"] = cfg.dt;
  rep.details["kill_radius"] = cfg.kill_radius;
  rep.details["direction"] = cfg.direction;
  rep.details["log_h_start"] = log_h;
  rep.details["J_optimal"] = j0.mean;
  rep.details["J_optimal_standard_error"] = j0.se;
  rep.details["identity_residual"] = j0.mean + log_h;
  rep.details["identity_ok"] = identity_ok;
  rep.details["gaps_ok"] = gaps_ok;
  rep.details["monotone_in_abs_scale"] = monotone;
  rep.details["capped"] = capped;
  rep.details["scales"] = per_scale;
  rep.passed = identity_ok && gaps_ok && monotone && capped == 0;
  return rep;
}

// Largest relative deviation of the sphere-hit drift from the linear
// approximation (2r/d) x over the given radii (radius 0 is skipped since
// both vanish there). Passes when below `tolerance` (no threshold if <= 0).
inline CheckReport check_ou_approx(std::size_t dim, double rate, std::span<const double> radii,
                                   double tolerance = 0.05) {
  require(dim >= 2 && rate > 0.0 && !radii.empty(), "check_ou_approx: bad arguments");
  double rmax = 0.0;
  for (double r : radii) rmax = std::max(rmax, r);
  const HSpec spec = HSpec::sphere(GreenKernel::brownian(dim, rate), 2.0 * rmax + 1.0);
  CheckReport rep;
  rep.name = "ou-approximation";
  double worst = 0.0;
  nlohmann::json rows = nlohmann::json::array();
  for (double radius : radii) {
    require(radius >= 0.0, "check_ou_approx: negative radius");
    Vec x(dim, 0.0);
    x[0] = radius;
    const Vec b = drift(spec, x);
    const double lin = 2.0 * rate / static_cast<double>(dim) * radius;
    double dev = 0.0;
    if (radius > 0.0) dev = std::abs(norm(b) - lin) / lin;
    else require(norm(b) == 0.0, "check_ou_approx: drift at the origin must vanish");
    worst = std::max(worst, dev);
    rows.push_back({{"radius", radius}, {"drift", b[0]}, {"linear", lin}, {"relative_deviation", dev}});
  }
  rep.details["dim"] = dim;
  rep.details["rate"] = rate;
  rep.details["max_relative_deviation"] = worst;
  rep.details["tolerance"] = tolerance;
  rep.details["radii"] = rows;
  rep.passed = tolerance <= 0.0 || worst < tolerance;
  return rep;
}

}  // namespace hdiff
