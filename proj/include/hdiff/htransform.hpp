#pragma once

#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "hdiff/bessel.hpp"
#include "hdiff/core.hpp"
#include "hdiff/kernels.hpp"
#include "hdiff/mlp.hpp"
#include "hdiff/point_cloud.hpp"

namespace hdiff {

struct HSpec;

// h = 1: the forward process is the base process killed at an independent
// Exp(r) time.
struct ConstantH {};

// h(x) = G_r(x, x1): exponential bridge killed at x1.
struct Bridge {
  Vec target;
  double kill_radius = 0.0;  // states closer than this to x1 are outside the drift's domain
};

// h(x) = |x|^{-nu} I_nu(|x| sqrt(2r)), nu = (d-2)/2: Brownian motion
// conditioned to be killed on the sphere of radius R. Brownian kernel only.
struct SphereHit {
  double radius = 1.0;
};

// Backward function of a discrete data distribution,
//   h_back(x) = sum_i w_i G_r(x, y_i) / h(y_i),
// for one of the three forward variants above.
struct DiscreteBackward {
  std::shared_ptr<const PointCloud> data;
  std::shared_ptr<const HSpec> forward;
  std::vector<double> log_mass;  // log w_i - log h(y_i)
};

// Backward drift b + s_theta learned by score matching.
struct LearnedBackward {
  std::shared_ptr<const ScoreParams> score;
  std::shared_ptr<const HSpec> forward;
};

using HVariant = std::variant<ConstantH, Bridge, SphereHit, DiscreteBackward, LearnedBackward>;

struct HSpec {
  GreenKernel kernel;
  HVariant variant;
  double drift_limit = 1e6;  // D_max: the integrator clips drift norms above this

  static HSpec constant(GreenKernel k) { return {std::move(k), ConstantH{}}; }

  static HSpec bridge(GreenKernel k, Vec target, double kill_radius = 0.0) {
    return {std::move(k), Bridge{std::move(target), kill_radius}};
  }

  static HSpec sphere(GreenKernel k, double radius) { return {std::move(k), SphereHit{radius}}; }

  std::size_t dim() const { return kernel.dim(); }

  bool is_forward() const { return variant.index() <= 2; }

  const char* variant_name() const {
    static constexpr const char* names[] = {"constant", "bridge", "sphere", "discrete-backward",
                                            "learned-backward"};
    return names[variant.index()];
  }

  void validate() const {
    kernel.validate();
    if (const auto* b = std::get_if<Bridge>(&variant)) {
      require_dim(b->target, dim(), "Bridge target");
      require(b->kill_radius >= 0.0, "Bridge: kill radius must be non-negative");
    } else if (const auto* s = std::get_if<SphereHit>(&variant)) {
      require(kernel.process.kind == ProcessKind::BrownianMotion,
              "SphereHit requires a Brownian motion kernel");
      require(dim() >= 2, "SphereHit requires dimension >= 2");
      require(s->radius > 0.0, "SphereHit: radius must be positive");
    } else if (const auto* d = std::get_if<DiscreteBackward>(&variant)) {
      require(d->data && !d->data->empty(), "DiscreteBackward: empty data");
      require(d->forward && d->forward->is_forward(), "DiscreteBackward: forward must be a forward variant");
      require(d->log_mass.size() == d->data->size(), "DiscreteBackward: inconsistent masses");
    } else if (const auto* l = std::get_if<LearnedBackward>(&variant)) {
      require(l->score != nullptr, "LearnedBackward: missing score");
      require(l->score->dim() == dim(), "LearnedBackward: score dimension mismatch");
      require(l->forward && l->forward->is_forward(), "LearnedBackward: forward must be a forward variant");
    }
  }
};

inline double sphere_order(std::size_t dim) { return 0.5 * (static_cast<double>(dim) - 2.0); }

// log h(y) up to a variant-wide additive constant.
inline double h_value(const HSpec& spec, std::span<const double> y) {
  require_dim(y, spec.dim(), "h_value");
  return std::visit(
      [&](const auto& v) -> double {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, ConstantH>) {
          return 0.0;
        } else if constexpr (std::is_same_v<T, Bridge>) {
          return log_green(spec.kernel, y, v.target);
        } else if constexpr (std::is_same_v<T, SphereHit>) {
          const double nu = sphere_order(spec.dim());
          const double s2r = std::sqrt(2.0 * spec.kernel.rate());
          const double rho = norm(y);
          if (rho == 0.0) return nu * std::log(0.5 * s2r) - std::lgamma(nu + 1.0);
          return -nu * std::log(rho) + bessel_log_I(nu, rho * s2r);
        } else if constexpr (std::is_same_v<T, DiscreteBackward>) {
          std::vector<double> terms(v.data->size());
          for (std::size_t i = 0; i < terms.size(); ++i)
            terms[i] = v.log_mass[i] + log_green(spec.kernel, y, v.data->point(i));
          return log_sum_exp(terms);
        } else {
          throw PreconditionError("h_value: a learned backward has no closed-form h");
        }
      },
      spec.variant);
}

namespace detail {

// Log-weights log w_i + log G(x, y_i) - log h(y_i) and the gradient of the
// log-sum-exp of those weights, i.e. grad log h_back(x).
inline double discrete_backward_terms(const HSpec& spec, const DiscreteBackward& v,
                                      std::span<const double> x, std::vector<double>& logs,
                                      Vec* grad) {
  const std::size_t n = v.data->size();
  const std::size_t d = spec.dim();
  logs.resize(n);
  if (spec.kernel.mode == KernelMode::Analytic && d >= 2) {
    // Brownian fast path without per-point allocations.
    thread_local std::vector<double> coef;
    coef.resize(n);
    const double r = spec.kernel.rate();
    const double s2r = std::sqrt(2.0 * r);
    const double nu = 0.5 * (static_cast<double>(d) - 2.0);
    const double cst = -0.5 * d * std::log(2.0 * std::numbers::pi) + std::log(2.0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto y = v.data->point(i);
      const double rho = distance(x, y);
      if (!(rho >= spec.kernel.rho_min))
        throw CoincidentPointsError("backward drift: state coincides with a data point");
      const BesselKValue kv = bessel_K_with_ratio(nu, rho * s2r);
      logs[i] = v.log_mass[i] + cst + 0.25 * (2.0 - d) * std::log(rho * rho / (2.0 * r)) + kv.log_k;
      coef[i] = -s2r * kv.ratio / rho;
    }
    const double lse = log_sum_exp(logs);
    if (grad) {
      grad->assign(d, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        const double p = std::exp(logs[i] - lse);
        if (p == 0.0) continue;
        const auto y = v.data->point(i);
        const double c = p * coef[i];
        for (std::size_t k = 0; k < d; ++k) (*grad)[k] += c * (x[k] - y[k]);
      }
    }
    return lse;
  }
  thread_local std::vector<Vec> grads;
  grads.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    GreenEval g = green_eval(spec.kernel, x, v.data->point(i), grad != nullptr);
    logs[i] = v.log_mass[i] + g.log_value;
    grads[i] = std::move(g.grad);
  }
  const double lse = log_sum_exp(logs);
  if (grad) {
    grad->assign(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) axpy(std::exp(logs[i] - lse), grads[i], *grad);
  }
  return lse;
}

}  // namespace detail

// Drift b^h(x) = b(x) + grad log h(x) of the h-transformed process.
inline Vec drift(const HSpec& spec, std::span<const double> x) {
  require_dim(x, spec.dim(), "drift");
  Vec out = std::visit(
      [&](const auto& v) -> Vec {
        using T = std::decay_t<decltype(v)>;
        Vec b = base_drift(spec.kernel.process, x);
        if constexpr (std::is_same_v<T, ConstantH>) {
          return b;
        } else if constexpr (std::is_same_v<T, Bridge>) {
          if (v.kill_radius > 0.0 && distance(x, v.target) < v.kill_radius)
            throw PreconditionError("bridge drift: state inside the kill ball");
          axpy(1.0, grad_log_green(spec.kernel, x, v.target), b);
          return b;
        } else if constexpr (std::is_same_v<T, SphereHit>) {
          const double rho = norm(x);
          if (!(rho < v.radius)) throw PreconditionError("sphere drift: state outside the ball");
          if (rho == 0.0) return b;
          const double s2r = std::sqrt(2.0 * spec.kernel.rate());
          const double ratio = bessel_ratio_I(sphere_order(spec.dim()), rho * s2r);
          axpy(s2r * ratio / rho, x, b);
          return b;
        } else if constexpr (std::is_same_v<T, DiscreteBackward>) {
          thread_local std::vector<double> logs;
          Vec g;
          detail::discrete_backward_terms(spec, v, x, logs, &g);
          axpy(1.0, g, b);
          return b;
        } else {
          thread_local MlpWorkspace ws;
          axpy(1.0, score_eval(*v.score, x, ws), b);
          return b;
        }
      },
      spec.variant);
  if (!all_finite(out)) throw DriftOverflowError(std::string("drift: non-finite value for ") + spec.variant_name());
  return out;
}

// Law of the backward endpoint when started at x:
//   p_i proportional to w_i G_r(x, y_i) / h(y_i).
inline std::vector<double> posterior_endpoint_law(const HSpec& spec, std::span<const double> x) {
  const auto* v = std::get_if<DiscreteBackward>(&spec.variant);
  if (!v) throw PreconditionError("posterior_endpoint_law: requires a discrete backward");
  if (!v->data || v->data->empty()) throw EmptyDataError("posterior_endpoint_law: empty point cloud");
  require_dim(x, spec.dim(), "posterior_endpoint_law");
  std::vector<double> logs;
  const double lse = detail::discrete_backward_terms(spec, *v, x, logs, nullptr);
  std::vector<double> p(logs.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::exp(logs[i] - lse);
  return p;
}

}  // namespace hdiff
