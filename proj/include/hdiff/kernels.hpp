#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <string>

#include "hdiff/bessel.hpp"
#include "hdiff/core.hpp"

namespace hdiff {

enum class ProcessKind { BrownianMotion, OrnsteinUhlenbeck };

// dZ = b(Z) dt + dW with b = 0 (Brownian motion) or b(x) = -theta x (OU).
struct ProcessSpec {
  ProcessKind kind = ProcessKind::BrownianMotion;
  std::size_t dim = 1;
  double rate = 1.0;      // killing / discount rate r
  double ou_theta = 1.0;  // mean reversion, OU only

  void validate() const {
    require(dim >= 1, "ProcessSpec: dimension must be >= 1");
    require(rate > 0.0 && std::isfinite(rate), "ProcessSpec: rate must be positive");
    if (kind == ProcessKind::OrnsteinUhlenbeck)
      require(ou_theta > 0.0 && std::isfinite(ou_theta), "ProcessSpec: OU theta must be positive");
  }
};

inline Vec base_drift(const ProcessSpec& p, std::span<const double> x) {
  Vec b(x.size(), 0.0);
  if (p.kind == ProcessKind::OrnsteinUhlenbeck)
    for (std::size_t i = 0; i < x.size(); ++i) b[i] = -p.ou_theta * x[i];
  return b;
}

enum class KernelMode { Analytic, Quadrature };

// r-Green kernel G_r(x, y) = int_0^inf e^{-rt} q_t(x, y) dt of the base
// process, where q_t is the transition density with respect to the reference
// measure m (Lebesgue for BM, exp(-theta |y|^2) dy for OU).
struct GreenKernel {
  ProcessSpec process;
  KernelMode mode = KernelMode::Analytic;
  int quad_nodes = 256;
  double quad_t_max = 0.0;  // 0 selects (log(1e12) + rho sqrt(2r)) / r
  double rho_min = 1e-10;
  double tail_tolerance = 1e-8;

  static GreenKernel brownian(std::size_t dim, double rate) {
    GreenKernel k;
    k.process = {ProcessKind::BrownianMotion, dim, rate, 1.0};
    k.mode = KernelMode::Analytic;
    return k;
  }

  static GreenKernel ornstein_uhlenbeck(std::size_t dim, double rate, double theta, int nodes = 256) {
    GreenKernel k;
    k.process = {ProcessKind::OrnsteinUhlenbeck, dim, rate, theta};
    k.mode = KernelMode::Quadrature;
    k.quad_nodes = nodes;
    return k;
  }

  std::size_t dim() const { return process.dim; }
  double rate() const { return process.rate; }

  void validate() const {
    process.validate();
    if (mode == KernelMode::Analytic)
      require(process.kind == ProcessKind::BrownianMotion,
              "GreenKernel: analytic mode is only available for Brownian motion");
    else
      require(quad_nodes >= 16, "GreenKernel: quad_nodes must be >= 16");
    require(quad_t_max >= 0.0, "GreenKernel: quad_t_max must be non-negative");
    require(rho_min > 0.0, "GreenKernel: rho_min must be positive");
  }
};

struct GreenEval {
  double log_value;
  Vec grad;  // gradient of log G_r(x, y) in x
};

namespace detail {

struct GaussLegendre16 {
  std::array<double, 16> nodes{};
  std::array<double, 16> weights{};

  GaussLegendre16() {
    constexpr int n = 16;
    for (int i = 0; i < n / 2; ++i) {
      double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
      double dp = 0.0;
      for (int it = 0; it < 100; ++it) {
        double p0 = 1.0, p1 = 0.0;
        for (int j = 1; j <= n; ++j) {
          const double p2 = p1;
          p1 = p0;
          p0 = ((2.0 * j - 1.0) * x * p1 - (j - 1.0) * p2) / j;
        }
        dp = n * (x * p0 - p1) / (x * x - 1.0);
        const double dx = p0 / dp;
        x -= dx;
        if (std::abs(dx) < 1e-16) break;
      }
      nodes[i] = -x;
      nodes[n - 1 - i] = x;
      weights[i] = weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
  }
};

inline const GaussLegendre16& gauss_legendre16() {
  static const GaussLegendre16 rule;
  return rule;
}

inline double checked_distance(const GreenKernel& k, std::span<const double> x,
                               std::span<const double> y) {
  require_dim(x, k.dim(), "green kernel x");
  require_dim(y, k.dim(), "green kernel y");
  const double rho = distance(x, y);
  if (!(rho >= k.rho_min))
    throw CoincidentPointsError("green kernel: points closer than rho_min (" + std::to_string(rho) +
                                ")");
  return rho;
}

inline GreenEval brownian_green(const GreenKernel& k, std::span<const double> x,
                                std::span<const double> y, double rho, bool want_grad) {
  const double d = static_cast<double>(k.dim());
  const double r = k.rate();
  const double s2r = std::sqrt(2.0 * r);
  GreenEval out{0.0, {}};
  double radial = 0.0;  // d/drho log G
  if (k.dim() == 1) {
    out.log_value = -rho * s2r - 0.5 * std::log(2.0 * r);
    radial = -s2r;
  } else {
    const double nu = 0.5 * (d - 2.0);
    const BesselKValue kv = bessel_K_with_ratio(nu, rho * s2r);
    out.log_value = -0.5 * d * std::log(2.0 * std::numbers::pi) + std::log(2.0) +
                    0.25 * (2.0 - d) * std::log(rho * rho / (2.0 * r)) + kv.log_k;
    radial = -s2r * kv.ratio;
  }
  if (want_grad) {
    out.grad = difference(x, y);
    scale(out.grad, radial / rho);
  }
  return out;
}

inline GreenEval quadrature_green(const GreenKernel& k, std::span<const double> x,
                                  std::span<const double> y, double rho, bool want_grad) {
  const auto& gl = gauss_legendre16();
  const double d = static_cast<double>(k.dim());
  const double r = k.rate();
  const double theta = k.process.kind == ProcessKind::OrnsteinUhlenbeck ? k.process.ou_theta : 0.0;
  const double rho2 = rho * rho;
  const double sx = squared_norm(x) + squared_norm(y);

  const double t_hi = k.quad_t_max > 0.0 ? k.quad_t_max
                                         : (std::log(1e12) + rho * std::sqrt(2.0 * r)) / r;
  const double t_lo = std::min(rho2 / (2.0 * (45.0 + 2.0 * d)), 1e-6 * t_hi);
  const double s_lo = std::log(t_lo);
  const double s_hi = std::log(t_hi);
  const int panels = (k.quad_nodes + 15) / 16;
  const double width = (s_hi - s_lo) / panels;

  // log q_t(x, y) with a = e^{-theta t}, s2 = (1 - a^2)/(2 theta):
  //   -(d/2) log(2 pi s2) - a (|x-y|^2 - (1-a)(|x|^2+|y|^2)) / (2 s2)
  auto log_q = [&](double t, double& a, double& s2) {
    double one_minus_a = 0.0;
    if (theta > 0.0) {
      a = std::exp(-theta * t);
      one_minus_a = -std::expm1(-theta * t);
      s2 = -std::expm1(-2.0 * theta * t) / (2.0 * theta);
    } else {
      a = 1.0;
      s2 = t;
    }
    const double n = rho2 - one_minus_a * sx;
    return -0.5 * d * std::log(2.0 * std::numbers::pi * s2) - a * n / (2.0 * s2);
  };

  const std::size_t total = static_cast<std::size_t>(panels) * 16;
  std::vector<double> logf(total), coef_x(want_grad ? total : 0), coef_y(want_grad ? total : 0);
  std::size_t j = 0;
  for (int p = 0; p < panels; ++p) {
    const double mid = s_lo + (p + 0.5) * width;
    for (int i = 0; i < 16; ++i, ++j) {
      const double s = mid + 0.5 * width * gl.nodes[i];
      const double t = std::exp(s);
      double a = 0.0, s2 = 0.0;
      const double lq = log_q(t, a, s2);
      logf[j] = std::log(0.5 * width * gl.weights[i]) + s - r * t + lq;
      if (want_grad) {
        // grad_x log q_t = -a (a x - y) / s2
        coef_x[j] = -a * a / s2;
        coef_y[j] = a / s2;
      }
    }
  }
  GreenEval out{log_sum_exp(logf), {}};
  {
    double a = 0.0, s2 = 0.0;
    const double log_tail = -r * t_hi - std::log(r) + log_q(t_hi, a, s2);
    if (log_tail - out.log_value > std::log(k.tail_tolerance))
      throw ConvergenceError("green kernel quadrature: tail beyond t_max is not negligible");
  }
  if (!std::isfinite(out.log_value))
    throw ConvergenceError("green kernel quadrature: non-finite result");
  if (want_grad) {
    double cx = 0.0, cy = 0.0;
    for (std::size_t m = 0; m < total; ++m) {
      const double w = std::exp(logf[m] - out.log_value);
      cx += w * coef_x[m];
      cy += w * coef_y[m];
    }
    out.grad.assign(x.size(), 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) out.grad[i] = cx * x[i] + cy * y[i];
  }
  return out;
}

}  // namespace detail

// log G_r(x, y) and, when requested, its gradient in x.
inline GreenEval green_eval(const GreenKernel& k, std::span<const double> x,
                            std::span<const double> y, bool want_grad = true) {
  const double rho = detail::checked_distance(k, x, y);
  if (k.mode == KernelMode::Analytic) return detail::brownian_green(k, x, y, rho, want_grad);
  return detail::quadrature_green(k, x, y, rho, want_grad);
}

inline double log_green(const GreenKernel& k, std::span<const double> x, std::span<const double> y) {
  return green_eval(k, x, y, false).log_value;
}

inline Vec grad_log_green(const GreenKernel& k, std::span<const double> x,
                          std::span<const double> y) {
  return green_eval(k, x, y, true).grad;
}

}  // namespace hdiff
