#pragma once

// Modified Bessel functions I_nu and K_nu of real order nu >= 0 and argument
// z > 0, evaluated in the log domain so that large orders (nu up to a few
// hundred) and arguments in [1e-8, 700] neither overflow nor underflow.
//
// K_nu: Temme's series (z <= 2) or Steed's continued fraction (z > 2) at the
// fractional order mu = nu - round(nu), followed by an upward recurrence on
// the ratio K_{mu+k+1}/K_{mu+k}. The ratio recurrence has only positive terms
// and is stable.
//
// I_nu: positive power series for z < max(10, nu); otherwise the Wronskian
//   I_nu K_{nu+1} + I_{nu+1} K_nu = 1/z
// together with the continued fraction for I_{nu+1}/I_nu.

#include <cfloat>
#include <cmath>
#include <numbers>
#include <string>

#include "hdiff/core.hpp"

namespace hdiff {

struct BesselKValue {
  double log_k;  // log K_nu(z)
  double ratio;  // K_{nu+1}(z) / K_nu(z)
};

namespace detail {

inline void check_bessel_args(double nu, double z, const char* fn) {
  if (!(z > 0.0) || !std::isfinite(z))
    throw DomainError(std::string(fn) + ": argument must be positive and finite, got " +
                      std::to_string(z));
  if (!(nu >= 0.0) || !std::isfinite(nu))
    throw DomainError(std::string(fn) + ": order must be non-negative, got " + std::to_string(nu));
}

// gam1 = (1/Gamma(1-mu) - 1/Gamma(1+mu)) / (2 mu), gam2 = (1/Gamma(1-mu) + 1/Gamma(1+mu)) / 2.
struct TemmeGammas {
  double gam1, gam2, gampl, gammi;
};

inline TemmeGammas temme_gammas(double mu) {
  TemmeGammas g{};
  g.gampl = 1.0 / std::tgamma(1.0 + mu);
  g.gammi = 1.0 / std::tgamma(1.0 - mu);
  g.gam2 = 0.5 * (g.gammi + g.gampl);
  if (std::abs(mu) < 1e-3) {
    // Taylor coefficients of 1/Gamma(z) (Abramowitz & Stegun 6.1.34).
    constexpr double c2 = 0.5772156649015329;
    constexpr double c4 = -0.0420026350340952;
    constexpr double c6 = -0.0421977345555443;
    const double m2 = mu * mu;
    g.gam1 = -(c2 + m2 * (c4 + m2 * c6));
  } else {
    g.gam1 = (g.gammi - g.gampl) / (2.0 * mu);
  }
  return g;
}

// |mu| <= 1/2, 0 < z <= 2.
inline BesselKValue k_temme(double mu, double z) {
  const double x2 = 0.5 * z;
  const double pimu = std::numbers::pi * mu;
  const double fact = std::abs(pimu) < DBL_EPSILON ? 1.0 : pimu / std::sin(pimu);
  double d = -std::log(x2);
  double e = mu * d;
  const double fact2 = std::abs(e) < DBL_EPSILON ? 1.0 : std::sinh(e) / e;
  const TemmeGammas g = temme_gammas(mu);
  double ff = fact * (g.gam1 * std::cosh(e) + g.gam2 * fact2 * d);
  double sum = ff;
  e = std::exp(e);
  double p = 0.5 * e / g.gampl;
  double q = 0.5 / (e * g.gammi);
  double c = 1.0;
  d = x2 * x2;
  double sum1 = p;
  for (int i = 1; i < 10000; ++i) {
    const double fi = i;
    ff = (fi * ff + p + q) / (fi * fi - mu * mu);
    c *= d / fi;
    p /= (fi - mu);
    q /= (fi + mu);
    const double del = c * ff;
    sum += del;
    const double del1 = c * (p - fi * ff);
    sum1 += del1;
    if (std::abs(del) < std::abs(sum) * DBL_EPSILON && std::abs(del1) < std::abs(sum1) * DBL_EPSILON)
      break;
  }
  return {std::log(sum), sum1 * (2.0 / z) / sum};
}

// |mu| <= 1/2, z > 2.
inline BesselKValue k_steed(double mu, double z) {
  double b = 2.0 * (1.0 + z);
  double d = 1.0 / b;
  double h = d;
  double delh = d;
  double q1 = 0.0;
  double q2 = 1.0;
  const double a1 = 0.25 - mu * mu;
  double q = a1;
  double c = a1;
  double a = -a1;
  double s = 1.0 + q * delh;
  for (int i = 1; i < 100000; ++i) {
    const double fi = i;
    a -= 2.0 * fi;
    c = -a * c / (fi + 1.0);
    const double qnew = (q1 - b * q2) / a;
    q1 = q2;
    q2 = qnew;
    q += c * qnew;
    b += 2.0;
    d = 1.0 / (b + a * d);
    delh = (b * d - 1.0) * delh;
    h += delh;
    const double dels = q * delh;
    s += dels;
    if (std::abs(dels / s) < DBL_EPSILON) break;
  }
  h *= a1;
  const double log_k = 0.5 * std::log(std::numbers::pi / (2.0 * z)) - z - std::log(s);
  return {log_k, (mu + z + 0.5 - h) / z};
}

}  // namespace detail

// log K_nu(z) and K_{nu+1}(z)/K_nu(z).
inline BesselKValue bessel_K_with_ratio(double nu, double z) {
  detail::check_bessel_args(nu, z, "bessel_log_K");
  const double nl = std::floor(nu + 0.5);
  const double mu = nu - nl;
  BesselKValue v;
  if (mu == -0.5) {
    // K_{-1/2} = K_{1/2} = sqrt(pi/(2z)) e^{-z}
    v = {0.5 * std::log(std::numbers::pi / (2.0 * z)) - z, 1.0};
  } else if (z <= 2.0) {
    v = detail::k_temme(mu, z);
  } else {
    v = detail::k_steed(mu, z);
  }
  const int steps = static_cast<int>(nl);
  for (int k = 1; k <= steps; ++k) {
    v.log_k += std::log(v.ratio);
    v.ratio = 1.0 / v.ratio + 2.0 * (mu + k) / z;
  }
  return v;
}

inline double bessel_log_K(double nu, double z) { return bessel_K_with_ratio(nu, z).log_k; }

// I_{nu+1}(z) / I_nu(z), in [0, 1). Zero at z = 0.
inline double bessel_ratio_I(double nu, double z) {
  if (!(nu >= 0.0) || !std::isfinite(nu))
    throw DomainError("bessel_ratio_I: order must be non-negative, got " + std::to_string(nu));
  if (!(z >= 0.0) || !std::isfinite(z))
    throw DomainError("bessel_ratio_I: argument must be non-negative, got " + std::to_string(z));
  if (z == 0.0) return 0.0;
  // Modified Lentz on 1/(b1 + 1/(b2 + ...)), b_j = 2(nu+j)/z.
  constexpr double tiny = 1e-300;
  double f = tiny;
  double c = f;
  double d = 0.0;
  for (int j = 1; j < 1000000; ++j) {
    const double b = 2.0 * (nu + j) / z;
    d = b + d;
    if (d == 0.0) d = tiny;
    c = b + 1.0 / c;
    if (c == 0.0) c = tiny;
    d = 1.0 / d;
    const double delta = c * d;
    f *= delta;
    if (std::abs(delta - 1.0) < 4.0 * DBL_EPSILON) return f;
  }
  throw ConvergenceError("bessel_ratio_I: continued fraction did not converge");
}

inline double bessel_log_I(double nu, double z) {
  detail::check_bessel_args(nu, z, "bessel_log_I");
  if (z < std::max(10.0, nu)) {
    const double q = 0.25 * z * z;
    double term = 1.0;
    double sum = 1.0;
    for (int k = 0; k < 100000; ++k) {
      term *= q / ((k + 1.0) * (k + 1.0 + nu));
      sum += term;
      if (term < sum * (0.25 * DBL_EPSILON)) break;
    }
    if (std::isfinite(sum)) return nu * std::log(0.5 * z) - std::lgamma(nu + 1.0) + std::log(sum);
  }
  const BesselKValue k = bessel_K_with_ratio(nu, z);
  const double f = bessel_ratio_I(nu, z);
  return -std::log(z) - k.log_k - std::log(k.ratio + f);
}

}  // namespace hdiff
