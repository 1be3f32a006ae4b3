// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <numbers>

#include "ldar/errors.hpp"

namespace ldar::special {

// ln(1 + e^x), linear above 30 where e^-x vanishes in double precision.
inline double softplus(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

// Inverse of softplus for y > 0.
inline double softplus_inverse(double y) {
  if (!(y > 0.0)) throw DomainError("softplus_inverse: argument must be positive");
  if (y > 30.0) return y;
  return std::log(std::expm1(y));
}

inline double sigmoid(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Exact GELU, x * Phi(x).
inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

inline double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

inline double checked_log(double x) {
  if (!(x > 0.0)) throw DomainError("log: argument must be positive");
  return std::log(x);
}

// Lanczos approximation, g = 7 with nine coefficients. Arguments below 0.5
// go through the reflection formula so the series is only evaluated on
// [0.5, inf).
inline double lgamma(double x) {
  if (!(x > 0.0) || !std::isfinite(x)) throw DomainError("lgamma: argument must be positive and finite");
  static constexpr std::array<double, 9> kCoef = {
      0.99999999999980993,     676.5203681218851,     -1259.1392167224028,
      771.32342877765313,      -176.61502916214059,   12.507343278686905,
      -0.13857109526572012,    9.9843695780195716e-6, 1.5056327351493116e-7};
  if (x < 0.5) {
    // Gamma(x) Gamma(1 - x) = pi / sin(pi x); sin(pi x) > 0 on (0, 0.5).
    return std::log(std::numbers::pi / std::sin(std::numbers::pi * x)) - lgamma(1.0 - x);
  }
  // Gamma(1) and Gamma(2) are exactly one; pin them so the series' last-bit
  // residue does not leak into uniform-density log-probabilities.
  if (x == 1.0 || x == 2.0) return 0.0;
  const double z = x - 1.0;
  double series = kCoef[0];
  for (int i = 1; i < 9; ++i) series += kCoef[i] / (z + i);
  const double t = z + 7.5;
  return 0.5 * std::log(2.0 * std::numbers::pi) + (z + 0.5) * std::log(t) - t + std::log(series);
}

// Recurrence psi(x) = psi(x + 1) - 1/x up to x >= 6, then the asymptotic
// series in 1/x^2 through the x^-12 term.
inline double digamma(double x) {
  if (!(x > 0.0) || !std::isfinite(x)) throw DomainError("digamma: argument must be positive and finite");
  double shift = 0.0;
  while (x < 10.0) {
    shift -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  const double tail =
      inv2 * (1.0 / 12.0 -
              inv2 * (1.0 / 120.0 -
                      inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0 - inv2 * 691.0 / 32760.0)))));
  return shift + std::log(x) - 0.5 * inv - tail;
}

}  // namespace ldar::special
