#pragma once

// Correlation and goodness-of-fit statistics.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "tvae/errors.hpp"

namespace tvae {

inline double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || a.size() != b.size()) throw DegenerateInput("pearson needs equal nonzero lengths");
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (!(saa > 0.0) || !(sbb > 0.0)) throw DegenerateInput("pearson undefined: constant series");
  return sab / std::sqrt(saa * sbb);
}

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

// Asymptotic Kolmogorov distribution tail, Q(lambda) = 2 sum (-1)^(k-1) exp(-2 k^2 lambda^2).
inline double kolmogorov_tail(double lambda) {
  if (lambda < 0.2) return 1.0;
  double sum = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    sum += (k % 2 ? term : -term);
    if (term < 1e-16) break;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

// One-sample Kolmogorov-Smirnov test against Uniform(lo, hi), with the
// Stephens small-sample correction on the statistic.
inline KsResult ks_uniform(std::vector<double> x, double lo, double hi) {
  if (x.empty()) throw DegenerateInput("KS test of an empty sample");
  if (!(hi > lo)) throw InvalidArgument("KS test needs hi > lo");
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = std::clamp((x[i] - lo) / (hi - lo), 0.0, 1.0);
    d = std::max({d, (i + 1) / n - f, f - i / n});
  }
  const double sn = std::sqrt(n);
  return {d, kolmogorov_tail((sn + 0.12 + 0.11 / sn) * d)};
}

}  // namespace tvae
