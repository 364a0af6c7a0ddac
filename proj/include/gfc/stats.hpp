#pragma once

// Sample statistics, normality tests, bootstrap intervals and log-log fits.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>

#include "gfc/error.hpp"
#include "gfc/rng.hpp"

namespace gfc {

/// Pairwise (cascade) summation; result does not depend on thread scheduling.
inline double pairwise_sum(std::span<const double> x) {
  if (x.size() <= 16) {
    double s = 0.0;
    for (double v : x) s += v;
    return s;
  }
  const std::size_t half = x.size() / 2;
  return pairwise_sum(x.first(half)) + pairwise_sum(x.subspan(half));
}

inline double mean(std::span<const double> x) {
  if (x.empty()) throw InvalidArgument("mean of empty sample");
  return pairwise_sum(x) / static_cast<double>(x.size());
}

/// Unbiased sample variance (n - 1 denominator).
inline double sample_variance(std::span<const double> x) {
  if (x.size() < 2) throw InvalidArgument("variance needs at least two values");
  const double m = mean(x);
  std::vector<double> sq(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) sq[i] = (x[i] - m) * (x[i] - m);
  return pairwise_sum(sq) / static_cast<double>(x.size() - 1);
}

inline double std_error(std::span<const double> x) {
  return std::sqrt(sample_variance(x) / static_cast<double>(x.size()));
}

struct MomentSummary {
  std::size_t n = 0;
  double mean = 0.0;
  double variance = 0.0;  // unbiased
  double skewness = 0.0;  // g1 = m3 / m2^{3/2}
  double excess_kurtosis = 0.0;  // g2 = m4 / m2^2 - 3
};

inline MomentSummary summarize(std::span<const double> x) {
  MomentSummary s;
  s.n = x.size();
  s.mean = mean(x);
  const std::size_t n = x.size();
  std::vector<double> c2(n), c3(n), c4(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double c = x[i] - s.mean;
    c2[i] = c * c;
    c3[i] = c2[i] * c;
    c4[i] = c2[i] * c2[i];
  }
  const double nn = static_cast<double>(n);
  const double m2 = pairwise_sum(c2) / nn;
  const double m3 = pairwise_sum(c3) / nn;
  const double m4 = pairwise_sum(c4) / nn;
  s.variance = n > 1 ? m2 * nn / (nn - 1.0) : 0.0;
  if (m2 > 0.0) {
    s.skewness = m3 / std::pow(m2, 1.5);
    s.excess_kurtosis = m4 / (m2 * m2) - 3.0;
  }
  return s;
}

inline double normal_cdf(double z) {
  return boost::math::cdf(boost::math::normal_distribution<double>(), z);
}

inline double normal_quantile(double p) {
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

/// Kolmogorov survival function Q(lambda) = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 lambda^2).
inline double kolmogorov_q(double lambda) {
  if (lambda < 1e-3) return 1.0;
  double sum = 0.0;
  for (int k = 1; k <= 200; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    sum += (k % 2 == 1 ? term : -term);
    if (term < 1e-17) break;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

/// One-sample KS test of x against the cdf; p-value from the asymptotic law with the
/// small-sample correction lambda = (sqrt(n) + 0.12 + 0.11 / sqrt(n)) * D.
inline KsResult ks_test(std::vector<double> x, const std::function<double(double)>& cdf) {
  if (x.empty()) throw InvalidArgument("KS test of empty sample");
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = cdf(x[i]);
    d = std::max({d, (static_cast<double>(i) + 1.0) / n - f, f - static_cast<double>(i) / n});
  }
  const double sn = std::sqrt(n);
  return {d, kolmogorov_q((sn + 0.12 + 0.11 / sn) * d)};
}

inline KsResult ks_test_normal(std::vector<double> x) { return ks_test(std::move(x), normal_cdf); }

struct K2Result {
  double z_skew = 0.0;
  double z_kurt = 0.0;
  double statistic = 0.0;
  double p_value = 1.0;
};

/// D'Agostino-Pearson omnibus test (n >= 20).
inline K2Result dagostino_k2(std::span<const double> x) {
  const double n = static_cast<double>(x.size());
  if (x.size() < 20) throw InvalidArgument("D'Agostino test needs n >= 20");
  const MomentSummary s = summarize(x);
  const double g1 = s.skewness;
  const double b2 = s.excess_kurtosis + 3.0;

  const double y = g1 * std::sqrt((n + 1) * (n + 3) / (6.0 * (n - 2)));
  const double beta2 = 3.0 * (n * n + 27 * n - 70) * (n + 1) * (n + 3) /
                       ((n - 2) * (n + 5) * (n + 7) * (n + 9));
  const double w2 = -1.0 + std::sqrt(2.0 * (beta2 - 1.0));
  const double delta = 1.0 / std::sqrt(0.5 * std::log(w2));
  const double alpha = std::sqrt(2.0 / (w2 - 1.0));
  const double ya = y / alpha;
  const double z1 = delta * std::log(ya + std::sqrt(ya * ya + 1.0));

  const double eb2 = 3.0 * (n - 1) / (n + 1);
  const double vb2 = 24.0 * n * (n - 2) * (n - 3) / ((n + 1) * (n + 1) * (n + 3) * (n + 5));
  const double xk = (b2 - eb2) / std::sqrt(vb2);
  const double sqrtbeta1 = 6.0 * (n * n - 5 * n + 2) / ((n + 7) * (n + 9)) *
                           std::sqrt(6.0 * (n + 3) * (n + 5) / (n * (n - 2) * (n - 3)));
  const double a = 6.0 + 8.0 / sqrtbeta1 * (2.0 / sqrtbeta1 + std::sqrt(1.0 + 4.0 / (sqrtbeta1 * sqrtbeta1)));
  const double t = (1.0 - 2.0 / a) / (1.0 + xk * std::sqrt(2.0 / (a - 4.0)));
  const double z2 = ((1.0 - 2.0 / (9.0 * a)) - std::cbrt(t)) / std::sqrt(2.0 / (9.0 * a));

  K2Result r;
  r.z_skew = z1;
  r.z_kurt = z2;
  r.statistic = z1 * z1 + z2 * z2;
  r.p_value = boost::math::cdf(boost::math::complement(boost::math::chi_squared_distribution<double>(2.0), r.statistic));
  return r;
}

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  bool contains(double v) const { return lo <= v && v <= hi; }
  bool overlaps(const Interval& o) const { return lo <= o.hi && o.lo <= hi; }
};

/// Normal-approximation interval mean +- z * se at the given coverage.
inline Interval normal_interval(double center, double se, double coverage = 0.95) {
  const double z = normal_quantile(0.5 + coverage / 2.0);
  return {center - z * se, center + z * se};
}

inline double percentile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw InvalidArgument("percentile of empty sample");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto i = static_cast<std::size_t>(std::floor(pos));
  const std::size_t j = std::min(i + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(i);
  return sorted[i] * (1.0 - frac) + sorted[j] * frac;
}

/// Percentile bootstrap interval of statistic(x).
inline Interval bootstrap_ci(std::span<const double> x,
                             const std::function<double(std::span<const double>)>& statistic,
                             int resamples, double coverage, std::uint64_t seed) {
  Xoshiro256 rng(seed);
  std::vector<double> stats(static_cast<std::size_t>(resamples));
  std::vector<double> buf(x.size());
  for (int b = 0; b < resamples; ++b) {
    for (auto& v : buf) v = x[static_cast<std::size_t>(rng.uniform() * static_cast<double>(x.size())) % x.size()];
    stats[static_cast<std::size_t>(b)] = statistic(buf);
  }
  std::sort(stats.begin(), stats.end());
  const double tail = (1.0 - coverage) / 2.0;
  return {percentile_sorted(stats, tail), percentile_sorted(stats, 1.0 - tail)};
}

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
};

/// Ordinary least squares y = intercept + slope * x.
inline LineFit least_squares(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw InvalidArgument("least squares needs >= 2 paired points");
  const double mx = mean(x), my = mean(y);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx == 0.0) throw InvalidArgument("least squares with constant abscissa");
  return {sxy / sxx, my - sxy / sxx * mx};
}

struct SlopeEstimate {
  double slope = 0.0;
  Interval ci;
  std::vector<double> log_x;
  std::vector<double> log_y;
};

/// Slope of log E[X^k] against log R, where samples[i] holds trial values at R[i].
/// The interval resamples trials independently within each R.
inline SlopeEstimate loglog_moment_slope(std::span<const double> radii,
                                         const std::vector<std::vector<double>>& samples, int power,
                                         int resamples, double coverage, std::uint64_t seed) {
  if (radii.size() != samples.size() || radii.size() < 2) throw InvalidArgument("slope fit needs >= 2 radii");
  auto moment = [power](std::span<const double> v) {
    std::vector<double> p(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) p[i] = std::pow(v[i], power);
    return mean(p);
  };
  SlopeEstimate out;
  for (std::size_t i = 0; i < radii.size(); ++i) {
    const double m = moment(samples[i]);
    if (!(m > 0.0)) throw InvalidArgument("log-log fit needs positive moments");
    out.log_x.push_back(std::log(radii[i]));
    out.log_y.push_back(std::log(m));
  }
  out.slope = least_squares(out.log_x, out.log_y).slope;

  Xoshiro256 rng(seed);
  std::vector<double> slopes;
  std::vector<double> ly(radii.size());
  std::vector<double> buf;
  for (int b = 0; b < resamples; ++b) {
    bool ok = true;
    for (std::size_t i = 0; i < radii.size(); ++i) {
      const auto& s = samples[i];
      buf.resize(s.size());
      for (auto& v : buf) v = s[static_cast<std::size_t>(rng.uniform() * static_cast<double>(s.size())) % s.size()];
      const double m = moment(buf);
      if (!(m > 0.0)) { ok = false; break; }
      ly[i] = std::log(m);
    }
    if (ok) slopes.push_back(least_squares(out.log_x, ly).slope);
  }
  if (slopes.empty()) {
    out.ci = {out.slope, out.slope};
  } else {
    std::sort(slopes.begin(), slopes.end());
    const double tail = (1.0 - coverage) / 2.0;
    out.ci = {percentile_sorted(slopes, tail), percentile_sorted(slopes, 1.0 - tail)};
  }
  return out;
}

}  // namespace gfc
