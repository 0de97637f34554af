#ifndef NLME_DIAGNOSTICS_HPP
#define NLME_DIAGNOSTICS_HPP

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <string>
#include <vector>

#include "nlme/errors.hpp"
#include "nlme/model.hpp"
#include "nlme/samplers.hpp"

namespace nlme {

/// Inverted-CDF (type 1) quantile of an ascending sample: x_(j) with
/// j = ceil(n * prob), clamped to [1, n].
inline double type1_quantile_sorted(const double* sorted, std::size_t n, double prob) {
  const double np = static_cast<double>(n) * prob;
  const double nearest = std::round(np);
  double j = std::abs(np - nearest) <= 1e-9 * std::max(1.0, np) ? nearest : std::ceil(np);
  j = std::clamp(j, 1.0, static_cast<double>(n));
  return sorted[static_cast<std::size_t>(j) - 1];
}

inline double type1_quantile(std::vector<double> values, double prob) {
  if (values.empty()) throw InputError("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  return type1_quantile_sorted(values.data(), values.size(), prob);
}

/// Running quantiles of a chain: value(k, o, l) is the type-1 quantile of
/// order orders[o] of coordinate l over states[burn_in .. k].
struct QuantileTrace {
  std::vector<double> orders;
  Index burn_in = 0;
  Index dim = 0;
  Index count = 0;  // iterations covered: burn_in .. burn_in + count - 1
  std::vector<double> values;

  double at(Index iteration, std::size_t order, Index coord) const {
    const Index row = iteration - burn_in;
    return values[(static_cast<std::size_t>(row) * orders.size() + order) * static_cast<std::size_t>(dim) +
                  static_cast<std::size_t>(coord)];
  }
};

inline QuantileTrace running_quantiles(const Chain& chain, const std::vector<double>& orders = {0.1, 0.5, 0.9},
                                       Index burn_in = 0) {
  if (burn_in < 0 || burn_in >= chain.length()) throw InputError("running_quantiles: burn_in out of range");
  for (double o : orders) {
    if (!(o > 0.0 && o < 1.0)) throw InputError("running_quantiles: orders must lie in (0, 1)");
  }
  QuantileTrace tr;
  tr.orders = orders;
  tr.burn_in = burn_in;
  tr.dim = chain.dim();
  tr.count = chain.length() - burn_in;
  tr.values.resize(static_cast<std::size_t>(tr.count) * orders.size() * static_cast<std::size_t>(tr.dim));

  for (Index l = 0; l < tr.dim; ++l) {
    std::vector<double> sorted;
    sorted.reserve(static_cast<std::size_t>(tr.count));
    for (Index k = burn_in; k < chain.length(); ++k) {
      const double x = chain.states(l, k);
      sorted.insert(std::upper_bound(sorted.begin(), sorted.end(), x), x);
      const std::size_t row = static_cast<std::size_t>(k - burn_in);
      for (std::size_t o = 0; o < orders.size(); ++o) {
        tr.values[(row * orders.size() + o) * static_cast<std::size_t>(tr.dim) + static_cast<std::size_t>(l)] =
            type1_quantile_sorted(sorted.data(), sorted.size(), orders[o]);
      }
    }
  }
  return tr;
}

/// Fraction of accepted transitions (the initial state is not a transition).
inline double acceptance_rate(const Chain& chain) {
  if (chain.length() < 2) throw InputError("acceptance_rate: chain needs at least two states");
  Index acc = 0;
  for (Index k = 1; k < chain.length(); ++k) acc += chain.accepted[static_cast<std::size_t>(k)] ? 1 : 0;
  return static_cast<double>(acc) / static_cast<double>(chain.length() - 1);
}

struct CoordinateStats {
  double min = 0, q25 = 0, median = 0, q75 = 0, max = 0;
};

inline CoordinateStats coordinate_stats(std::vector<double> v) {
  if (v.empty()) throw InputError("coordinate_stats: empty sample");
  std::sort(v.begin(), v.end());
  CoordinateStats s;
  s.min = v.front();
  s.max = v.back();
  s.q25 = type1_quantile_sorted(v.data(), v.size(), 0.25);
  s.median = type1_quantile_sorted(v.data(), v.size(), 0.5);
  s.q75 = type1_quantile_sorted(v.data(), v.size(), 0.75);
  return s;
}

/// Maps latent-space statistics through the coordinate transform. Exact for
/// order statistics because the transforms are increasing.
inline CoordinateStats to_psi(const CoordinateStats& s, Transform t) {
  if (t == Transform::identity) return s;
  return {std::exp(s.min), std::exp(s.q25), std::exp(s.median), std::exp(s.q75), std::exp(s.max)};
}

struct ThresholdSummary {
  Index iteration = 0;
  Matrix states;  // runs x p: every run's state at `iteration`
  std::vector<CoordinateStats> stats;
};

struct ReplicateSummary {
  std::vector<ThresholdSummary> thresholds;
  std::vector<CoordinateStats> reference;
  Index reference_burn_in = 0;
};

/// Collects each run's state at the given iterations and summarizes the
/// reference chain after `reference_burn_in`.
inline ReplicateSummary replicate_summary(const std::vector<Chain>& chains, const std::vector<Index>& thresholds,
                                          const Chain& reference, Index reference_burn_in) {
  if (chains.empty()) throw InputError("replicate_summary: no chains");
  const Index len = chains.front().length();
  const Index p = chains.front().dim();
  for (const Chain& c : chains) {
    if (c.length() != len || c.dim() != p) throw InputError("replicate_summary: chains differ in length");
  }
  if (reference.dim() != p) throw InputError("replicate_summary: reference dimension mismatch");
  if (reference_burn_in < 0 || reference_burn_in >= reference.length()) {
    throw InputError("replicate_summary: reference burn-in out of range");
  }

  ReplicateSummary out;
  out.reference_burn_in = reference_burn_in;
  for (Index k : thresholds) {
    if (k < 0 || k >= len) throw InputError("replicate_summary: threshold " + std::to_string(k) + " exceeds run length");
    ThresholdSummary ts;
    ts.iteration = k;
    ts.states.resize(static_cast<Index>(chains.size()), p);
    for (std::size_t r = 0; r < chains.size(); ++r) ts.states.row(static_cast<Index>(r)) = chains[r].states.col(k);
    for (Index l = 0; l < p; ++l) {
      std::vector<double> col(ts.states.col(l).data(), ts.states.col(l).data() + ts.states.rows());
      ts.stats.push_back(coordinate_stats(std::move(col)));
    }
    out.thresholds.push_back(std::move(ts));
  }
  for (Index l = 0; l < p; ++l) {
    std::vector<double> col;
    col.reserve(static_cast<std::size_t>(reference.length() - reference_burn_in));
    for (Index k = reference_burn_in; k < reference.length(); ++k) col.push_back(reference.states(l, k));
    out.reference.push_back(coordinate_stats(std::move(col)));
  }
  return out;
}

/// Effective sample size of a scalar series.
///
/// Autocorrelations come from an FFT and are summed with Geyer's initial
/// positive (and monotone) sequence. The result is capped by the number of
/// runs of identical consecutive values, clamped to [1, n], and a series with
/// zero variance is assigned ESS = n.
inline double effective_sample_size(const std::vector<double>& x) {
  const std::size_t n = x.size();
  if (n < 10) throw InputError("effective_sample_size: need at least 10 samples");
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  if (!(var > 0.0)) return static_cast<double>(n);

  std::size_t nfft = 1;
  while (nfft < 2 * n) nfft <<= 1;
  std::vector<double> padded(nfft, 0.0);
  for (std::size_t t = 0; t < n; ++t) padded[t] = x[t] - mean;
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> spec;
  fft.fwd(spec, padded);
  for (auto& c : spec) c = std::complex<double>(std::norm(c), 0.0);
  std::vector<double> acov;
  fft.inv(acov, spec);
  const double c0 = acov[0];

  double sum = 0.0;
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t m = 0; 2 * m + 1 < n; ++m) {
    double pair = (acov[2 * m] + acov[2 * m + 1]) / c0;
    if (!(pair > 0.0)) break;
    pair = std::min(pair, prev);
    prev = pair;
    sum += pair;
  }
  const double tau = std::max(-1.0 + 2.0 * sum, 1.0 / static_cast<double>(n));
  double ess = static_cast<double>(n) / tau;

  std::size_t runs = 1;
  for (std::size_t t = 1; t < n; ++t) runs += x[t] != x[t - 1] ? 1 : 0;
  ess = std::min(ess, static_cast<double>(runs));
  return std::clamp(ess, 1.0, static_cast<double>(n));
}

/// Per-coordinate ESS of chain states after burn_in.
inline Vector ess(const Chain& chain, Index burn_in) {
  if (burn_in < 0 || chain.length() - burn_in < 10) throw InputError("ess: need at least 10 post-burn-in states");
  Vector out(chain.dim());
  for (Index l = 0; l < chain.dim(); ++l) {
    std::vector<double> x;
    x.reserve(static_cast<std::size_t>(chain.length() - burn_in));
    for (Index k = burn_in; k < chain.length(); ++k) x.push_back(chain.states(l, k));
    out(l) = effective_sample_size(x);
  }
  return out;
}

}  // namespace nlme

#endif  // NLME_DIAGNOSTICS_HPP
