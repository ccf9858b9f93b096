#ifndef AIPO_PROBCORE_HPP
#define AIPO_PROBCORE_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "aipo/common.hpp"

// Exact scalar/vector probability math for Bradley-Terry preference
// modeling: the pairwise NLL, logit shifts, exponential tilting of a
// reference distribution and its inverse, and the heterogeneity-gap
// diagnostic.

namespace aipo {

// Log-odds value. Kept as a plain double; every public operation below
// validates finiteness of its logit arguments.
using Logit = double;

constexpr double kFullSupportFloor = 1e-12;

// Probability vector over a finite support.
struct Distribution {
  std::vector<double> probs;

  std::size_t support_size() const { return probs.size(); }

  // Validates entries in [0,1] and total mass 1 within 1e-12.
  static Distribution from_probs(std::vector<double> p) {
    if (p.empty()) throw InvalidArgumentError("distribution needs support");
    double sum = 0.0;
    for (double v : p) {
      if (!std::isfinite(v) || v < 0.0 || v > 1.0)
        throw InvalidArgumentError("distribution entries must be in [0,1]");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-12)
      throw InvalidArgumentError("distribution mass must sum to 1");
    return Distribution{std::move(p)};
  }

  static Distribution uniform(std::size_t n) {
    if (n == 0) throw InvalidArgumentError("distribution needs support");
    return Distribution{std::vector<double>(n, 1.0 / static_cast<double>(n))};
  }

  bool full_support(double floor = kFullSupportFloor) const {
    return std::all_of(probs.begin(), probs.end(),
                       [floor](double v) { return v >= floor; });
  }
};

// Tilted distribution plus its scaled log-partition (the response-independent
// baseline beta * log Z).
struct TiltResult {
  Distribution tilted;
  double log_partition = 0.0;
};

// Logistic function, computed without overflow on either tail.
inline double sigmoid(Logit z) {
  require_finite(z, "sigmoid input");
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// Pairwise Bradley-Terry NLL, -log sigmoid(delta), via softplus(-delta).
// The logit is saturation-clamped to |delta| <= 60 before exponentiation,
// so the result is constant beyond that range.
inline double bt_nll(Logit delta) {
  require_finite(delta, "bt_nll input");
  const double d = std::clamp(delta, -60.0, 60.0);
  // softplus(-d), stable on both tails.
  if (d >= 0.0) return std::log1p(std::exp(-d));
  return -d + std::log1p(std::exp(d));
}

// Intent-augmented logit: base + lambda * dsim. The similarity gap dsim
// lives in [-2, 2] when produced by cosine similarities; any finite value
// is accepted.
inline Logit shifted_logit(Logit base, double lambda, double dsim) {
  require_finite(base, "shifted_logit base");
  require_finite(lambda, "shifted_logit lambda");
  require_finite(dsim, "shifted_logit dsim");
  if (lambda < 0.0)
    throw InvalidArgumentError("shifted_logit lambda must be nonnegative");
  return base + lambda * dsim;
}

namespace detail {
inline void check_vector(const std::vector<double>& v, std::size_t n,
                         const char* what) {
  if (v.size() != n)
    throw InvalidArgumentError(std::string(what) + ": length mismatch");
  for (double x : v) require_finite(x, what);
}
}  // namespace detail

// Exponentially reweights a full-support reference:
//   tilted[y] proportional to ref[y] * exp((reward[y] - lambda*sim[y]) / beta)
// log_partition is beta * log Z with Z the reference expectation of the tilt.
// Stabilized by max-subtraction.
inline TiltResult tilt_reference(const Distribution& ref,
                                 const std::vector<double>& reward,
                                 const std::vector<double>& sim, double beta,
                                 double lambda) {
  const std::size_t n = ref.support_size();
  detail::check_vector(reward, n, "tilt_reference reward");
  detail::check_vector(sim, n, "tilt_reference sim");
  require_finite(beta, "tilt_reference beta");
  require_finite(lambda, "tilt_reference lambda");
  if (beta <= 0.0)
    throw InvalidArgumentError("tilt_reference beta must be positive");
  if (!ref.full_support())
    throw FullSupportError("tilt_reference requires a full-support reference");

  std::vector<double> g(n);
  for (std::size_t y = 0; y < n; ++y)
    g[y] = std::log(ref.probs[y]) + (reward[y] - lambda * sim[y]) / beta;
  const double m = *std::max_element(g.begin(), g.end());
  double z = 0.0;
  std::vector<double> tilted(n);
  for (std::size_t y = 0; y < n; ++y) {
    tilted[y] = std::exp(g[y] - m);
    z += tilted[y];
  }
  for (double& v : tilted) v /= z;
  const double log_partition = beta * (m + std::log(z));
  if (!std::isfinite(log_partition))
    throw NumericRangeError("tilt_reference log-partition overflow");
  return TiltResult{Distribution{std::move(tilted)}, log_partition};
}

// Inverts tilt_reference:
//   reward[y] = beta * log(tilted[y]/ref[y]) + lambda*sim[y] + log_partition
inline std::vector<double> reconstruct_reward(const Distribution& tilted,
                                              const Distribution& ref,
                                              const std::vector<double>& sim,
                                              double beta, double lambda,
                                              double log_partition) {
  const std::size_t n = ref.support_size();
  if (tilted.support_size() != n)
    throw InvalidArgumentError("reconstruct_reward: support mismatch");
  detail::check_vector(sim, n, "reconstruct_reward sim");
  require_finite(log_partition, "reconstruct_reward log_partition");
  if (beta <= 0.0)
    throw InvalidArgumentError("reconstruct_reward beta must be positive");
  if (!ref.full_support() || !tilted.full_support())
    throw FullSupportError("reconstruct_reward requires full support");

  std::vector<double> reward(n);
  for (std::size_t y = 0; y < n; ++y)
    reward[y] = beta * (std::log(tilted.probs[y]) - std::log(ref.probs[y])) +
                lambda * sim[y] + log_partition;
  return reward;
}

// Jensen gap of the BT NLL across latent contexts:
//   sum_k w_k * bt_nll(delta_k) - bt_nll(sum_k w_k * delta_k)
// Nonnegative; zero iff the deltas are constant on the support.
inline double heterogeneity_gap(const std::vector<double>& deltas,
                                const Distribution& weights) {
  if (weights.support_size() != deltas.size())
    throw InvalidArgumentError("heterogeneity_gap: length mismatch");
  double mixed = 0.0;
  double mean_delta = 0.0;
  for (std::size_t k = 0; k < deltas.size(); ++k) {
    require_finite(deltas[k], "heterogeneity_gap delta");
    mixed += weights.probs[k] * bt_nll(deltas[k]);
    mean_delta += weights.probs[k] * deltas[k];
  }
  return mixed - bt_nll(mean_delta);
}

}  // namespace aipo

#endif  // AIPO_PROBCORE_HPP
