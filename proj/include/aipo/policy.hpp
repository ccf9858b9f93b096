#ifndef AIPO_POLICY_HPP
#define AIPO_POLICY_HPP

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "aipo/common.hpp"
#include "aipo/probcore.hpp"
#include "aipo/types.hpp"

// Linear-softmax policies pi(y | x, z) over a finite response set, scored
// by one weight row per response against the concatenated
// (prompt features || intent embedding). Includes exact analytic gradients,
// the SFT-fitted frozen reference, and a lossless text checkpoint format.

namespace aipo {

struct PolicyModel {
  Matrix weights;  // response_count x (feature_dim + embed_dim)
  std::size_t response_count = 0;
  std::size_t feature_dim = 0;
  std::size_t embed_dim = 0;

  std::size_t input_dim() const { return feature_dim + embed_dim; }

  // Zero-mean uniform init in [-0.01, 0.01]; zero init would tie the
  // gradients of belief-conditioned loss branches.
  static PolicyModel init(std::size_t response_count, std::size_t feature_dim,
                          std::size_t embed_dim, std::uint64_t seed) {
    if (response_count < 2)
      throw InvalidArgumentError("policy needs at least two responses");
    if (feature_dim == 0)
      throw InvalidArgumentError("policy feature_dim must be positive");
    PolicyModel m;
    m.response_count = response_count;
    m.feature_dim = feature_dim;
    m.embed_dim = embed_dim;
    m.weights = Matrix(response_count, feature_dim + embed_dim);
    std::mt19937_64 rng(seed);
    for (double& w : m.weights.data) w = uniform_in(rng, -0.01, 0.01);
    return m;
  }

  void apply_gradient(const Matrix& grad, double step) {
    if (!grad.same_shape(weights))
      throw InvalidArgumentError("gradient shape mismatch");
    weights.add_scaled(grad, step);
    if (!weights.all_finite())
      throw NumericRangeError("policy weights became non-finite");
  }
};

namespace detail {

inline void check_policy_inputs(const PolicyModel& m, const FeatureVector& x,
                                const std::vector<double>& z) {
  if (x.size() != m.feature_dim)
    throw InvalidArgumentError("prompt feature dimension mismatch");
  if (z.size() != m.embed_dim)
    throw InvalidArgumentError("intent embedding dimension mismatch");
}

inline std::vector<double> scores(const PolicyModel& m, const FeatureVector& x,
                                  const std::vector<double>& z) {
  check_policy_inputs(m, x, z);
  std::vector<double> s(m.response_count);
  for (std::size_t y = 0; y < m.response_count; ++y) {
    const double* w = m.weights.row(y);
    s[y] = dot(w, x.data(), m.feature_dim) +
           dot(w + m.feature_dim, z.data(), m.embed_dim);
  }
  return s;
}

}  // namespace detail

inline double score(const PolicyModel& m, const FeatureVector& x,
                    const std::vector<double>& z, std::size_t y) {
  if (y >= m.response_count)
    throw InvalidArgumentError("response index out of range");
  detail::check_policy_inputs(m, x, z);
  const double* w = m.weights.row(y);
  return dot(w, x.data(), m.feature_dim) +
         dot(w + m.feature_dim, z.data(), m.embed_dim);
}

// Log-probabilities of every response; softmax with max-subtraction.
inline std::vector<double> log_probs(const PolicyModel& m,
                                     const FeatureVector& x,
                                     const std::vector<double>& z) {
  std::vector<double> s = detail::scores(m, x, z);
  const double mx = *std::max_element(s.begin(), s.end());
  double acc = 0.0;
  for (double v : s) acc += std::exp(v - mx);
  const double lse = mx + std::log(acc);
  for (double& v : s) v -= lse;
  return s;
}

inline double log_prob(const PolicyModel& m, const FeatureVector& x,
                       const std::vector<double>& z, std::size_t y) {
  if (y >= m.response_count)
    throw InvalidArgumentError("response index out of range");
  return log_probs(m, x, z)[y];
}

inline std::vector<double> probs(const PolicyModel& m, const FeatureVector& x,
                                 const std::vector<double>& z) {
  std::vector<double> lp = log_probs(m, x, z);
  for (double& v : lp) v = std::exp(v);
  return lp;
}

// d log pi(y | x, z) / d weights: row y' gets (1[y'=y] - pi(y')) * (x || z).
inline Matrix grad_log_prob(const PolicyModel& m, const FeatureVector& x,
                            const std::vector<double>& z, std::size_t y) {
  if (y >= m.response_count)
    throw InvalidArgumentError("response index out of range");
  const std::vector<double> p = probs(m, x, z);
  Matrix g(m.response_count, m.input_dim());
  for (std::size_t c = 0; c < m.response_count; ++c) {
    const double coeff = (c == y ? 1.0 : 0.0) - p[c];
    double* row = g.row(c);
    for (std::size_t j = 0; j < m.feature_dim; ++j) row[j] = coeff * x[j];
    for (std::size_t j = 0; j < m.embed_dim; ++j)
      row[m.feature_dim + j] = coeff * z[j];
  }
  return g;
}

// ---------------------------------------------------------------------------
// Frozen reference policy
// ---------------------------------------------------------------------------

class ReferencePolicy {
 public:
  explicit ReferencePolicy(PolicyModel fitted) : model_(std::move(fitted)) {}

  const PolicyModel& model() const { return model_; }
  bool frozen() const { return true; }

  // The reference is immutable after fitting.
  void apply_gradient(const Matrix&, double) {
    throw FrozenModelError("reference policy is frozen");
  }

 private:
  PolicyModel model_;
};

// DPO-style log-ratio margin, both policies conditioned on the same
// (x, z):
//   [log pi(y_w) - log ref(y_w)] - [log pi(y_l) - log ref(y_l)]
inline Logit log_ratio_margin(const PolicyModel& m, const ReferencePolicy& ref,
                              const FeatureVector& x,
                              const std::vector<double>& z, std::size_t y_w,
                              std::size_t y_l) {
  if (y_w == y_l)
    throw InvalidArgumentError("log_ratio_margin: y_w must differ from y_l");
  const std::vector<double> lp = log_probs(m, x, z);
  const std::vector<double> lr = log_probs(ref.model(), x, z);
  return (lp[y_w] - lr[y_w]) - (lp[y_l] - lr[y_l]);
}

// ---------------------------------------------------------------------------
// Reference fitting (SFT)
// ---------------------------------------------------------------------------

struct SftConfig {
  std::size_t steps = 2000;
  double learning_rate = 0.5;
  std::uint64_t seed = 0;
};

// Gradient ascent on the mean log-likelihood of each record's preferred
// response, with the zero intent embedding (the reference is intent-blind;
// its embedding-block columns receive no gradient). The step is halved
// whenever the loss fails to improve, which keeps the loss monotone.
inline ReferencePolicy fit_reference_sft(
    const std::vector<PreferenceRecord>& dataset, std::size_t response_count,
    std::size_t embed_dim, const SftConfig& config,
    std::vector<double>* loss_history = nullptr) {
  if (dataset.empty())
    throw InvalidArgumentError("fit_reference_sft: empty dataset");
  const std::size_t d = dataset[0].prompt.size();
  for (const auto& r : dataset) {
    if (r.prompt.size() != d)
      throw InvalidArgumentError("fit_reference_sft: ragged prompt features");
    if (r.y_w < 0 || static_cast<std::size_t>(r.y_w) >= response_count)
      throw InvalidArgumentError("fit_reference_sft: y_w out of range");
  }

  PolicyModel m = PolicyModel::init(response_count, d, embed_dim, config.seed);
  const std::vector<double> z(embed_dim, 0.0);
  const double inv_n = 1.0 / static_cast<double>(dataset.size());

  auto mean_nll = [&](const PolicyModel& model) {
    double acc = 0.0;
    for (const auto& r : dataset)
      acc -= log_prob(model, r.prompt, z, static_cast<std::size_t>(r.y_w));
    return acc * inv_n;
  };

  double lr = config.learning_rate;
  double prev = mean_nll(m);
  if (loss_history) loss_history->push_back(prev);
  for (std::size_t s = 0; s < config.steps; ++s) {
    Matrix grad(m.response_count, m.input_dim());
    for (const auto& r : dataset) {
      const std::vector<double> p = probs(m, r.prompt, z);
      for (std::size_t c = 0; c < m.response_count; ++c) {
        const double coeff =
            ((static_cast<int>(c) == r.y_w ? 1.0 : 0.0) - p[c]) * inv_n;
        double* row = grad.row(c);
        for (std::size_t j = 0; j < d; ++j) row[j] += coeff * r.prompt[j];
      }
    }
    PolicyModel trial = m;
    trial.apply_gradient(grad, lr);
    double cur = mean_nll(trial);
    if (std::isnan(cur))
      throw TrainingDivergedError("fit_reference_sft diverged",
                                  static_cast<long>(s));
    if (cur > prev) {
      lr *= 0.5;
      if (loss_history) loss_history->push_back(prev);
      continue;  // reject the step; retry smaller
    }
    m = std::move(trial);
    prev = cur;
    if (loss_history) loss_history->push_back(prev);
  }
  return ReferencePolicy(std::move(m));
}

// ---------------------------------------------------------------------------
// Checkpoint persistence: flat text, lossless at 17 significant digits.
// Header: response_count feature_dim embed_dim seed step
// then one line of decimal floats per weight row.
// ---------------------------------------------------------------------------

struct PolicyCheckpoint {
  PolicyModel model;
  std::uint64_t seed = 0;
  long step = 0;
};

inline void save_policy(const std::string& path, const PolicyModel& m,
                        std::uint64_t seed, long step) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for write: " + path);
  out << m.response_count << ' ' << m.feature_dim << ' ' << m.embed_dim << ' '
      << seed << ' ' << step << '\n';
  for (std::size_t r = 0; r < m.weights.rows; ++r) {
    const double* row = m.weights.row(r);
    for (std::size_t c = 0; c < m.weights.cols; ++c) {
      if (c) out << ' ';
      out << format_double(row[c]);
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

inline PolicyCheckpoint load_policy(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open for read: " + path);
  std::string header;
  if (!std::getline(in, header)) throw ParseError("empty checkpoint", 1);
  std::istringstream hs(header);
  PolicyCheckpoint ck;
  std::size_t rc = 0, fd = 0, ed = 0;
  if (!(hs >> rc >> fd >> ed >> ck.seed >> ck.step))
    throw ParseError("bad checkpoint header", 1);
  ck.model.response_count = rc;
  ck.model.feature_dim = fd;
  ck.model.embed_dim = ed;
  ck.model.weights = Matrix(rc, fd + ed);
  for (std::size_t r = 0; r < rc; ++r) {
    std::string line;
    if (!std::getline(in, line))
      throw ParseError("truncated checkpoint", static_cast<long>(r + 2));
    std::istringstream ls(line);
    for (std::size_t c = 0; c < fd + ed; ++c) {
      if (!(ls >> ck.model.weights.at(r, c)))
        throw ParseError("bad weight row", static_cast<long>(r + 2));
    }
  }
  return ck;
}

}  // namespace aipo

#endif  // AIPO_POLICY_HPP
