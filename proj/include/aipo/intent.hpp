#ifndef AIPO_INTENT_HPP
#define AIPO_INTENT_HPP

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "aipo/common.hpp"
#include "aipo/embedding.hpp"
#include "aipo/probcore.hpp"
#include "aipo/types.hpp"

// The intention module: pluggable context construction, the categorical
// classifier q(I | x_con), the multi-label intention BCE, the KL
// regularizer, intent embeddings with cosine similarity, and the
// Jensen-bound check that ties the BCE surrogate to the variational
// objective.

namespace aipo {

constexpr double kProbClamp = 1e-12;

struct IntentModel {
  Matrix classifier;  // K x context_dim
  Matrix embeddings;  // K x embed_dim

  std::size_t num_intents() const { return classifier.rows; }
  std::size_t context_dim() const { return classifier.cols; }
  std::size_t embed_dim() const { return embeddings.cols; }

  std::vector<double> embedding_row(int intent) const {
    if (intent < 0 || static_cast<std::size_t>(intent) >= embeddings.rows)
      throw InvalidArgumentError("intent id out of range");
    const double* r = embeddings.row(static_cast<std::size_t>(intent));
    return std::vector<double>(r, r + embeddings.cols);
  }
};

// ---------------------------------------------------------------------------
// Context construction
// ---------------------------------------------------------------------------

// Replaces the external decomposition/retrieval stack: a provider emits a
// fixed-dimension feature block that gets concatenated onto the prompt.
class ContextProvider {
 public:
  virtual ~ContextProvider() = default;
  virtual std::string id() const = 0;
  virtual std::size_t dim() const = 0;
  virtual std::vector<double> context_block(const FeatureVector& prompt) const = 0;
};

class NullContextProvider final : public ContextProvider {
 public:
  explicit NullContextProvider(std::size_t dim) : dim_(dim) {}
  std::string id() const override { return "null"; }
  std::size_t dim() const override { return dim_; }
  std::vector<double> context_block(const FeatureVector&) const override {
    return std::vector<double>(dim_, 0.0);
  }

 private:
  std::size_t dim_;
};

// Emits the generator's intent-cue block: the prototype of a known intent.
class IntentHintProvider final : public ContextProvider {
 public:
  IntentHintProvider(int intent, std::size_t dim)
      : intent_(intent), dim_(dim) {}
  std::string id() const override {
    return "intent-hint:" + std::to_string(intent_);
  }
  std::size_t dim() const override { return dim_; }
  std::vector<double> context_block(const FeatureVector&) const override {
    return intent_prototype(intent_, dim_);
  }

 private:
  int intent_;
  std::size_t dim_;
};

inline ContextVector build_context(const FeatureVector& prompt,
                                   const ContextProvider& provider) {
  std::vector<double> block;
  try {
    block = provider.context_block(prompt);
  } catch (const std::exception& e) {
    throw ContextProviderError(e.what(), provider.id());
  }
  if (block.size() != provider.dim())
    throw ContextProviderError("provider block has wrong dimension",
                               provider.id());
  ContextVector out;
  out.reserve(prompt.size() + block.size());
  out.insert(out.end(), prompt.begin(), prompt.end());
  out.insert(out.end(), block.begin(), block.end());
  return out;
}

// ---------------------------------------------------------------------------
// Posterior, losses, similarity
// ---------------------------------------------------------------------------

// Variational posterior q(I | x_con): softmax over classifier scores.
inline Distribution intent_posterior(const IntentModel& m,
                                     const ContextVector& x_con) {
  if (x_con.size() != m.context_dim())
    throw InvalidArgumentError("context dimension mismatch");
  const std::size_t k = m.num_intents();
  std::vector<double> s(k);
  for (std::size_t i = 0; i < k; ++i)
    s[i] = dot(m.classifier.row(i), x_con.data(), x_con.size());
  const double mx = *std::max_element(s.begin(), s.end());
  double acc = 0.0;
  for (double& v : s) {
    v = std::exp(v - mx);
    acc += v;
  }
  for (double& v : s) v /= acc;
  return Distribution{std::move(s)};
}

// Multi-label intention loss, Bernoulli cross-entropy averaged over the
// taxonomy. Probabilities are clamped to [1e-12, 1 - 1e-12] before the logs.
inline double intention_bce_loss(const std::vector<double>& pred,
                                 const std::vector<int>& labels) {
  if (pred.size() != labels.size())
    throw InvalidArgumentError("intention_bce_loss: length mismatch");
  if (pred.empty())
    throw InvalidArgumentError("intention_bce_loss: empty prediction");
  double acc = 0.0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    if (!std::isfinite(pred[k]) || pred[k] < 0.0 || pred[k] > 1.0)
      throw InvalidArgumentError("intention_bce_loss: pred outside [0,1]");
    if (labels[k] != 0 && labels[k] != 1)
      throw InvalidArgumentError("intention_bce_loss: labels must be binary");
    const double p = std::clamp(pred[k], kProbClamp, 1.0 - kProbClamp);
    acc += labels[k] ? -std::log(p) : -std::log1p(-p);
  }
  return acc / static_cast<double>(pred.size());
}

// KL(q || p) with the 0 log 0 = 0 convention; errors if p lacks support
// where q has mass.
inline double kl_to_prior(const Distribution& q, const Distribution& p) {
  if (q.support_size() != p.support_size())
    throw InvalidArgumentError("kl_to_prior: support mismatch");
  double acc = 0.0;
  for (std::size_t k = 0; k < q.support_size(); ++k) {
    if (q.probs[k] == 0.0) continue;
    if (p.probs[k] < kProbClamp)
      throw FullSupportError("kl_to_prior: prior lacks support where q > 0");
    acc += q.probs[k] * std::log(q.probs[k] / p.probs[k]);
  }
  return std::max(acc, 0.0);
}

// Cosine similarity between a response embedding and the intent's
// embedding-table row; in [-1, 1] and invariant under positive rescaling.
inline double similarity(const std::vector<double>& response_embedding,
                         int intent, const IntentModel& m) {
  return cosine(response_embedding, m.embedding_row(intent));
}

// Gradient of similarity(response_embedding, intent) w.r.t. the intent's
// embedding row: d cos(u, v)/dv = u/(|u||v|) - (u.v) v/(|u| |v|^3).
inline std::vector<double> similarity_grad_embedding(
    const std::vector<double>& u, const std::vector<double>& v) {
  double uv = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    uv += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  if (uu <= 0.0 || vv <= 0.0)
    throw DegenerateEmbeddingError("similarity gradient at zero-norm vector");
  const double nu = std::sqrt(uu), nv = std::sqrt(vv);
  std::vector<double> g(u.size());
  for (std::size_t i = 0; i < u.size(); ++i)
    g[i] = u[i] / (nu * nv) - uv * v[i] / (nu * nv * nv * nv);
  return g;
}

// Jensen bound of the intention BCE under a latent posterior:
//   lhs = E_q[BCE(labels, row_I)]   (expected reconstruction loss)
//   rhs = BCE(labels, E_q[row_I])   (loss at the mixture probabilities)
// Always lhs >= rhs; equal when the rows are constant where q has mass or
// q is a point mass.
struct SurrogateBound {
  double lhs = 0.0;
  double rhs = 0.0;
};

inline SurrogateBound surrogate_bound_check(const Distribution& q,
                                            const Matrix& per_latent_probs,
                                            const std::vector<int>& labels) {
  if (per_latent_probs.rows != q.support_size())
    throw InvalidArgumentError("surrogate_bound_check: row count != support");
  if (per_latent_probs.cols != labels.size())
    throw InvalidArgumentError("surrogate_bound_check: label count mismatch");
  for (double v : per_latent_probs.data)
    if (!std::isfinite(v) || v < 0.0 || v > 1.0)
      throw InvalidArgumentError("surrogate_bound_check: probs outside [0,1]");

  SurrogateBound out;
  std::vector<double> mix(labels.size(), 0.0);
  for (std::size_t s = 0; s < per_latent_probs.rows; ++s) {
    const double* row = per_latent_probs.row(s);
    std::vector<double> row_v(row, row + per_latent_probs.cols);
    out.lhs += q.probs[s] * intention_bce_loss(row_v, labels);
    for (std::size_t k = 0; k < mix.size(); ++k)
      mix[k] += q.probs[s] * row[k];
  }
  out.rhs = intention_bce_loss(mix, labels);
  return out;
}

// ---------------------------------------------------------------------------
// Classifier training (single-label softmax objective)
// ---------------------------------------------------------------------------

struct IntentTrainConfig {
  std::size_t num_intents = 0;
  std::size_t embed_dim = 0;
  std::size_t steps = 500;
  double learning_rate = 1.0;
  std::uint64_t seed = 0;
};

struct IntentTrainResult {
  IntentModel model;
  double train_accuracy = 0.0;
  double final_loss = 0.0;
};

// Supervised gradient descent on the mean cross-entropy of
// q(I | x_con) against single intent labels. The embedding table is
// zero-initialized here; whether and how it is seeded is a pipeline choice.
inline IntentTrainResult train_intent_classifier(
    const std::vector<std::pair<ContextVector, int>>& dataset,
    const IntentTrainConfig& config) {
  if (config.num_intents < 2)
    throw IncompleteTaxonomyError("taxonomy needs at least two intents");
  if (dataset.empty())
    throw InvalidArgumentError("train_intent_classifier: empty dataset");
  const std::size_t k = config.num_intents;
  const std::size_t d = dataset[0].first.size();
  std::vector<int> seen(k, 0);
  for (const auto& [x, label] : dataset) {
    if (x.size() != d)
      throw InvalidArgumentError("train_intent_classifier: ragged contexts");
    if (label < 0 || static_cast<std::size_t>(label) >= k)
      throw InvalidArgumentError("train_intent_classifier: label out of range");
    seen[static_cast<std::size_t>(label)] = 1;
  }
  for (std::size_t i = 0; i < k; ++i)
    if (!seen[i])
      throw IncompleteTaxonomyError("no example for intent " +
                                    std::to_string(i));

  IntentModel m;
  m.classifier = Matrix(k, d);
  m.embeddings = Matrix(k, config.embed_dim);
  std::mt19937_64 rng(config.seed);
  for (double& w : m.classifier.data) w = uniform_in(rng, -0.01, 0.01);

  const double inv_n = 1.0 / static_cast<double>(dataset.size());
  double loss = 0.0;
  for (std::size_t s = 0; s < config.steps; ++s) {
    Matrix grad(k, d);
    loss = 0.0;
    for (const auto& [x, label] : dataset) {
      const Distribution q = intent_posterior(m, x);
      loss -= std::log(std::max(q.probs[static_cast<std::size_t>(label)],
                                kProbClamp));
      for (std::size_t c = 0; c < k; ++c) {
        const double coeff =
            (q.probs[c] - (static_cast<int>(c) == label ? 1.0 : 0.0)) * inv_n;
        double* row = grad.row(c);
        for (std::size_t j = 0; j < d; ++j) row[j] += coeff * x[j];
      }
    }
    loss *= inv_n;
    if (std::isnan(loss))
      throw TrainingDivergedError("intent classifier diverged",
                                  static_cast<long>(s));
    m.classifier.add_scaled(grad, -config.learning_rate);
  }

  IntentTrainResult out;
  std::size_t correct = 0;
  for (const auto& [x, label] : dataset) {
    const Distribution q = intent_posterior(m, x);
    const auto arg = static_cast<int>(std::distance(
        q.probs.begin(), std::max_element(q.probs.begin(), q.probs.end())));
    if (arg == label) ++correct;
  }
  out.train_accuracy = static_cast<double>(correct) * inv_n;
  out.final_loss = loss;
  out.model = std::move(m);
  return out;
}

// ---------------------------------------------------------------------------
// Persistence: same flat text format as policy checkpoints.
// Header: K context_dim embed_dim, then classifier rows, then embedding rows.
// ---------------------------------------------------------------------------

inline void save_intent_model(const std::string& path, const IntentModel& m) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for write: " + path);
  out << m.num_intents() << ' ' << m.context_dim() << ' ' << m.embed_dim()
      << '\n';
  auto dump = [&out](const Matrix& mat) {
    for (std::size_t r = 0; r < mat.rows; ++r) {
      for (std::size_t c = 0; c < mat.cols; ++c) {
        if (c) out << ' ';
        out << format_double(mat.at(r, c));
      }
      out << '\n';
    }
  };
  dump(m.classifier);
  dump(m.embeddings);
  if (!out) throw IoError("write failed: " + path);
}

inline IntentModel load_intent_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open for read: " + path);
  std::string header;
  if (!std::getline(in, header)) throw ParseError("empty intent model", 1);
  std::istringstream hs(header);
  std::size_t k = 0, dc = 0, e = 0;
  if (!(hs >> k >> dc >> e)) throw ParseError("bad intent model header", 1);
  IntentModel m;
  m.classifier = Matrix(k, dc);
  m.embeddings = Matrix(k, e);
  long lineno = 1;
  auto slurp = [&](Matrix& mat) {
    for (std::size_t r = 0; r < mat.rows; ++r) {
      std::string line;
      ++lineno;
      if (!std::getline(in, line))
        throw ParseError("truncated intent model", lineno);
      std::istringstream ls(line);
      for (std::size_t c = 0; c < mat.cols; ++c)
        if (!(ls >> mat.at(r, c)))
          throw ParseError("bad intent model row", lineno);
    }
  };
  slurp(m.classifier);
  slurp(m.embeddings);
  return m;
}

// ---------------------------------------------------------------------------
// Taxonomy file: line-delimited "id<TAB>name", ids dense from 0.
// ---------------------------------------------------------------------------

inline void write_taxonomy(const std::string& path,
                           const std::vector<IntentLabel>& taxonomy) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for write: " + path);
  for (const auto& t : taxonomy) out << t.id << '\t' << t.name << '\n';
}

inline std::vector<IntentLabel> read_taxonomy(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open for read: " + path);
  std::vector<IntentLabel> out;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw ParseError("taxonomy line missing tab", lineno);
    IntentLabel t;
    try {
      t.id = std::stoi(line.substr(0, tab));
    } catch (const std::exception&) {
      throw ParseError("taxonomy id not an integer", lineno);
    }
    t.name = line.substr(tab + 1);
    if (t.id != static_cast<int>(out.size()))
      throw ParseError("taxonomy ids must be dense from 0", lineno);
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace aipo

#endif  // AIPO_INTENT_HPP
