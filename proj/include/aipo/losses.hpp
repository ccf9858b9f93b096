#ifndef AIPO_LOSSES_HPP
#define AIPO_LOSSES_HPP

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "aipo/common.hpp"
#include "aipo/embedding.hpp"
#include "aipo/intent.hpp"
#include "aipo/policy.hpp"
#include "aipo/probcore.hpp"
#include "aipo/types.hpp"

// The four preference objectives with values and exact analytic gradients:
//   dpo             pairwise log-ratio NLL, intent-blind (zero embedding)
//   gdpo            belief-conditioned NLL + belief-calibration cross-entropy
//   aipo_separable  E_q[NLL(beta*margin)] - lambda*E_q[dsim] + gamma*KL
//   aipo_logit      E_q[NLL(beta*margin + lambda*dsim)]      + gamma*KL
//
// The posterior expectation over intents is computed exactly by summing
// over the taxonomy. For linear-softmax policies the normalizers cancel in
// the pairwise margin, so the margin and its gradients reduce to weight-row
// differences against (x || z).

namespace aipo {

enum class LossVariant { kDpo, kGdpo, kAipoSeparable, kAipoLogit };

inline const char* to_string(LossVariant v) {
  switch (v) {
    case LossVariant::kDpo: return "dpo";
    case LossVariant::kGdpo: return "gdpo";
    case LossVariant::kAipoSeparable: return "aipo_separable";
    case LossVariant::kAipoLogit: return "aipo_logit";
  }
  return "?";
}

inline LossVariant loss_variant_from_string(const std::string& s) {
  if (s == "dpo") return LossVariant::kDpo;
  if (s == "gdpo") return LossVariant::kGdpo;
  if (s == "aipo_separable") return LossVariant::kAipoSeparable;
  if (s == "aipo_logit") return LossVariant::kAipoLogit;
  throw InvalidArgumentError("unknown loss variant: " + s);
}

struct LossConfig {
  double beta = 0.1;
  double lambda = 0.0;
  double gamma = 0.0;
  LossVariant variant = LossVariant::kAipoLogit;

  void validate() const {
    require_finite(beta, "beta");
    require_finite(lambda, "lambda");
    require_finite(gamma, "gamma");
    if (beta <= 0.0) throw InvalidArgumentError("beta must be positive");
    if (lambda < 0.0) throw InvalidArgumentError("lambda must be nonnegative");
    if (gamma < 0.0) throw InvalidArgumentError("gamma must be nonnegative");
  }
};

struct LossReport {
  double value = 0.0;
  Matrix grad_policy;      // response_count x (feature_dim + embed_dim)
  Matrix grad_classifier;  // K x context_dim (zero where the loss ignores it)
  Matrix grad_embedding;   // K x embed_dim
  std::vector<double> per_pair_margin;  // E_q[beta * log-ratio margin]
  std::vector<double> per_pair_dsim;    // E_q[sim(y_w,I) - sim(y_l,I)]
};

namespace detail {

// d bt_nll(delta) / d delta; zero beyond the saturation clamp.
inline double bt_nll_grad(double delta) {
  if (delta > 60.0 || delta < -60.0) return 0.0;
  return -sigmoid(-delta);
}

struct PairGeometry {
  const PreferenceRecord* rec = nullptr;
  std::vector<double> dw_theta;  // policy row(y_w) - row(y_l), full width
  std::vector<double> dz;        // embedding-block margin direction
};

// Margin pieces that do not depend on the conditioning embedding.
inline PairGeometry pair_geometry(const PreferenceRecord& r,
                                  const PolicyModel& policy,
                                  const ReferencePolicy& ref) {
  if (r.y_w == r.y_l) throw InvalidArgumentError("pair has y_w == y_l");
  if (r.y_w < 0 || r.y_l < 0 ||
      static_cast<std::size_t>(r.y_w) >= policy.response_count ||
      static_cast<std::size_t>(r.y_l) >= policy.response_count)
    throw InvalidArgumentError("pair response index out of range");
  if (r.prompt.size() != policy.feature_dim)
    throw InvalidArgumentError("pair prompt dimension mismatch");
  PairGeometry g;
  g.rec = &r;
  const std::size_t w = policy.input_dim();
  const double* tw = policy.weights.row(static_cast<std::size_t>(r.y_w));
  const double* tl = policy.weights.row(static_cast<std::size_t>(r.y_l));
  const double* rw = ref.model().weights.row(static_cast<std::size_t>(r.y_w));
  const double* rl = ref.model().weights.row(static_cast<std::size_t>(r.y_l));
  g.dw_theta.resize(w);
  g.dz.resize(policy.embed_dim);
  for (std::size_t j = 0; j < w; ++j) g.dw_theta[j] = tw[j] - tl[j];
  for (std::size_t j = 0; j < policy.embed_dim; ++j)
    g.dz[j] = (tw[policy.feature_dim + j] - tl[policy.feature_dim + j]) -
              (rw[policy.feature_dim + j] - rl[policy.feature_dim + j]);
  return g;
}

// Log-ratio margin at conditioning z (normalizers cancel for linear scores).
inline double margin_at(const PairGeometry& g, const PolicyModel& policy,
                        const ReferencePolicy& ref,
                        const std::vector<double>& z) {
  const PreferenceRecord& r = *g.rec;
  const double* tw = policy.weights.row(static_cast<std::size_t>(r.y_w));
  const double* tl = policy.weights.row(static_cast<std::size_t>(r.y_l));
  const double* rw = ref.model().weights.row(static_cast<std::size_t>(r.y_w));
  const double* rl = ref.model().weights.row(static_cast<std::size_t>(r.y_l));
  const std::size_t d = policy.feature_dim;
  double m = 0.0;
  for (std::size_t j = 0; j < d; ++j)
    m += (tw[j] - tl[j] - rw[j] + rl[j]) * r.prompt[j];
  for (std::size_t j = 0; j < policy.embed_dim; ++j)
    m += (tw[d + j] - tl[d + j] - rw[d + j] + rl[d + j]) * z[j];
  return m;
}

// Adds coeff * d margin / d policy-weights (rows y_w and y_l only).
inline void add_policy_margin_grad(Matrix& grad, const PreferenceRecord& r,
                                   const std::vector<double>& z,
                                   std::size_t feature_dim, double coeff) {
  double* gw = grad.row(static_cast<std::size_t>(r.y_w));
  double* gl = grad.row(static_cast<std::size_t>(r.y_l));
  for (std::size_t j = 0; j < feature_dim; ++j) {
    gw[j] += coeff * r.prompt[j];
    gl[j] -= coeff * r.prompt[j];
  }
  for (std::size_t j = 0; j < z.size(); ++j) {
    gw[feature_dim + j] += coeff * z[j];
    gl[feature_dim + j] -= coeff * z[j];
  }
}

inline void check_batch(std::span<const PreferenceRecord> batch) {
  if (batch.empty()) throw InvalidArgumentError("empty batch");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// DPO
// ---------------------------------------------------------------------------

inline LossReport dpo_loss(std::span<const PreferenceRecord> batch,
                           const PolicyModel& policy,
                           const ReferencePolicy& ref,
                           const LossConfig& config) {
  config.validate();
  detail::check_batch(batch);
  LossReport out;
  out.grad_policy = Matrix(policy.response_count, policy.input_dim());
  out.per_pair_margin.reserve(batch.size());
  out.per_pair_dsim.assign(batch.size(), 0.0);
  const std::vector<double> z(policy.embed_dim, 0.0);
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (const auto& r : batch) {
    const auto g = detail::pair_geometry(r, policy, ref);
    const double h = config.beta * detail::margin_at(g, policy, ref, z);
    out.value += bt_nll(h) * inv_n;
    out.per_pair_margin.push_back(h);
    const double coeff = detail::bt_nll_grad(h) * config.beta * inv_n;
    detail::add_policy_margin_grad(out.grad_policy, r, z, policy.feature_dim,
                                   coeff);
  }
  return out;
}

// ---------------------------------------------------------------------------
// GDPO
// ---------------------------------------------------------------------------

// Belief-conditioned preference loss plus gamma-weighted belief calibration.
// Conditioning enters through the embedding row of each record's belief id;
// target_beliefs supplies one target distribution per record.
inline LossReport gdpo_loss(std::span<const PreferenceRecord> batch,
                            const PolicyModel& policy,
                            const ReferencePolicy& ref,
                            const IntentModel& belief_model,
                            const std::vector<Distribution>& target_beliefs,
                            const LossConfig& config) {
  config.validate();
  detail::check_batch(batch);
  if (target_beliefs.size() != batch.size())
    throw InvalidArgumentError("missing target belief distribution");
  if (belief_model.embed_dim() != policy.embed_dim)
    throw InvalidArgumentError("belief embedding width mismatch");
  const std::size_t k = belief_model.num_intents();

  LossReport out;
  out.grad_policy = Matrix(policy.response_count, policy.input_dim());
  out.grad_classifier = Matrix(k, belief_model.context_dim());
  out.grad_embedding = Matrix(k, belief_model.embed_dim());
  out.per_pair_margin.reserve(batch.size());
  out.per_pair_dsim.assign(batch.size(), 0.0);
  const double inv_n = 1.0 / static_cast<double>(batch.size());

  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& r = batch[i];
    if (r.intent < 0 || static_cast<std::size_t>(r.intent) >= k)
      throw InvalidArgumentError("record belief id outside taxonomy");
    if (target_beliefs[i].support_size() != k)
      throw InvalidArgumentError("target belief support mismatch");
    const auto b = static_cast<std::size_t>(r.intent);
    const std::vector<double> z = belief_model.embedding_row(r.intent);

    const auto g = detail::pair_geometry(r, policy, ref);
    const double h = config.beta * detail::margin_at(g, policy, ref, z);
    out.value += bt_nll(h) * inv_n;
    out.per_pair_margin.push_back(h);
    const double coeff = detail::bt_nll_grad(h) * config.beta * inv_n;
    detail::add_policy_margin_grad(out.grad_policy, r, z, policy.feature_dim,
                                   coeff);
    double* ge = out.grad_embedding.row(b);
    for (std::size_t j = 0; j < g.dz.size(); ++j)
      ge[j] += coeff * g.dz[j];

    // Belief calibration: cross-entropy of the predicted belief against the
    // per-record target.
    if (config.gamma > 0.0) {
      const Distribution q = intent_posterior(belief_model, r.context);
      double ce = 0.0;
      for (std::size_t c = 0; c < k; ++c) {
        if (target_beliefs[i].probs[c] > 0.0)
          ce -= target_beliefs[i].probs[c] *
                std::log(std::max(q.probs[c], kProbClamp));
        const double da = config.gamma * inv_n *
                          (q.probs[c] - target_beliefs[i].probs[c]);
        double* gc = out.grad_classifier.row(c);
        for (std::size_t j = 0; j < r.context.size(); ++j)
          gc[j] += da * r.context[j];
      }
      out.value += config.gamma * ce * inv_n;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// aipo (both placements of the similarity term)
// ---------------------------------------------------------------------------

// Intent-augmented preference loss. For each pair the posterior
// q = intent_posterior(x_con) weights an exact sum over intents; each
// intent conditions both policies through its embedding row and, when
// lambda > 0, shifts the preference through the response-intent cosine.
inline LossReport aipo_loss(std::span<const PreferenceRecord> batch,
                            const PolicyModel& policy,
                            const ReferencePolicy& ref,
                            const IntentModel& intent_model,
                            const LossConfig& config) {
  config.validate();
  detail::check_batch(batch);
  if (config.variant != LossVariant::kAipoSeparable &&
      config.variant != LossVariant::kAipoLogit)
    throw InvalidArgumentError("aipo_loss requires an aipo variant");
  if (intent_model.embed_dim() != policy.embed_dim)
    throw InvalidArgumentError("intent embedding width mismatch");
  const std::size_t k = intent_model.num_intents();
  if (k == 0) throw InvalidArgumentError("intent taxonomy not registered");
  const bool separable = config.variant == LossVariant::kAipoSeparable;
  const bool use_sim = config.lambda != 0.0;
  const Distribution prior = Distribution::uniform(k);

  LossReport out;
  out.grad_policy = Matrix(policy.response_count, policy.input_dim());
  out.grad_classifier = Matrix(k, intent_model.context_dim());
  out.grad_embedding = Matrix(k, intent_model.embed_dim());
  out.per_pair_margin.reserve(batch.size());
  out.per_pair_dsim.reserve(batch.size());
  const double inv_n = 1.0 / static_cast<double>(batch.size());

  std::vector<double> integrand(k);  // per-intent loss term, for the q-grad
  for (const auto& r : batch) {
    const Distribution q = intent_posterior(intent_model, r.context);
    const auto geom = detail::pair_geometry(r, policy, ref);
    const std::vector<double> u_w =
        use_sim ? response_embedding(r.y_w, intent_model.embed_dim())
                : std::vector<double>();
    const std::vector<double> u_l =
        use_sim ? response_embedding(r.y_l, intent_model.embed_dim())
                : std::vector<double>();

    double pair_value = 0.0;
    double margin_exp = 0.0;
    double dsim_exp = 0.0;
    std::fill(integrand.begin(), integrand.end(), 0.0);

    for (std::size_t c = 0; c < k; ++c) {
      const double qi = q.probs[c];
      if (qi == 0.0) continue;
      const std::vector<double> z =
          intent_model.embedding_row(static_cast<int>(c));
      const double base = config.beta * detail::margin_at(geom, policy, ref, z);
      margin_exp += qi * base;

      double dsim = 0.0;
      std::vector<double> dsim_grad;  // d dsim / d embedding row c
      if (use_sim) {
        const std::vector<double> row = z;
        dsim = cosine(u_w, row) - cosine(u_l, row);
        dsim_exp += qi * dsim;
        const std::vector<double> gw = similarity_grad_embedding(u_w, row);
        const std::vector<double> gl = similarity_grad_embedding(u_l, row);
        dsim_grad.resize(row.size());
        for (std::size_t j = 0; j < row.size(); ++j)
          dsim_grad[j] = gw[j] - gl[j];
      }

      double f = 0.0;          // per-intent loss integrand
      double dbase_coeff = 0.0;  // d f / d base-margin-logit
      double dsim_coeff = 0.0;   // d f / d dsim
      if (separable) {
        f = bt_nll(base) - config.lambda * dsim;
        dbase_coeff = detail::bt_nll_grad(base);
        dsim_coeff = -config.lambda;
      } else {
        const double h = base + config.lambda * dsim;
        f = bt_nll(h);
        dbase_coeff = detail::bt_nll_grad(h);
        dsim_coeff = detail::bt_nll_grad(h) * config.lambda;
      }
      integrand[c] = f;
      pair_value += qi * f;

      const double pcoeff = qi * dbase_coeff * config.beta * inv_n;
      detail::add_policy_margin_grad(out.grad_policy, r, z, policy.feature_dim,
                                     pcoeff);
      double* ge = out.grad_embedding.row(c);
      for (std::size_t j = 0; j < geom.dz.size(); ++j)
        ge[j] += pcoeff * geom.dz[j];
      if (use_sim) {
        const double scoef = qi * dsim_coeff * inv_n;
        for (std::size_t j = 0; j < dsim_grad.size(); ++j)
          ge[j] += scoef * dsim_grad[j];
      }
    }

    double kl = 0.0;
    if (config.gamma > 0.0) kl = kl_to_prior(q, prior);
    pair_value += config.gamma * kl;

    // Posterior path: dL/da_k = q_k (g_k - sum_I q_I g_I) with
    // g_I = integrand_I + gamma (log(q_I/p_I) + 1).
    double gbar = 0.0;
    std::vector<double> gvec(k, 0.0);
    for (std::size_t c = 0; c < k; ++c) {
      if (q.probs[c] == 0.0) continue;
      gvec[c] = integrand[c];
      if (config.gamma > 0.0)
        gvec[c] += config.gamma *
                   (std::log(q.probs[c] / prior.probs[c]) + 1.0);
      gbar += q.probs[c] * gvec[c];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (q.probs[c] == 0.0) continue;
      const double da = q.probs[c] * (gvec[c] - gbar) * inv_n;
      double* gc = out.grad_classifier.row(c);
      for (std::size_t j = 0; j < r.context.size(); ++j)
        gc[j] += da * r.context[j];
    }

    out.value += pair_value * inv_n;
    out.per_pair_margin.push_back(margin_exp);
    out.per_pair_dsim.push_back(dsim_exp);
  }
  return out;
}

// Monte Carlo value estimator for the aipo objectives: intents drawn from
// the posterior instead of the exact sum. The exact form is what training
// and the property suites use; this estimator exists for comparison and
// converges to aipo_loss(...).value as samples grow.
inline double aipo_loss_sampled(std::span<const PreferenceRecord> batch,
                                const PolicyModel& policy,
                                const ReferencePolicy& ref,
                                const IntentModel& intent_model,
                                const LossConfig& config,
                                std::size_t num_samples, std::uint64_t seed) {
  config.validate();
  detail::check_batch(batch);
  if (num_samples == 0)
    throw InvalidArgumentError("aipo_loss_sampled needs samples");
  const std::size_t k = intent_model.num_intents();
  if (k == 0) throw InvalidArgumentError("intent taxonomy not registered");
  const bool separable = config.variant == LossVariant::kAipoSeparable;
  const bool use_sim = config.lambda != 0.0;
  const Distribution prior = Distribution::uniform(k);
  std::mt19937_64 rng(seed);

  double total = 0.0;
  for (const auto& r : batch) {
    const Distribution q = intent_posterior(intent_model, r.context);
    const auto geom = detail::pair_geometry(r, policy, ref);
    const std::vector<double> u_w =
        use_sim ? response_embedding(r.y_w, intent_model.embed_dim())
                : std::vector<double>();
    const std::vector<double> u_l =
        use_sim ? response_embedding(r.y_l, intent_model.embed_dim())
                : std::vector<double>();
    double pair_value = 0.0;
    for (std::size_t s = 0; s < num_samples; ++s) {
      double u = uniform01(rng);
      std::size_t c = 0;
      for (; c + 1 < k; ++c) {
        u -= q.probs[c];
        if (u < 0.0) break;
      }
      const std::vector<double> z =
          intent_model.embedding_row(static_cast<int>(c));
      const double base = config.beta * detail::margin_at(geom, policy, ref, z);
      double dsim = 0.0;
      if (use_sim) dsim = cosine(u_w, z) - cosine(u_l, z);
      pair_value += separable
                        ? bt_nll(base) - config.lambda * dsim
                        : bt_nll(base + config.lambda * dsim);
    }
    pair_value /= static_cast<double>(num_samples);
    if (config.gamma > 0.0) pair_value += config.gamma * kl_to_prior(q, prior);
    total += pair_value;
  }
  return total / static_cast<double>(batch.size());
}

// Dispatch on config.variant. For gdpo the caller must supply the belief
// model and targets via gdpo_loss directly.
inline LossReport evaluate_loss(std::span<const PreferenceRecord> batch,
                                const PolicyModel& policy,
                                const ReferencePolicy& ref,
                                const IntentModel& intent_model,
                                const std::vector<Distribution>& targets,
                                const LossConfig& config) {
  switch (config.variant) {
    case LossVariant::kDpo:
      return dpo_loss(batch, policy, ref, config);
    case LossVariant::kGdpo:
      return gdpo_loss(batch, policy, ref, intent_model, targets, config);
    case LossVariant::kAipoSeparable:
    case LossVariant::kAipoLogit:
      return aipo_loss(batch, policy, ref, intent_model, config);
  }
  throw InvalidArgumentError("unknown loss variant");
}

}  // namespace aipo

#endif  // AIPO_LOSSES_HPP
