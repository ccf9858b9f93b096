#ifndef AIPO_TRAINER_HPP
#define AIPO_TRAINER_HPP

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "aipo/common.hpp"
#include "aipo/datagen.hpp"
#include "aipo/embedding.hpp"
#include "aipo/intent.hpp"
#include "aipo/losses.hpp"
#include "aipo/policy.hpp"
#include "aipo/types.hpp"

// The training workflow: joint policy/intent gradient descent on a chosen
// objective with linear warmup, gradient clipping, periodic validation,
// early stopping, and per-checkpoint reward-margin logging. Also the
// paired-fit diagnostic that measures the likelihood gain from
// conditioning preference prediction on the intent.

namespace aipo {

struct TrainConfig {
  LossConfig loss;
  std::size_t steps = 2000;
  std::size_t batch_size = 64;
  double learning_rate_policy = 20.0;
  double learning_rate_intent = 0.0;  // 0 disables joint intent updates
  std::size_t warmup_steps = 150;
  std::size_t eval_every = 250;
  std::size_t patience = 1000000;  // evaluations without improvement
  double grad_clip_norm = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    loss.validate();
    if (batch_size == 0) throw InvalidArgumentError("batch_size must be > 0");
    if (learning_rate_policy <= 0.0)
      throw InvalidArgumentError("learning_rate_policy must be positive");
    if (learning_rate_intent < 0.0)
      throw InvalidArgumentError("learning_rate_intent must be nonnegative");
    if (warmup_steps == 0) throw InvalidArgumentError("warmup_steps must be > 0");
    if (grad_clip_norm <= 0.0)
      throw InvalidArgumentError("grad_clip_norm must be positive");
    if (steps > 0 && (eval_every == 0 || eval_every > steps))
      throw InvalidArgumentError("eval_every must lie in [1, steps]");
    if (patience == 0) throw InvalidArgumentError("patience must be > 0");
    // The separable similarity term is unbounded below in lambda; the
    // trainer only accepts lambda <= 1 for that variant.
    if (loss.variant == LossVariant::kAipoSeparable && loss.lambda > 1.0)
      throw InvalidArgumentError(
          "separable variant requires lambda <= 1 in training");
  }
};

struct TrainCheckpoint {
  std::size_t step = 0;
  double margin = 0.0;      // mean probe margin: E[beta*dlogratio] + lambda*E[dsim]
  double val_metric = 0.0;  // mean validation loss of the trained objective

  bool operator==(const TrainCheckpoint&) const = default;
};

struct TrainLog {
  std::vector<double> step_loss;
  std::vector<double> post_clip_policy_norm;
  std::vector<double> post_clip_intent_norm;
  std::vector<TrainCheckpoint> checkpoints;
  std::size_t best_checkpoint = 0;  // index into checkpoints

  bool operator==(const TrainLog&) const = default;
};

struct TrainResult {
  PolicyModel policy;   // best checkpoint
  IntentModel intents;  // best checkpoint
  PolicyModel final_policy;   // state at the last completed step (for resume)
  IntentModel final_intents;
  double best_val = 0.0;
  std::size_t best_step = 0;
  std::size_t completed_steps = 0;
  std::size_t evals_since_improve = 0;
  TrainLog log;
};

// Effective rate: linear warmup to the base rate, then constant.
inline double warmup_rate(double base, std::size_t step,
                          std::size_t warmup_steps) {
  if (step < warmup_steps)
    return base * static_cast<double>(step + 1) /
           static_cast<double>(warmup_steps);
  return base;
}

// Scales the gradient down to the clip norm when it exceeds it; returns the
// post-clip norm.
inline double clip_gradient(Matrix& g, double max_norm) {
  const double n = g.frobenius_norm();
  if (n > max_norm && n > 0.0) {
    const double s = max_norm / n;
    for (double& v : g.data) v *= s;
    return max_norm;
  }
  return n;
}

// Seeds zero (untrained) embedding rows with the taxonomy prototypes when
// the loss actually conditions on them: the similarity term needs nonzero
// rows, and belief conditioning is vacuous at zero. A lambda=0 aipo run
// keeps the zero table, so its intent machinery is inert and the run
// reduces exactly to DPO.
inline IntentModel prepare_intent_model(IntentModel model,
                                        const LossConfig& loss) {
  const bool wants_conditioning =
      loss.variant == LossVariant::kGdpo ||
      ((loss.variant == LossVariant::kAipoLogit ||
        loss.variant == LossVariant::kAipoSeparable) &&
       loss.lambda > 0.0);
  if (!wants_conditioning) return model;
  for (std::size_t k = 0; k < model.embeddings.rows; ++k) {
    double* row = model.embeddings.row(k);
    const double norm =
        std::sqrt(dot(row, row, model.embeddings.cols));
    if (norm > 0.0) continue;  // already trained or seeded
    const std::vector<double> proto =
        intent_prototype(static_cast<int>(k), model.embeddings.cols);
    std::copy(proto.begin(), proto.end(), row);
  }
  return model;
}

namespace detail {

inline std::vector<Distribution> one_hot_targets(
    std::span<const PreferenceRecord> recs, std::size_t k) {
  std::vector<Distribution> out;
  out.reserve(recs.size());
  for (const auto& r : recs) {
    std::vector<double> p(k, 0.0);
    if (r.intent < 0 || static_cast<std::size_t>(r.intent) >= k)
      throw InvalidArgumentError("record intent outside taxonomy");
    p[static_cast<std::size_t>(r.intent)] = 1.0;
    out.push_back(Distribution{std::move(p)});
  }
  return out;
}

// Per-step batch drawn from a step-keyed stream, so a resumed run replays
// the identical batch sequence.
inline std::vector<PreferenceRecord> draw_batch(
    const std::vector<PreferenceRecord>& train, std::size_t batch_size,
    std::uint64_t seed, std::size_t step) {
  std::mt19937_64 rng(mix64(seed, 0x42a7c0ffull + step));
  std::vector<PreferenceRecord> batch;
  batch.reserve(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) {
    const auto idx = static_cast<std::size_t>(
        uniform01(rng) * static_cast<double>(train.size()));
    batch.push_back(train[std::min(idx, train.size() - 1)]);
  }
  return batch;
}

inline double probe_margin(const LossReport& rep, double lambda) {
  double acc = 0.0;
  for (std::size_t i = 0; i < rep.per_pair_margin.size(); ++i)
    acc += rep.per_pair_margin[i] + lambda * rep.per_pair_dsim[i];
  return acc / static_cast<double>(rep.per_pair_margin.size());
}

}  // namespace detail

// Optional warm start, used to resume a run from a saved step.
struct TrainState {
  std::size_t start_step = 0;
  double best_val = 0.0;
  std::size_t best_step = 0;
  std::size_t evals_since_improve = 0;
  bool has_best = false;
  const PolicyModel* best_policy = nullptr;   // set when has_best
  const IntentModel* best_intents = nullptr;  // set when has_best
};

// Runs gradient descent on the configured objective. The reference policy
// is frozen throughout; policy (and optionally intent) parameters update
// each step; every eval_every steps the run validates, logs the probe
// margin, and keeps the best checkpoint (ties resolve to the earliest).
inline TrainResult run_training(const std::vector<PreferenceRecord>& train,
                                const std::vector<PreferenceRecord>& val,
                                PolicyModel policy, const ReferencePolicy& ref,
                                IntentModel intents, const TrainConfig& config,
                                const TrainState& resume = {}) {
  config.validate();
  if (config.steps > 0 && (train.empty() || val.empty()))
    throw InvalidArgumentError("run_training: empty split");

  const std::size_t k = intents.num_intents();
  TrainResult out;
  out.log = TrainLog{};

  // Fixed probe set for margin logging: 256 records sampled once from the
  // validation split.
  std::vector<PreferenceRecord> probe;
  if (config.steps > 0) {
    std::mt19937_64 prng(mix64(config.seed, 0x9e0b5eull));
    const std::size_t n_probe = std::min<std::size_t>(256, val.size());
    for (std::size_t i = 0; i < n_probe; ++i) {
      const auto idx = static_cast<std::size_t>(
          uniform01(prng) * static_cast<double>(val.size()));
      probe.push_back(val[std::min(idx, val.size() - 1)]);
    }
  }

  auto loss_on = [&](std::span<const PreferenceRecord> recs,
                     const PolicyModel& p, const IntentModel& im) {
    const auto targets = config.loss.variant == LossVariant::kGdpo
                             ? detail::one_hot_targets(recs, k)
                             : std::vector<Distribution>();
    return evaluate_loss(recs, p, ref, im, targets, config.loss);
  };

  PolicyModel best_policy =
      resume.has_best && resume.best_policy ? *resume.best_policy : policy;
  IntentModel best_intents =
      resume.has_best && resume.best_intents ? *resume.best_intents : intents;
  double best_val = resume.has_best ? resume.best_val
                                    : std::numeric_limits<double>::infinity();
  std::size_t best_step = resume.best_step;
  std::size_t evals_since_improve = resume.evals_since_improve;
  bool stopped_early = false;
  std::size_t completed = resume.start_step;

  for (std::size_t s = resume.start_step; s < config.steps; ++s) {
    completed = s + 1;
    const auto batch =
        detail::draw_batch(train, config.batch_size, config.seed, s);
    LossReport rep = loss_on(batch, policy, intents);
    if (std::isnan(rep.value))
      throw TrainingDivergedError("training loss is NaN",
                                  static_cast<long>(s));
    out.log.step_loss.push_back(rep.value);

    const double lr_p =
        warmup_rate(config.learning_rate_policy, s, config.warmup_steps);
    out.log.post_clip_policy_norm.push_back(
        clip_gradient(rep.grad_policy, config.grad_clip_norm));
    try {
      policy.apply_gradient(rep.grad_policy, -lr_p);
    } catch (const NumericRangeError& e) {
      throw TrainingDivergedError(e.what(), static_cast<long>(s));
    }

    if (config.learning_rate_intent > 0.0 && rep.grad_classifier.rows > 0) {
      // Clip the intent gradient (classifier + embeddings) as one block.
      const double n2 =
          std::sqrt(rep.grad_classifier.frobenius_norm() *
                        rep.grad_classifier.frobenius_norm() +
                    rep.grad_embedding.frobenius_norm() *
                        rep.grad_embedding.frobenius_norm());
      double scale = 1.0;
      if (n2 > config.grad_clip_norm && n2 > 0.0)
        scale = config.grad_clip_norm / n2;
      out.log.post_clip_intent_norm.push_back(std::min(n2, config.grad_clip_norm));
      const double lr_i =
          warmup_rate(config.learning_rate_intent, s, config.warmup_steps);
      intents.classifier.add_scaled(rep.grad_classifier, -lr_i * scale);
      intents.embeddings.add_scaled(rep.grad_embedding, -lr_i * scale);
    } else {
      out.log.post_clip_intent_norm.push_back(0.0);
    }

    if ((s + 1) % config.eval_every == 0) {
      TrainCheckpoint ck;
      ck.step = s + 1;
      ck.val_metric = loss_on(val, policy, intents).value;
      ck.margin = probe.empty()
                      ? 0.0
                      : detail::probe_margin(loss_on(probe, policy, intents),
                                             config.loss.lambda);
      out.log.checkpoints.push_back(ck);
      if (ck.val_metric < best_val) {  // strict: ties keep the earliest
        best_val = ck.val_metric;
        best_step = ck.step;
        best_policy = policy;
        best_intents = intents;
        out.log.best_checkpoint = out.log.checkpoints.size() - 1;
        evals_since_improve = 0;
      } else {
        ++evals_since_improve;
        if (evals_since_improve >= config.patience) {
          stopped_early = true;
        }
      }
      if (stopped_early) break;
    }
  }

  out.final_policy = policy;
  out.final_intents = intents;
  out.best_val = best_val;
  out.best_step = best_step;
  out.completed_steps = completed;
  out.evals_since_improve = evals_since_improve;
  if (best_val == std::numeric_limits<double>::infinity()) {
    // No checkpoint happened (steps == 0): return the inputs as-is.
    out.policy = std::move(policy);
    out.intents = std::move(intents);
  } else {
    out.policy = std::move(best_policy);
    out.intents = std::move(best_intents);
  }
  return out;
}

// Margin series of a completed run, for plotting.
inline std::vector<std::pair<std::size_t, double>> margin_trajectory(
    const TrainLog& log) {
  if (log.step_loss.empty() && log.checkpoints.empty())
    throw InvalidArgumentError("margin_trajectory: empty log");
  std::vector<std::pair<std::size_t, double>> out;
  out.reserve(log.checkpoints.size());
  for (const auto& ck : log.checkpoints) out.emplace_back(ck.step, ck.margin);
  return out;
}

// ---------------------------------------------------------------------------
// TrainLog CSV: header step,loss,margin,val_metric; margin and val_metric
// only on checkpoint rows.
// ---------------------------------------------------------------------------

inline void write_train_log_csv(const std::string& path, const TrainLog& log) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for write: " + path);
  out << "step,loss,margin,val_metric\n";
  std::size_t next_ck = 0;
  for (std::size_t s = 0; s < log.step_loss.size(); ++s) {
    out << (s + 1) << ',' << format_double(log.step_loss[s]) << ',';
    if (next_ck < log.checkpoints.size() &&
        log.checkpoints[next_ck].step == s + 1) {
      out << format_double(log.checkpoints[next_ck].margin) << ','
          << format_double(log.checkpoints[next_ck].val_metric);
      ++next_ck;
    } else {
      out << ',';
    }
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Conditioning diagnostic
// ---------------------------------------------------------------------------

struct ConditioningGap {
  double nll_x_only = 0.0;
  double nll_x_and_intent = 0.0;
};

namespace detail {

// Damped Newton on the pairwise-preference NLL with a tiny ridge. The
// ridge makes the optimum finite on separable data so the gradient-norm
// stopping rule is attainable; the reported NLL is the data term.
class PreferencePredictorFit {
 public:
  PreferencePredictorFit(std::size_t response_count, std::size_t dim)
      : r_(response_count), d_(dim), w_(response_count * dim, 0.0) {}

  // features: one vector per record; each pair contributes
  // softplus(-(w[y_w] - w[y_l]) . f).
  double fit(const std::vector<std::vector<double>>& features,
             std::span<const PreferenceRecord> recs, double ridge = 1e-9,
             std::size_t max_iter = 200, double tol = 1e-8) {
    const std::size_t p = w_.size();
    const double inv_n = 1.0 / static_cast<double>(recs.size());
    std::vector<double> grad(p), step(p);
    std::vector<double> hess(p * p);

    double obj = objective(features, recs, w_, ridge, inv_n);
    for (std::size_t it = 0; it < max_iter; ++it) {
      std::fill(grad.begin(), grad.end(), 0.0);
      std::fill(hess.begin(), hess.end(), 0.0);
      for (std::size_t i = 0; i < recs.size(); ++i) {
        const auto& f = features[i];
        const double delta = pair_delta(recs[i], f);
        const double sneg = sigmoid(-delta);
        const double curv = sneg * (1.0 - sneg);
        add_pair_vector(grad, recs[i], f, -sneg * inv_n);
        add_pair_outer(hess, recs[i], f, curv * inv_n);
      }
      double gnorm2 = 0.0;
      for (std::size_t j = 0; j < p; ++j) {
        grad[j] += ridge * w_[j];
        hess[j * p + j] += ridge;
        gnorm2 += grad[j] * grad[j];
      }
      if (std::sqrt(gnorm2) < tol) {
        return data_nll(features, recs, inv_n);
      }
      cholesky_solve(hess, grad, step, p);
      // Trust cap plus backtracking keeps the damped step monotone. The
      // acceptance slack covers objective-evaluation rounding noise, which
      // otherwise freezes the final Newton steps whose true improvement is
      // below the summation error.
      double snorm = 0.0;
      for (double v : step) snorm += v * v;
      snorm = std::sqrt(snorm);
      double scale = snorm > 5.0 ? 5.0 / snorm : 1.0;
      for (int bt = 0; bt < 60; ++bt) {
        std::vector<double> trial(p);
        for (std::size_t j = 0; j < p; ++j)
          trial[j] = w_[j] - scale * step[j];
        const double tobj = objective(features, recs, trial, ridge, inv_n);
        if (tobj <= obj + 1e-12) {
          w_ = std::move(trial);
          obj = tobj;
          break;
        }
        scale *= 0.5;
      }
    }
    throw OptimizationFailedError(
        "conditioning_gap: Newton failed to reach gradient tolerance");
  }

 private:
  double pair_delta(const PreferenceRecord& r,
                    const std::vector<double>& f) const {
    const double* ww = w_.data() + static_cast<std::size_t>(r.y_w) * d_;
    const double* wl = w_.data() + static_cast<std::size_t>(r.y_l) * d_;
    double delta = 0.0;
    for (std::size_t j = 0; j < d_; ++j) delta += (ww[j] - wl[j]) * f[j];
    return delta;
  }

  void add_pair_vector(std::vector<double>& v, const PreferenceRecord& r,
                       const std::vector<double>& f, double c) const {
    double* vw = v.data() + static_cast<std::size_t>(r.y_w) * d_;
    double* vl = v.data() + static_cast<std::size_t>(r.y_l) * d_;
    for (std::size_t j = 0; j < d_; ++j) {
      vw[j] += c * f[j];
      vl[j] -= c * f[j];
    }
  }

  // hess += c * psi psi^T with psi the sparse pair feature (two row blocks).
  void add_pair_outer(std::vector<double>& h, const PreferenceRecord& r,
                      const std::vector<double>& f, double c) const {
    const std::size_t p = w_.size();
    const std::size_t ow = static_cast<std::size_t>(r.y_w) * d_;
    const std::size_t ol = static_cast<std::size_t>(r.y_l) * d_;
    for (std::size_t a = 0; a < d_; ++a) {
      const double ca = c * f[a];
      for (std::size_t b = 0; b < d_; ++b) {
        const double v = ca * f[b];
        h[(ow + a) * p + (ow + b)] += v;
        h[(ol + a) * p + (ol + b)] += v;
        h[(ow + a) * p + (ol + b)] -= v;
        h[(ol + a) * p + (ow + b)] -= v;
      }
    }
  }

  double objective(const std::vector<std::vector<double>>& features,
                   std::span<const PreferenceRecord> recs,
                   const std::vector<double>& w, double ridge,
                   double inv_n) const {
    double acc = 0.0;
    for (std::size_t i = 0; i < recs.size(); ++i) {
      const double* ww = w.data() + static_cast<std::size_t>(recs[i].y_w) * d_;
      const double* wl = w.data() + static_cast<std::size_t>(recs[i].y_l) * d_;
      double delta = 0.0;
      for (std::size_t j = 0; j < d_; ++j)
        delta += (ww[j] - wl[j]) * features[i][j];
      acc += bt_nll(delta);
    }
    double reg = 0.0;
    for (double v : w) reg += v * v;
    return acc * inv_n + 0.5 * ridge * reg;
  }

  double data_nll(const std::vector<std::vector<double>>& features,
                  std::span<const PreferenceRecord> recs, double inv_n) const {
    double acc = 0.0;
    for (std::size_t i = 0; i < recs.size(); ++i)
      acc += bt_nll(pair_delta(recs[i], features[i]));
    return acc * inv_n;
  }

  static void cholesky_solve(std::vector<double>& a, std::vector<double>& b,
                             std::vector<double>& x, std::size_t n) {
    // In-place LL^T; a is symmetric positive definite (ridge added).
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j <= i; ++j) {
        double s = a[i * n + j];
        for (std::size_t m = 0; m < j; ++m) s -= a[i * n + m] * a[j * n + m];
        if (i == j) {
          if (s <= 0.0)
            throw OptimizationFailedError("conditioning_gap: Hessian not PD");
          a[i * n + i] = std::sqrt(s);
        } else {
          a[i * n + j] = s / a[j * n + j];
        }
      }
    }
    x.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double s = b[i];
      for (std::size_t m = 0; m < i; ++m) s -= a[i * n + m] * x[m];
      x[i] = s / a[i * n + i];
    }
    for (std::size_t ii = n; ii-- > 0;) {
      double s = x[ii];
      for (std::size_t m = ii + 1; m < n; ++m) s -= a[m * n + ii] * x[m];
      x[ii] = s / a[ii * n + ii];
    }
  }

  std::size_t r_, d_;
  std::vector<double> w_;
};

}  // namespace detail

// Fits two convex pairwise-preference predictors to convergence (gradient
// norm < 1e-8): one on prompt features alone, one on prompt features plus
// the intent one-hot. Conditioning can only improve the attainable NLL.
inline ConditioningGap conditioning_gap(
    const std::vector<PreferenceRecord>& dataset, std::size_t response_count,
    std::size_t num_intents) {
  if (dataset.empty())
    throw InvalidArgumentError("conditioning_gap: empty dataset");
  const std::size_t d = dataset[0].prompt.size();
  std::vector<std::vector<double>> fx(dataset.size());
  std::vector<std::vector<double>> fxi(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    fx[i] = dataset[i].prompt;
    fxi[i] = dataset[i].prompt;
    std::vector<double> onehot(num_intents, 0.0);
    if (dataset[i].intent < 0 ||
        static_cast<std::size_t>(dataset[i].intent) >= num_intents)
      throw InvalidArgumentError("conditioning_gap: intent outside taxonomy");
    onehot[static_cast<std::size_t>(dataset[i].intent)] = 1.0;
    fxi[i].insert(fxi[i].end(), onehot.begin(), onehot.end());
  }
  ConditioningGap out;
  detail::PreferencePredictorFit fit_x(response_count, d);
  out.nll_x_only = fit_x.fit(fx, dataset);
  detail::PreferencePredictorFit fit_xi(response_count, d + num_intents);
  out.nll_x_and_intent = fit_xi.fit(fxi, dataset);
  return out;
}

}  // namespace aipo

#endif  // AIPO_TRAINER_HPP
