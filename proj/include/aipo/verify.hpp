#ifndef AIPO_VERIFY_HPP
#define AIPO_VERIFY_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "aipo/datagen.hpp"
#include "aipo/embedding.hpp"
#include "aipo/eval.hpp"
#include "aipo/intent.hpp"
#include "aipo/losses.hpp"
#include "aipo/policy.hpp"
#include "aipo/probcore.hpp"
#include "aipo/trainer.hpp"

// The release-gate property suite: every module's invariants as named,
// machine-readable checks. The fault-injection hook exists so the suite
// can be smoke-tested (a deliberately perturbed operation must turn the
// matching property red by name); it perturbs nothing outside this suite.

namespace aipo::verify {

struct PropertyResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct FaultInjection {
  bool shifted_logit_sign_flip = false;
};

inline FaultInjection fault_from_string(const std::string& s) {
  FaultInjection f;
  if (s.empty()) return f;
  if (s == "shifted_logit_sign_flip") {
    f.shifted_logit_sign_flip = true;
    return f;
  }
  throw InvalidArgumentError("unknown fault id: " + s);
}

// ---------------------------------------------------------------------------
// Shared random-instance helpers (also used by the unit and acceptance
// suites).
// ---------------------------------------------------------------------------

struct SmallInstance {
  PolicyModel policy;
  ReferencePolicy ref;
  IntentModel intents;
  std::vector<PreferenceRecord> batch;
  std::vector<Distribution> targets;  // one-hot beliefs per record
};

inline SmallInstance make_instance(std::uint64_t seed, std::size_t k,
                                   std::size_t responses, std::size_t d,
                                   std::size_t e, std::size_t batch_size,
                                   bool nonneg_dsim = false) {
  std::mt19937_64 rng(seed);
  SmallInstance inst{
      PolicyModel::init(responses, d, e, mix64(seed, 1)),
      ReferencePolicy(PolicyModel::init(responses, d, e, mix64(seed, 2))),
      IntentModel{}, {}, {}};
  const std::size_t dc = d + e;
  inst.intents.classifier = Matrix(k, dc);
  inst.intents.embeddings = Matrix(k, e);
  for (double& v : inst.intents.classifier.data)
    v = uniform_in(rng, -0.8, 0.8);
  for (std::size_t r = 0; r < k; ++r) {
    double norm = 0.0;
    while (norm < 0.25) {
      norm = 0.0;
      for (std::size_t j = 0; j < e; ++j) {
        // Positive-orthant rows make nonnegative similarity gaps samplable.
        inst.intents.embeddings.at(r, j) =
            nonneg_dsim ? uniform_in(rng, 0.05, 1.0)
                        : uniform_in(rng, -1.0, 1.0);
        norm += inst.intents.embeddings.at(r, j) *
                inst.intents.embeddings.at(r, j);
      }
      norm = std::sqrt(norm);
    }
  }

  auto dsim_ok = [&](int y_w, int y_l) {
    if (!nonneg_dsim) return true;
    bool strict = false;
    for (std::size_t c = 0; c < k; ++c) {
      const std::vector<double> row =
          inst.intents.embedding_row(static_cast<int>(c));
      const double dw = cosine(response_embedding(y_w, e), row);
      const double dl = cosine(response_embedding(y_l, e), row);
      if (dw < dl) return false;
      if (dw > dl) strict = true;
    }
    return strict;
  };

  for (std::size_t i = 0; i < batch_size; ++i) {
    PreferenceRecord r;
    for (int attempt = 0;; ++attempt) {
      r.y_w = static_cast<int>(uniform01(rng) * static_cast<double>(responses));
      r.y_l = static_cast<int>(uniform01(rng) * static_cast<double>(responses));
      r.y_w = std::min(r.y_w, static_cast<int>(responses) - 1);
      r.y_l = std::min(r.y_l, static_cast<int>(responses) - 1);
      if (r.y_w != r.y_l && dsim_ok(r.y_w, r.y_l)) break;
      if (attempt > 20000)
        throw InvalidArgumentError("could not sample a nonneg-dsim pair");
    }
    r.prompt.resize(d);
    for (double& v : r.prompt) v = uniform_in(rng, -1.0, 1.0);
    r.context.resize(dc);
    for (double& v : r.context) v = uniform_in(rng, -1.0, 1.0);
    r.intent = static_cast<int>(uniform01(rng) * static_cast<double>(k));
    r.intent = std::min(r.intent, static_cast<int>(k) - 1);
    r.domain = domain_tags()[i % 6];
    std::vector<double> p(k, 0.0);
    p[static_cast<std::size_t>(r.intent)] = 1.0;
    inst.targets.push_back(Distribution{std::move(p)});
    inst.batch.push_back(std::move(r));
  }
  return inst;
}

// Max relative error between the analytic gradients of a loss and central
// finite differences over every parameter block, step 1e-5.
inline double finite_difference_error(const LossConfig& config,
                                      SmallInstance& inst) {
  const auto eval = [&]() {
    return evaluate_loss(inst.batch, inst.policy, inst.ref, inst.intents,
                         inst.targets, config)
        .value;
  };
  const LossReport rep = evaluate_loss(inst.batch, inst.policy, inst.ref,
                                       inst.intents, inst.targets, config);
  const double h = 1e-5;
  double worst = 0.0;
  auto probe = [&](double& slot, double analytic) {
    const double keep = slot;
    slot = keep + h;
    const double up = eval();
    slot = keep - h;
    const double down = eval();
    slot = keep;
    const double fd = (up - down) / (2.0 * h);
    const double rel =
        std::abs(fd - analytic) /
        std::max({1.0, std::abs(fd), std::abs(analytic)});
    worst = std::max(worst, rel);
  };
  for (std::size_t i = 0; i < inst.policy.weights.data.size(); ++i)
    probe(inst.policy.weights.data[i], rep.grad_policy.data[i]);
  if (rep.grad_classifier.rows > 0) {
    for (std::size_t i = 0; i < inst.intents.classifier.data.size(); ++i)
      probe(inst.intents.classifier.data[i], rep.grad_classifier.data[i]);
    for (std::size_t i = 0; i < inst.intents.embeddings.data.size(); ++i)
      probe(inst.intents.embeddings.data[i], rep.grad_embedding.data[i]);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Property suite
// ---------------------------------------------------------------------------

namespace detail {

using Check = std::function<std::string()>;  // empty string = pass

inline PropertyResult run_check(const std::string& name, const Check& body) {
  PropertyResult r;
  r.name = name;
  try {
    r.detail = body();
    r.pass = r.detail.empty();
  } catch (const std::exception& e) {
    r.pass = false;
    r.detail = std::string("exception: ") + e.what();
  }
  return r;
}

}  // namespace detail

inline std::vector<PropertyResult> run_property_suite(
    const FaultInjection& faults = {}) {
  std::vector<PropertyResult> results;
  auto add = [&](const std::string& name, const detail::Check& body) {
    results.push_back(detail::run_check(name, body));
  };

  // Hookable shifted_logit, so the suite itself can be mutation-tested.
  auto shifted = [&](double base, double lambda, double dsim) {
    if (faults.shifted_logit_sign_flip)
      return base - lambda * dsim;
    return shifted_logit(base, lambda, dsim);
  };

  add("probcore.margin_shift", [&]() -> std::string {
    std::mt19937_64 rng(11);
    for (int i = 0; i < 10000; ++i) {
      const double base = uniform_in(rng, -8.0, 8.0);
      const double lambda = uniform_in(rng, 0.05, 2.0);
      const double dsim = uniform_in(rng, 0.05, 2.0);
      if (!(sigmoid(shifted(base, lambda, dsim)) > sigmoid(base)))
        return "sigma(shifted) !> sigma(base) at base=" + format_double(base);
    }
    return "";
  });

  add("probcore.nll_monotone", [&]() -> std::string {
    std::mt19937_64 rng(12);
    for (int i = 0; i < 5000; ++i) {
      const double base = uniform_in(rng, -8.0, 8.0);
      const double lambda = uniform_in(rng, 0.05, 2.0);
      const double dsim = uniform_in(rng, 0.05, 2.0);
      if (bt_nll(shifted(base, lambda, dsim)) >= bt_nll(base))
        return "NLL not strictly reduced by a positive shift";
    }
    // Dataset-average NLL nonincreasing in lambda over nonnegative gaps.
    std::vector<double> bases, gaps;
    for (int i = 0; i < 200; ++i) {
      bases.push_back(uniform_in(rng, -4.0, 4.0));
      gaps.push_back(uniform_in(rng, 0.0, 1.5));
    }
    double prev = std::numeric_limits<double>::infinity();
    for (double lambda : {0.0, 0.1, 0.2, 0.5}) {
      double mean = 0.0;
      for (std::size_t i = 0; i < bases.size(); ++i)
        mean += bt_nll(shifted(bases[i], lambda, gaps[i]));
      mean /= static_cast<double>(bases.size());
      if (mean > prev + 1e-12) return "dataset-average NLL rose with lambda";
      prev = mean;
    }
    return "";
  });

  add("probcore.tilt_roundtrip", []() -> std::string {
    std::mt19937_64 rng(13);
    for (int i = 0; i < 1000; ++i) {
      const std::size_t n =
          2 + static_cast<std::size_t>(uniform01(rng) * 15.0);
      std::vector<double> raw(n), reward(n), sim(n);
      double total = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        raw[j] = 0.05 + uniform01(rng);
        total += raw[j];
      }
      for (double& v : raw) v /= total;
      for (std::size_t j = 0; j < n; ++j) {
        reward[j] = uniform_in(rng, -2.0, 2.0);
        sim[j] = uniform_in(rng, -1.0, 1.0);
      }
      const Distribution ref = Distribution::from_probs(raw);
      // Bounded sharpness keeps the tilted distribution full-support.
      const double beta = uniform_in(rng, 0.5, 2.0);
      const double lambda = uniform_in(rng, 0.0, 1.0);
      const TiltResult t = tilt_reference(ref, reward, sim, beta, lambda);
      const std::vector<double> back = reconstruct_reward(
          t.tilted, ref, sim, beta, lambda, t.log_partition);
      for (std::size_t j = 0; j < n; ++j)
        if (std::abs(back[j] - reward[j]) > 1e-9)
          return "round-trip error above 1e-9";
    }
    return "";
  });

  add("probcore.baseline_cancellation", []() -> std::string {
    std::mt19937_64 rng(14);
    for (int i = 0; i < 500; ++i) {
      const std::size_t n = 2 + static_cast<std::size_t>(uniform01(rng) * 6.0);
      std::vector<double> reward(n);
      for (double& v : reward) v = uniform_in(rng, -3.0, 3.0);
      const double c = uniform_in(rng, -5.0, 5.0);
      for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = 0; b < n; ++b) {
          if (a == b) continue;
          const double p0 = sigmoid(reward[a] - reward[b]);
          const double p1 = sigmoid((reward[a] + c) - (reward[b] + c));
          if (std::abs(p0 - p1) > 1e-12)
            return "pairwise probability moved under a constant shift";
        }
    }
    return "";
  });

  add("probcore.heterogeneity_gap", []() -> std::string {
    std::mt19937_64 rng(15);
    for (int i = 0; i < 1000; ++i) {
      const std::size_t n = 2 + static_cast<std::size_t>(uniform01(rng) * 3.0);
      std::vector<double> deltas(n), w(n);
      double total = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        deltas[j] = uniform_in(rng, -4.0, 4.0);
        w[j] = 0.05 + uniform01(rng);
        total += w[j];
      }
      for (double& v : w) v /= total;
      const double gap =
          heterogeneity_gap(deltas, Distribution::from_probs(w));
      if (gap < 0.0) return "gap negative";
    }
    const double zero = heterogeneity_gap(
        {1.3, 1.3, 1.3}, Distribution::uniform(3));
    if (std::abs(zero) > 1e-12) return "gap nonzero for constant deltas";
    return "";
  });

  add("policy.normalization", []() -> std::string {
    std::mt19937_64 rng(16);
    for (int i = 0; i < 200; ++i) {
      const PolicyModel m = PolicyModel::init(5, 4, 3, mix64(16, i));
      FeatureVector x(4);
      std::vector<double> z(3);
      for (double& v : x) v = uniform_in(rng, -2.0, 2.0);
      for (double& v : z) v = uniform_in(rng, -2.0, 2.0);
      double mass = 0.0;
      for (double lp : log_probs(m, x, z)) mass += std::exp(lp);
      if (std::abs(mass - 1.0) > 1e-10) return "softmax mass off by >1e-10";
    }
    return "";
  });

  add("policy.grad_finite_diff", []() -> std::string {
    std::mt19937_64 rng(17);
    for (int i = 0; i < 100; ++i) {
      PolicyModel m = PolicyModel::init(4, 3, 2, mix64(17, i));
      for (double& w : m.weights.data) w = uniform_in(rng, -0.5, 0.5);
      FeatureVector x(3);
      std::vector<double> z(2);
      for (double& v : x) v = uniform_in(rng, -1.0, 1.0);
      for (double& v : z) v = uniform_in(rng, -1.0, 1.0);
      const std::size_t y =
          static_cast<std::size_t>(uniform01(rng) * 4.0) % 4;
      const Matrix g = grad_log_prob(m, x, z, y);
      const double h = 1e-5;
      for (std::size_t p = 0; p < m.weights.data.size(); ++p) {
        const double keep = m.weights.data[p];
        m.weights.data[p] = keep + h;
        const double up = log_prob(m, x, z, y);
        m.weights.data[p] = keep - h;
        const double down = log_prob(m, x, z, y);
        m.weights.data[p] = keep;
        const double fd = (up - down) / (2.0 * h);
        const double rel = std::abs(fd - g.data[p]) /
                           std::max({1.0, std::abs(fd), std::abs(g.data[p])});
        if (rel > 1e-5) return "policy gradient FD mismatch";
      }
    }
    return "";
  });

  add("policy.reference_frozen", []() -> std::string {
    ReferencePolicy ref(PolicyModel::init(3, 2, 1, 7));
    Matrix g(3, 3);
    try {
      ref.apply_gradient(g, 0.1);
    } catch (const FrozenModelError&) {
      return "";
    }
    return "frozen reference accepted an update";
  });

  add("intent.posterior_validity", []() -> std::string {
    std::mt19937_64 rng(18);
    IntentModel m;
    m.classifier = Matrix(4, 5);
    m.embeddings = Matrix(4, 3);
    for (double& v : m.classifier.data) v = uniform_in(rng, -2.0, 2.0);
    for (int i = 0; i < 1000; ++i) {
      ContextVector x(5);
      for (double& v : x) v = uniform_in(rng, -3.0, 3.0);
      const Distribution q = intent_posterior(m, x);
      double mass = 0.0;
      for (double p : q.probs) {
        if (p < 0.0 || p > 1.0) return "posterior entry outside [0,1]";
        mass += p;
      }
      if (std::abs(mass - 1.0) > 1e-10) return "posterior mass off";
    }
    return "";
  });

  add("intent.bce_kl", []() -> std::string {
    std::mt19937_64 rng(19);
    for (int i = 0; i < 500; ++i) {
      std::vector<double> pred(4);
      std::vector<int> labels(4);
      for (std::size_t j = 0; j < 4; ++j) {
        pred[j] = uniform01(rng);
        labels[j] = uniform01(rng) < 0.5 ? 0 : 1;
      }
      if (intention_bce_loss(pred, labels) < 0.0) return "BCE negative";
    }
    const double perfect = intention_bce_loss({1.0, 0.0, 1.0}, {1, 0, 1});
    if (perfect > 3e-12) return "clamped-perfect BCE not ~0";
    for (int i = 0; i < 500; ++i) {
      std::vector<double> a(4), b(4);
      double sa = 0.0, sb = 0.0;
      for (std::size_t j = 0; j < 4; ++j) {
        a[j] = 0.05 + uniform01(rng);
        b[j] = 0.05 + uniform01(rng);
        sa += a[j];
        sb += b[j];
      }
      for (std::size_t j = 0; j < 4; ++j) {
        a[j] /= sa;
        b[j] /= sb;
      }
      const Distribution qa = Distribution::from_probs(a);
      const Distribution qb = Distribution::from_probs(b);
      if (kl_to_prior(qa, qb) < 0.0) return "KL negative";
      if (kl_to_prior(qa, qa) > 1e-12) return "KL(q,q) nonzero";
    }
    return "";
  });

  add("intent.similarity_bounds", []() -> std::string {
    std::mt19937_64 rng(20);
    IntentModel m;
    m.classifier = Matrix(3, 2);
    m.embeddings = Matrix(3, 6);
    for (double& v : m.embeddings.data) v = uniform_in(rng, -1.0, 1.0);
    for (int i = 0; i < 500; ++i) {
      std::vector<double> u(6);
      for (double& v : u) v = uniform_in(rng, -1.0, 1.0);
      const int k = i % 3;
      const double s = similarity(u, k, m);
      if (s < -1.0 - 1e-12 || s > 1.0 + 1e-12) return "similarity outside [-1,1]";
      std::vector<double> scaled = u;
      const double c = 0.1 + 5.0 * uniform01(rng);
      for (double& v : scaled) v *= c;
      if (std::abs(similarity(scaled, k, m) - s) > 1e-12)
        return "similarity not scale-invariant";
    }
    return "";
  });

  add("intent.surrogate_bound", []() -> std::string {
    std::mt19937_64 rng(21);
    for (int i = 0; i < 10000; ++i) {
      const std::size_t support = 2 + static_cast<std::size_t>(uniform01(rng) * 4.0);
      const std::size_t k = 1 + static_cast<std::size_t>(uniform01(rng) * 4.0);
      std::vector<double> q(support);
      double total = 0.0;
      for (double& v : q) {
        v = 0.01 + uniform01(rng);
        total += v;
      }
      for (double& v : q) v /= total;
      Matrix rows(support, k);
      for (double& v : rows.data) v = uniform01(rng);
      std::vector<int> labels(k);
      for (int& v : labels) v = uniform01(rng) < 0.5 ? 0 : 1;
      const SurrogateBound b =
          surrogate_bound_check(Distribution::from_probs(q), rows, labels);
      if (b.lhs < b.rhs - 1e-10) return "Jensen bound violated";
    }
    return "";
  });

  add("losses.reduction_lattice", []() -> std::string {
    std::mt19937_64 rng(220);
    for (int i = 0; i < 100; ++i) {
      SmallInstance inst = make_instance(mix64(22, i), 3, 5, 4, 3, 6);
      // Point-mass posterior on intent 0 with a zero embedding row makes
      // the aipo conditioning inert: the classifier reads only the first
      // context coordinate, which is kept strictly positive.
      inst.intents.classifier = Matrix(3, inst.intents.classifier.cols);
      inst.intents.classifier.at(0, 0) = 900.0;
      inst.intents.classifier.at(1, 0) = -900.0;
      inst.intents.classifier.at(2, 0) = -900.0;
      for (auto& r : inst.batch) r.context[0] = uniform_in(rng, 0.25, 1.0);
      for (std::size_t j = 0; j < inst.intents.embeddings.cols; ++j)
        inst.intents.embeddings.at(0, j) = 0.0;
      LossConfig dpo{0.1, 0.0, 0.0, LossVariant::kDpo};
      LossConfig aipo{0.1, 0.0, 0.0, LossVariant::kAipoLogit};
      const double a = dpo_loss(inst.batch, inst.policy, inst.ref, dpo).value;
      const double b =
          aipo_loss(inst.batch, inst.policy, inst.ref, inst.intents, aipo)
              .value;
      if (std::abs(a - b) > 1e-12) return "aipo point-mass != dpo";

      SmallInstance g1 = make_instance(mix64(23, i), 1, 5, 4, 3, 6);
      for (auto& r : g1.batch) r.intent = 0;
      g1.targets.assign(g1.batch.size(),
                        Distribution::from_probs({1.0}));
      g1.intents.classifier = Matrix(1, g1.intents.classifier.cols);
      g1.intents.embeddings = Matrix(1, 3);  // zero row: inert conditioning
      LossConfig gdpo{0.1, 0.0, 0.0, LossVariant::kGdpo};
      const double c = dpo_loss(g1.batch, g1.policy, g1.ref, dpo).value;
      const double d = gdpo_loss(g1.batch, g1.policy, g1.ref, g1.intents,
                                 g1.targets, gdpo)
                           .value;
      if (std::abs(c - d) > 1e-12) return "gdpo K=1 != dpo";
    }
    return "";
  });

  add("losses.grad_finite_diff", []() -> std::string {
    const LossVariant variants[] = {LossVariant::kDpo, LossVariant::kGdpo,
                                    LossVariant::kAipoSeparable,
                                    LossVariant::kAipoLogit};
    std::mt19937_64 rng(24);
    for (LossVariant v : variants) {
      for (int i = 0; i < 50; ++i) {
        SmallInstance inst = make_instance(mix64(25, i * 4 + static_cast<int>(v)),
                                           3, 4, 3, 3, 3);
        LossConfig cfg;
        cfg.variant = v;
        cfg.beta = uniform_in(rng, 0.05, 1.0);
        cfg.lambda = v == LossVariant::kDpo || v == LossVariant::kGdpo
                         ? 0.0
                         : uniform_in(rng, 0.05, 1.0);
        cfg.gamma = uniform_in(rng, 0.0, 0.5);
        const double err = finite_difference_error(cfg, inst);
        if (err > 1e-5)
          return std::string("FD mismatch for ") + to_string(v) + ": " +
                 format_double(err);
      }
    }
    return "";
  });

  add("losses.monotone_margin", []() -> std::string {
    for (int i = 0; i < 50; ++i) {
      SmallInstance inst = make_instance(mix64(26, i), 3, 8, 4, 8, 1,
                                         /*nonneg_dsim=*/true);
      LossConfig cfg;
      cfg.variant = LossVariant::kAipoLogit;
      cfg.beta = 0.1;
      cfg.gamma = 0.0;
      double prev = std::numeric_limits<double>::infinity();
      for (double lambda : {0.0, 0.1, 0.2, 0.5}) {
        cfg.lambda = lambda;
        const LossReport rep =
            aipo_loss(inst.batch, inst.policy, inst.ref, inst.intents, cfg);
        if (rep.value > prev + 1e-12)
          return "per-pair NLL rose with lambda on a positive-dsim pair";
        prev = rep.value;
      }
    }
    return "";
  });

  add("losses.permutation_invariance", []() -> std::string {
    SmallInstance inst = make_instance(27, 3, 5, 4, 3, 32);
    LossConfig cfg;
    cfg.variant = LossVariant::kAipoLogit;
    cfg.lambda = 0.3;
    cfg.gamma = 0.01;
    const double v0 =
        aipo_loss(inst.batch, inst.policy, inst.ref, inst.intents, cfg).value;
    std::mt19937_64 rng(28);
    for (int trial = 0; trial < 10; ++trial) {
      std::shuffle(inst.batch.begin(), inst.batch.end(), rng);
      const double v1 =
          aipo_loss(inst.batch, inst.policy, inst.ref, inst.intents, cfg)
              .value;
      if (std::abs(v0 - v1) > 1e-12) return "loss moved under batch permutation";
    }
    return "";
  });

  add("datagen.determinism", []() -> std::string {
    GenConfig cfg;
    cfg.num_records = 200;
    cfg.seed = 99;
    const auto a = gen_realpref(cfg);
    const auto b = gen_realpref(cfg);
    if (!(a == b)) return "same config, different records";
    std::string sa, sb;
    for (const auto& r : a) sa += record_to_json(r).dump() + "\n";
    for (const auto& r : b) sb += record_to_json(r).dump() + "\n";
    if (sa != sb) return "serialized bytes differ";
    return "";
  });

  add("datagen.conflict_construction", []() -> std::string {
    GenConfig cfg;
    cfg.num_records = 2000;
    cfg.noise_rate = 0.0;
    cfg.seed = 100;
    const auto recs = gen_realpref(cfg);
    bool found = false;
    for (const auto& a : recs) {
      if (a.group != Group::kMajority) continue;
      for (const auto& b : recs) {
        if (b.group != Group::kMinority || b.prompt != a.prompt) continue;
        found = true;
        if (a.y_w == b.y_w)
          return "identical prompts, groups share a preferred response";
      }
    }
    if (!found) return "no identical-prompt cross-group pairs generated";
    return "";
  });

  add("datagen.oracle_consistency", []() -> std::string {
    GenConfig cfg;
    cfg.num_records = 1000;
    cfg.noise_rate = 0.0;
    cfg.seed = 101;
    for (const auto& r : gen_realpref(cfg)) {
      if (r.y_w !=
          similarity_argmax(r.intent, cfg.response_count, cfg.embed_dim))
        return "y_w is not the similarity argmax on a noise-free record";
    }
    return "";
  });

  add("trainer.warmup_schedule", []() -> std::string {
    for (std::size_t s = 0; s < 150; ++s) {
      const double want = 0.7 * static_cast<double>(s + 1) / 150.0;
      if (std::abs(warmup_rate(0.7, s, 150) - want) > 1e-12)
        return "warmup rate formula violated";
    }
    if (warmup_rate(0.7, 150, 150) != 0.7) return "post-warmup rate wrong";
    return "";
  });

  add("trainer.grad_clipping", []() -> std::string {
    GenConfig g;
    g.num_records = 200;
    g.num_intents = 4;
    g.seed = 5;
    const auto recs = gen_realpref(g);
    const std::vector<PreferenceRecord> train(recs.begin(), recs.begin() + 150);
    const std::vector<PreferenceRecord> val(recs.begin() + 150, recs.end());
    const ReferencePolicy ref =
        fit_reference_sft(train, g.response_count, g.embed_dim, {200, 0.5, 5});
    IntentModel im;
    im.classifier = Matrix(g.num_intents, g.prompt_dim + g.embed_dim);
    im.embeddings = Matrix(g.num_intents, g.embed_dim);
    TrainConfig tc;
    tc.loss = LossConfig{0.1, 0.0, 0.0, LossVariant::kDpo};
    tc.steps = 60;
    tc.eval_every = 30;
    tc.batch_size = 16;
    tc.learning_rate_policy = 2.0;
    tc.grad_clip_norm = 0.05;  // low bar so clipping actually engages
    const auto res = run_training(
        train, val, PolicyModel::init(g.response_count, g.prompt_dim,
                                      g.embed_dim, 5),
        ref, im, tc);
    for (double n : res.log.post_clip_policy_norm)
      if (n > tc.grad_clip_norm + 1e-9) return "post-clip norm above bound";
    return "";
  });

  add("trainer.conditioning_gap", []() -> std::string {
    // Paired-fit direction on ordinary corpora.
    for (int i = 0; i < 8; ++i) {
      GenConfig g;
      g.num_records = 300;
      g.num_intents = 4;
      g.response_count = 8;
      g.prompt_dim = 12;
      g.embed_dim = 8;
      g.seed = static_cast<std::uint64_t>(200 + i);
      const auto recs = gen_realpref(g);
      const ConditioningGap gap =
          conditioning_gap(recs, g.response_count, g.num_intents);
      if (gap.nll_x_and_intent > gap.nll_x_only + 1e-6)
        return "conditioning raised the attainable NLL";
    }
    return "";
  });

  add("eval.metric_bounds", []() -> std::string {
    GenConfig g;
    g.num_records = 300;
    g.num_intents = 4;
    g.seed = 33;
    const auto recs = gen_attackpref(g);
    const PolicyModel pm =
        PolicyModel::init(g.response_count, g.prompt_dim, g.embed_dim, 3);
    IntentModel im;
    im.classifier = Matrix(g.num_intents, g.prompt_dim + g.embed_dim);
    im.embeddings = Matrix(g.num_intents, g.embed_dim);
    for (std::size_t k = 0; k < im.embeddings.rows; ++k) {
      const auto proto = intent_prototype(static_cast<int>(k), g.embed_dim);
      std::copy(proto.begin(), proto.end(), im.embeddings.row(k));
    }
    const ConditionedPolicy cp{&pm, &im};
    std::vector<int> baseline(recs.size(), 0);
    const MetricReport rep = slice_report(cp, &im, recs, baseline);
    auto in01 = [](const std::optional<double>& v) {
      return !v || (*v >= 0.0 && *v <= 1.0);
    };
    for (const auto& [name, s] : rep.slices) {
      if (!in01(s.win_rate) || !in01(s.ics) || !in01(s.ric) || !in01(s.dsr))
        return "metric outside [0,1] in slice " + name;
    }
    std::size_t part = rep.slices.at("majority").n + rep.slices.at("minority").n;
    if (part != rep.overall.n) return "group slices do not partition";
    return "";
  });

  add("eval.oracle_consistency", []() -> std::string {
    GenConfig g;
    g.num_records = 1000;
    g.num_intents = 8;
    g.noise_rate = 0.0;
    g.seed = 44;
    const auto recs = gen_realpref(g);
    // A policy that always answers with the generator's preferred response:
    // condition on the true-intent prototype and score by similarity.
    IntentModel im;
    im.classifier = Matrix(g.num_intents, g.prompt_dim + g.embed_dim);
    im.embeddings = Matrix(g.num_intents, g.embed_dim);
    for (std::size_t k = 0; k < im.embeddings.rows; ++k) {
      const auto proto = intent_prototype(static_cast<int>(k), g.embed_dim);
      std::copy(proto.begin(), proto.end(), im.embeddings.row(k));
      // classifier reads the cue block appended after the prompt features
      for (std::size_t j = 0; j < g.embed_dim; ++j)
        im.classifier.at(k, g.prompt_dim + j) = 50.0 * proto[j];
    }
    PolicyModel oracle;
    oracle.response_count = g.response_count;
    oracle.feature_dim = g.prompt_dim;
    oracle.embed_dim = g.embed_dim;
    oracle.weights = Matrix(g.response_count, g.prompt_dim + g.embed_dim);
    for (std::size_t y = 0; y < g.response_count; ++y) {
      const auto emb = response_embedding(static_cast<int>(y), g.embed_dim);
      for (std::size_t j = 0; j < g.embed_dim; ++j)
        oracle.weights.at(y, g.prompt_dim + j) = emb[j];
    }
    const ConditionedPolicy cp{&oracle, &im};
    if (ric(cp, recs) != 1.0) return "oracle policy RIC != 1.0";
    std::mt19937_64 rng(45);
    std::vector<int> random_baseline(recs.size());
    for (int& b : random_baseline)
      b = static_cast<int>(uniform01(rng) * static_cast<double>(g.response_count));
    if (win_rate(cp, random_baseline, recs) <= 0.9)
      return "oracle policy win rate vs random baseline <= 0.9";
    return "";
  });

  return results;
}

}  // namespace aipo::verify

#endif  // AIPO_VERIFY_HPP
