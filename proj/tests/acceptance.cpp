// Acceptance suite: one pass/fail line per criterion, each pinned to its
// stated tolerance and runtime budget. Returns nonzero if any criterion
// fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
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
#include "aipo/verify.hpp"

using namespace aipo;
using aipo::verify::SmallInstance;
using aipo::verify::finite_difference_error;
using aipo::verify::make_instance;

namespace {

int g_failures = 0;

void criterion(const std::string& name, double budget_seconds,
               const std::function<std::string()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  std::string detail;
  try {
    detail = body();
  } catch (const std::exception& e) {
    detail = std::string("exception: ") + e.what();
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  if (detail.empty() && budget_seconds > 0.0 && secs > budget_seconds)
    detail = "runtime " + std::to_string(secs) + "s exceeds budget " +
             std::to_string(budget_seconds) + "s";
  if (detail.empty()) {
    std::printf("PASS %s (%.2fs)\n", name.c_str(), secs);
  } else {
    std::printf("FAIL %s (%.2fs): %s\n", name.c_str(), secs, detail.c_str());
    ++g_failures;
  }
  std::fflush(stdout);
}

struct EndToEnd {
  double ric_all = 0.0;
  double ric_minority = 0.0;
  double dsr_value = 0.0;
  TrainLog log;
};

EndToEnd train_and_eval(bool use_aipo, bool attack, std::uint64_t seed,
                        bool lambda_zero = false) {
  GenConfig g;
  g.num_records = 5000;
  g.minority_fraction = 0.2;
  g.noise_rate = 0.05;
  g.seed = seed;
  const auto recs = attack ? gen_attackpref(g) : gen_realpref(g);
  const std::size_t n_train = recs.size() * 8 / 10;
  const std::size_t n_eval = recs.size() / 10;
  const std::vector<PreferenceRecord> train(
      recs.begin(), recs.begin() + static_cast<long>(n_train));
  const std::vector<PreferenceRecord> val(
      recs.begin() + static_cast<long>(n_train),
      recs.begin() + static_cast<long>(n_train + n_eval));
  const std::vector<PreferenceRecord> test(
      recs.begin() + static_cast<long>(n_train + n_eval), recs.end());

  LossConfig loss;
  loss.variant = use_aipo ? LossVariant::kAipoLogit : LossVariant::kDpo;
  loss.beta = 0.1;
  loss.lambda = use_aipo && !lambda_zero ? 0.5 : 0.0;
  loss.gamma = use_aipo ? 0.01 : 0.0;

  const ReferencePolicy ref = fit_reference_sft(
      train, g.response_count, g.embed_dim, {400, 0.5, seed});
  std::vector<std::pair<ContextVector, int>> idata;
  idata.reserve(train.size());
  for (const auto& r : train) idata.emplace_back(r.context, r.intent);
  IntentModel im =
      train_intent_classifier(idata,
                              {g.num_intents, g.embed_dim, 300, 2.0, seed})
          .model;
  im = prepare_intent_model(std::move(im), loss);

  TrainConfig tc;
  tc.loss = loss;
  tc.steps = 2000;
  tc.eval_every = 200;
  tc.batch_size = 64;
  tc.learning_rate_policy = 20.0;
  tc.seed = seed;
  const TrainResult res = run_training(
      train, val,
      PolicyModel::init(g.response_count, g.prompt_dim, g.embed_dim, seed),
      ref, im, tc);

  const ConditionedPolicy cp{&res.policy, &res.intents};
  std::vector<PreferenceRecord> minors;
  for (const auto& r : test)
    if (r.group == Group::kMinority) minors.push_back(r);

  EndToEnd out;
  out.ric_all = ric(cp, test);
  out.ric_minority = ric(cp, minors);
  if (attack) out.dsr_value = dsr(cp, test);
  out.log = res.log;
  return out;
}

}  // namespace

int main() {
  // 1. Margin shift: positive similarity shifts strictly raise the preference.
  criterion("criterion-01-margin-shift", 1.0, []() -> std::string {
    std::mt19937_64 rng(101);
    for (int i = 0; i < 10000; ++i) {
      const double base = uniform_in(rng, -8.0, 8.0);
      const double lambda = uniform_in(rng, 0.05, 2.0);
      const double dsim = uniform_in(rng, 0.05, 2.0);
      if (!(sigmoid(shifted_logit(base, lambda, dsim)) > sigmoid(base)))
        return "strict margin shift violated";
    }
    return "";
  });

  // 2. NLL monotonicity of the logit-shift loss across the lambda grid.
  criterion("criterion-02-nll-monotone-lambda", 10.0, []() -> std::string {
    const double grid[] = {0.0, 0.1, 0.2, 0.5};
    std::vector<double> mean_at(4, 0.0);
    for (int b = 0; b < 1000; ++b) {
      SmallInstance inst =
          make_instance(mix64(102, b), 3, 8, 4, 8, 4, /*nonneg_dsim=*/true);
      double prev = std::numeric_limits<double>::infinity();
      for (int gi = 0; gi < 4; ++gi) {
        const LossConfig c{0.1, grid[gi], 0.0, LossVariant::kAipoLogit};
        const double v =
            aipo_loss(inst.batch, inst.policy, inst.ref, inst.intents, c)
                .value;
        mean_at[static_cast<std::size_t>(gi)] += v / 1000.0;
        if (v > prev + 1e-10) return "per-batch loss rose along the grid";
        prev = v;
      }
    }
    for (int gi = 1; gi < 4; ++gi)
      if (mean_at[static_cast<std::size_t>(gi)] >
          mean_at[static_cast<std::size_t>(gi - 1)] + 1e-10)
        return "mean loss rose along the grid";
    return "";
  });

  // 3. Tilted-policy round trip and baseline cancellation.
  criterion("criterion-03-tilt-roundtrip", 30.0, []() -> std::string {
    std::mt19937_64 rng(103);
    for (int i = 0; i < 1000; ++i) {
      const std::size_t n = 2 + static_cast<std::size_t>(uniform01(rng) * 15.0);
      std::vector<double> raw(n), reward(n), sim(n);
      double total = 0.0;
      for (auto& v : raw) {
        v = 0.05 + uniform01(rng);
        total += v;
      }
      for (auto& v : raw) v /= total;
      for (std::size_t j = 0; j < n; ++j) {
        reward[j] = uniform_in(rng, -2.0, 2.0);
        sim[j] = uniform_in(rng, -1.0, 1.0);
      }
      const double beta = uniform_in(rng, 0.5, 2.0);
      const double lambda = uniform_in(rng, 0.0, 1.0);
      const double c = uniform_in(rng, -4.0, 4.0);
      const Distribution ref = Distribution::from_probs(raw);
      const TiltResult t = tilt_reference(ref, reward, sim, beta, lambda);
      const auto back =
          reconstruct_reward(t.tilted, ref, sim, beta, lambda, t.log_partition);
      for (std::size_t j = 0; j < n; ++j)
        if (std::abs(back[j] - reward[j]) > 1e-9)
          return "round-trip reward error above 1e-9";

      std::vector<double> shifted = reward;
      for (auto& v : shifted) v += c;
      const TiltResult ts = tilt_reference(ref, shifted, sim, beta, lambda);
      const auto back_s = reconstruct_reward(ts.tilted, ref, sim, beta, lambda,
                                             ts.log_partition);
      for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = 0; b < n; ++b) {
          if (a == b) continue;
          if (std::abs(sigmoid(back_s[a] - back_s[b]) -
                       sigmoid(back[a] - back[b])) > 1e-12)
            return "constant baseline leaked into pairwise probabilities";
        }
    }
    return "";
  });

  // 4. Heterogeneity gap at the two-context fixture.
  criterion("criterion-04-heterogeneity-gap", 1.0, []() -> std::string {
    const double gap =
        heterogeneity_gap({2.0, -2.0}, Distribution::from_probs({0.5, 0.5}));
    if (std::abs(gap - 0.433781) > 1e-5) return "gap off the frozen value";
    const double oracle = 0.5 * bt_nll(2.0) + 0.5 * bt_nll(-2.0) - bt_nll(0.0);
    if (std::abs(gap - oracle) > 1e-14) return "gap disagrees with the oracle";
    return "";
  });

  // 5. Gradient audit across every variant, embedding table included.
  criterion("criterion-05-gradient-audit", 120.0, []() -> std::string {
    const LossVariant variants[] = {LossVariant::kDpo, LossVariant::kGdpo,
                                    LossVariant::kAipoSeparable,
                                    LossVariant::kAipoLogit};
    std::mt19937_64 rng(105);
    for (LossVariant v : variants) {
      for (int i = 0; i < 50; ++i) {
        SmallInstance inst = make_instance(
            mix64(106, i * 11 + static_cast<int>(v)), 3, 4, 3, 3, 3);
        LossConfig c;
        c.variant = v;
        c.beta = uniform_in(rng, 0.05, 1.0);
        c.lambda = (v == LossVariant::kAipoSeparable ||
                    v == LossVariant::kAipoLogit)
                       ? uniform_in(rng, 0.05, 1.0)
                       : 0.0;
        c.gamma = uniform_in(rng, 0.0, 0.5);
        const double err = finite_difference_error(c, inst);
        if (err > 1e-5)
          return std::string(to_string(v)) + " FD error " + format_double(err);
      }
    }
    return "";
  });

  // 6. Reduction lattice on 100 random batches.
  criterion("criterion-06-reduction-lattice", 10.0, []() -> std::string {
    std::mt19937_64 rng(107);
    for (int i = 0; i < 100; ++i) {
      SmallInstance inst = make_instance(mix64(108, i), 3, 5, 4, 3, 6);
      inst.intents.classifier = Matrix(3, inst.intents.classifier.cols);
      inst.intents.classifier.at(0, 0) = 900.0;
      inst.intents.classifier.at(1, 0) = -900.0;
      inst.intents.classifier.at(2, 0) = -900.0;
      for (auto& r : inst.batch) r.context[0] = uniform_in(rng, 0.25, 1.0);
      for (std::size_t j = 0; j < inst.intents.embeddings.cols; ++j)
        inst.intents.embeddings.at(0, j) = 0.0;
      const LossConfig dpo{0.1, 0.0, 0.0, LossVariant::kDpo};
      const LossConfig aipo{0.1, 0.0, 0.0, LossVariant::kAipoLogit};
      const double a = dpo_loss(inst.batch, inst.policy, inst.ref, dpo).value;
      const double b =
          aipo_loss(inst.batch, inst.policy, inst.ref, inst.intents, aipo)
              .value;
      if (std::abs(a - b) > 1e-12) return "aipo point-mass != dpo";

      SmallInstance g1 = make_instance(mix64(109, i), 1, 5, 4, 3, 6);
      for (auto& r : g1.batch) r.intent = 0;
      g1.targets.assign(g1.batch.size(), Distribution::from_probs({1.0}));
      g1.intents.classifier = Matrix(1, g1.intents.classifier.cols);
      g1.intents.embeddings = Matrix(1, 3);
      const LossConfig gdpo{0.1, 0.0, 0.0, LossVariant::kGdpo};
      const double c = dpo_loss(g1.batch, g1.policy, g1.ref, dpo).value;
      const double d = gdpo_loss(g1.batch, g1.policy, g1.ref, g1.intents,
                                 g1.targets, gdpo)
                           .value;
      if (std::abs(c - d) > 1e-12) return "gdpo |B|=1 != dpo";
    }
    return "";
  });

  // 7. VI surrogate bound over 10,000 instances plus the equality cases.
  criterion("criterion-07-vi-surrogate", 30.0, []() -> std::string {
    std::mt19937_64 rng(110);
    for (int i = 0; i < 10000; ++i) {
      const std::size_t s = 2 + static_cast<std::size_t>(uniform01(rng) * 4.0);
      const std::size_t k = 1 + static_cast<std::size_t>(uniform01(rng) * 4.0);
      std::vector<double> q(s);
      double total = 0.0;
      for (auto& v : q) {
        v = 0.01 + uniform01(rng);
        total += v;
      }
      for (auto& v : q) v /= total;
      Matrix rows(s, k);
      for (auto& v : rows.data) v = uniform01(rng);
      std::vector<int> labels(k);
      for (auto& v : labels) v = uniform01(rng) < 0.5 ? 0 : 1;
      const SurrogateBound b =
          surrogate_bound_check(Distribution::from_probs(q), rows, labels);
      if (b.lhs < b.rhs - 1e-10) return "Jensen bound violated";

      Matrix flat(s, k);  // constant rows: exact equality
      for (std::size_t r = 0; r < s; ++r)
        for (std::size_t cc = 0; cc < k; ++cc) flat.at(r, cc) = rows.at(0, cc);
      const SurrogateBound be =
          surrogate_bound_check(Distribution::from_probs(q), flat, labels);
      if (std::abs(be.lhs - be.rhs) > 1e-10)
        return "constant rows are not tight";

      std::vector<double> pm(s, 0.0);  // point mass: exact equality
      pm[static_cast<std::size_t>(i) % s] = 1.0;
      const SurrogateBound bp =
          surrogate_bound_check(Distribution::from_probs(pm), rows, labels);
      if (std::abs(bp.lhs - bp.rhs) > 1e-10) return "point mass is not tight";
    }
    return "";
  });

  // 8. Conditioning improvement: paired fits plus conflicted subsets.
  criterion("criterion-08-conditioning", 120.0, []() -> std::string {
    for (int i = 0; i < 50; ++i) {
      GenConfig g;
      g.num_records = 400;
      g.num_intents = 4;
      g.response_count = 8;
      g.prompt_dim = 12;
      g.embed_dim = 8;
      g.noise_rate = 0.05;
      g.seed = static_cast<std::uint64_t>(800 + i);
      const auto recs = gen_realpref(g);
      const ConditioningGap gap =
          conditioning_gap(recs, g.response_count, g.num_intents);
      if (gap.nll_x_and_intent > gap.nll_x_only + 1e-6)
        return "conditioning raised the NLL on dataset " + std::to_string(i);
    }
    // Conflicted identical-prompt subsets at a near-balanced group mix.
    for (std::uint64_t seed : {900, 901, 902}) {
      GenConfig g;
      g.num_records = 30000;
      g.num_intents = 2;
      g.response_count = 8;
      g.prompt_dim = 12;
      g.embed_dim = 8;
      g.minority_fraction = 0.499;
      g.noise_rate = 0.0;
      g.seed = seed;
      const auto recs = gen_realpref(g);
      const GenPlan plan = make_plan(g);
      const auto [maj, min] = plan.archetype_intents[0];
      const int y_maj = plan.preferred_response[static_cast<std::size_t>(maj)];
      const int y_min = plan.preferred_response[static_cast<std::size_t>(min)];
      std::vector<PreferenceRecord> conflicted;
      for (const auto& r : recs)
        if ((r.y_w == y_maj && r.y_l == y_min) ||
            (r.y_w == y_min && r.y_l == y_maj))
          conflicted.push_back(r);
      const ConditioningGap gap =
          conditioning_gap(conflicted, g.response_count, g.num_intents);
      if (gap.nll_x_only < std::log(2.0) - 1e-3)
        return "x-only fit broke the symmetry bound";
      if (gap.nll_x_and_intent >= 0.1)
        return "intent-conditioned fit failed to separate the conflict";
    }
    return "";
  });

  // 9. Directional end-to-end gains on the clean corpus.
  criterion("criterion-09-realpref-gains", 600.0, []() -> std::string {
    double minority_gap = 0.0, overall_gap = 0.0;
    for (std::uint64_t seed : {1, 2, 3, 4, 5}) {
      const EndToEnd dpo = train_and_eval(false, false, seed);
      const EndToEnd aipo = train_and_eval(true, false, seed);
      minority_gap += (aipo.ric_minority - dpo.ric_minority) / 5.0;
      overall_gap += (aipo.ric_all - dpo.ric_all) / 5.0;
    }
    if (minority_gap < 0.10)
      return "minority RIC gap " + format_double(minority_gap) + " < 0.10";
    if (overall_gap < 0.03)
      return "overall RIC gap " + format_double(overall_gap) + " < 0.03";
    return "";
  });

  // 10. Directional robustness gains on the adversarial corpus.
  criterion("criterion-10-attackpref-gains", 600.0, []() -> std::string {
    double dsr_gap = 0.0;
    for (std::uint64_t seed : {1, 2, 3, 4, 5}) {
      const EndToEnd dpo = train_and_eval(false, true, seed);
      const EndToEnd aipo = train_and_eval(true, true, seed);
      dsr_gap += (aipo.dsr_value - dpo.dsr_value) / 5.0;
    }
    if (dsr_gap < 0.05) return "DSR gap " + format_double(dsr_gap) + " < 0.05";
    return "";
  });

  // 11. Margin trajectory dominance plus the property-suite time budget.
  criterion("criterion-11-margin-trajectory", 600.0, []() -> std::string {
    const EndToEnd with_sim = train_and_eval(true, false, 1);
    const EndToEnd without =
        train_and_eval(true, false, 1, /*lambda_zero=*/true);
    const auto t_sim = margin_trajectory(with_sim.log);
    const auto t_plain = margin_trajectory(without.log);
    if (t_sim.size() != t_plain.size()) return "checkpoint counts differ";
    for (std::size_t i = 0; i < t_sim.size(); ++i) {
      if (t_sim[i].first <= 150) continue;  // warmup
      if (t_sim[i].second < t_plain[i].second)
        return "with-sim margin dipped below the lambda=0 margin at step " +
               std::to_string(t_sim[i].first);
    }
    const auto t0 = std::chrono::steady_clock::now();
    const auto props = aipo::verify::run_property_suite();
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    for (const auto& p : props)
      if (!p.pass) return "property suite failed: " + p.name;
    if (secs > 300.0) return "property suite exceeded five minutes";
    return "";
  });

  if (g_failures == 0) {
    std::printf("all 11 criteria hold\n");
    return 0;
  }
  std::printf("%d criterion(s) failed\n", g_failures);
  return 1;
}
