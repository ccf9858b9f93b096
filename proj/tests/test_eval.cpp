#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <random>

#include "aipo/eval.hpp"
#include "aipo/trainer.hpp"

using namespace aipo;

namespace {

// Policy whose argmax is the similarity argmax of whatever intent embedding
// conditions it (zero prompt weights, response-embedding block).
PolicyModel similarity_policy(std::size_t responses, std::size_t d,
                              std::size_t e) {
  PolicyModel m;
  m.response_count = responses;
  m.feature_dim = d;
  m.embed_dim = e;
  m.weights = Matrix(responses, d + e);
  for (std::size_t y = 0; y < responses; ++y) {
    const auto emb = response_embedding(static_cast<int>(y), e);
    for (std::size_t j = 0; j < e; ++j) m.weights.at(y, d + j) = emb[j];
  }
  return m;
}

// Intent model that reads the cue block and answers with the prototype row.
IntentModel cue_reader(std::size_t k, std::size_t d, std::size_t e) {
  IntentModel m;
  m.classifier = Matrix(k, d + e);
  m.embeddings = Matrix(k, e);
  for (std::size_t c = 0; c < k; ++c) {
    const auto proto = intent_prototype(static_cast<int>(c), e);
    std::copy(proto.begin(), proto.end(), m.embeddings.row(c));
    for (std::size_t j = 0; j < e; ++j)
      m.classifier.at(c, d + j) = 50.0 * proto[j];
  }
  return m;
}

}  // namespace

TEST_CASE("win_rate: ties count against the policy", "[eval]") {
  GenConfig g;
  g.num_records = 200;
  g.noise_rate = 0.0;
  g.seed = 1;
  const auto recs = gen_realpref(g);
  const PolicyModel pm = similarity_policy(g.response_count, g.prompt_dim,
                                           g.embed_dim);
  const IntentModel im = cue_reader(g.num_intents, g.prompt_dim, g.embed_dim);
  const ConditionedPolicy cp{&pm, &im};
  // Baseline equals the policy's own output on every probe: all ties.
  std::vector<int> baseline(recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i)
    baseline[i] = cp.argmax_response(recs[i]);
  CHECK(win_rate(cp, baseline, recs) == 0.0);
  CHECK_THROWS_AS(win_rate(cp, {}, std::span<const PreferenceRecord>{}),
                  InvalidArgumentError);
}

TEST_CASE("win_rate: oracle policy beats a random baseline", "[eval]") {
  GenConfig g;
  g.num_records = 1000;
  g.num_intents = 8;
  g.noise_rate = 0.0;
  g.seed = 2;
  const auto recs = gen_realpref(g);
  const PolicyModel pm = similarity_policy(g.response_count, g.prompt_dim,
                                           g.embed_dim);
  const IntentModel im = cue_reader(g.num_intents, g.prompt_dim, g.embed_dim);
  const ConditionedPolicy cp{&pm, &im};
  std::mt19937_64 rng(3);
  std::vector<int> baseline(recs.size());
  for (int& b : baseline)
    b = static_cast<int>(uniform01(rng) *
                         static_cast<double>(g.response_count));
  const double wr = win_rate(cp, baseline, recs);
  CHECK(wr > 0.9);
  CHECK(wr <= 1.0);
}

TEST_CASE("ics: uniform untrained model follows the tie rule", "[eval]") {
  // Zero classifier: every posterior is uniform, argmax resolves to id 0,
  // so accuracy equals the share of true intent 0.
  const std::size_t k = 4, d = 6, e = 4;
  IntentModel m;
  m.classifier = Matrix(k, d + e);
  m.embeddings = Matrix(k, e);
  std::mt19937_64 rng(4);
  std::vector<PreferenceRecord> probes(2000);
  for (auto& r : probes) {
    r.prompt.assign(d, 0.0);
    r.context.assign(d + e, 0.0);
    for (double& v : r.context) v = uniform_in(rng, -1.0, 1.0);
    r.intent = std::min(static_cast<int>(uniform01(rng) * 4.0), 3);
    r.y_w = 0;
    r.y_l = 1;
  }
  const double acc = ics(m, probes);
  CHECK_THAT(acc, Catch::Matchers::WithinAbs(0.25, 0.03));
}

TEST_CASE("ics: cue-reading model is exact on generated data", "[eval]") {
  GenConfig g;
  g.num_records = 500;
  g.seed = 5;
  const auto recs = gen_realpref(g);
  const IntentModel im = cue_reader(g.num_intents, g.prompt_dim, g.embed_dim);
  CHECK(ics(im, recs) == 1.0);
}

TEST_CASE("ric: random policy near chance, oracle policy exact", "[eval]") {
  GenConfig g;
  g.num_records = 2000;
  g.num_intents = 8;
  g.noise_rate = 0.0;
  g.seed = 6;
  const auto recs = gen_realpref(g);
  const IntentModel im = cue_reader(g.num_intents, g.prompt_dim, g.embed_dim);

  const PolicyModel random_pm =
      PolicyModel::init(g.response_count, g.prompt_dim, g.embed_dim, 99);
  const ConditionedPolicy random_cp{&random_pm, &im};
  const double chance = ric(random_cp, recs);
  CHECK(chance < 0.35);  // 1/response_count in expectation, loose band

  const PolicyModel oracle_pm = similarity_policy(g.response_count,
                                                  g.prompt_dim, g.embed_dim);
  const ConditionedPolicy oracle_cp{&oracle_pm, &im};
  CHECK(ric(oracle_cp, recs) == 1.0);
}

TEST_CASE("rs: exact reference match gives 1, orthogonal pair gives 0",
          "[eval]") {
  GenConfig g;
  g.num_records = 300;
  g.noise_rate = 0.0;
  g.seed = 7;
  const auto recs = gen_realpref(g);
  const PolicyModel pm = similarity_policy(g.response_count, g.prompt_dim,
                                           g.embed_dim);
  const IntentModel im = cue_reader(g.num_intents, g.prompt_dim, g.embed_dim);
  const ConditionedPolicy cp{&pm, &im};
  std::vector<int> own(recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i)
    own[i] = cp.argmax_response(recs[i]);
  CHECK_THAT(rs(cp, own, recs), Catch::Matchers::WithinAbs(1.0, 1e-12));

  // Find an orthogonal response pair under the signed-hash embedding.
  int a = -1, b = -1;
  for (int i = 0; i < 64 && a < 0; ++i)
    for (int j = i + 1; j < 64 && a < 0; ++j)
      if (cosine(response_embedding(i, g.embed_dim),
                 response_embedding(j, g.embed_dim)) == 0.0) {
        a = i;
        b = j;
      }
  REQUIRE(a >= 0);
  // A policy pinned on response a, reference answers all b.
  PolicyModel pinned;
  pinned.response_count = static_cast<std::size_t>(std::max(a, b)) + 1;
  pinned.feature_dim = g.prompt_dim;
  pinned.embed_dim = g.embed_dim;
  pinned.weights = Matrix(pinned.response_count, g.prompt_dim + g.embed_dim);
  pinned.weights.at(static_cast<std::size_t>(a), 0) = 1.0;
  std::vector<PreferenceRecord> probes(recs.begin(), recs.begin() + 50);
  for (auto& r : probes) r.prompt[0] = 1.0;
  const ConditionedPolicy pinned_cp{&pinned, nullptr};
  const std::vector<int> refs(probes.size(), b);
  CHECK_THAT(rs(pinned_cp, refs, probes),
             Catch::Matchers::WithinAbs(0.0, 1e-12));
}

TEST_CASE("dsr: marker required; adversarially fitted policy fails defense",
          "[eval]") {
  GenConfig g;
  g.num_records = 600;
  g.num_intents = 8;
  g.noise_rate = 0.0;
  g.seed = 8;
  auto recs = gen_attackpref(g);

  const PolicyModel pm = similarity_policy(g.response_count, g.prompt_dim,
                                           g.embed_dim);
  const IntentModel im = cue_reader(g.num_intents, g.prompt_dim, g.embed_dim);
  const ConditionedPolicy cp{&pm, &im};
  CHECK(dsr(cp, recs) == 1.0);  // answers the main task by construction

  std::vector<PreferenceRecord> clean = recs;
  clean[0].attack.reset();
  CHECK_THROWS_AS(dsr(cp, clean), InvalidArgumentError);

  // Fit a policy on swapped pairs (the attack succeeding everywhere).
  std::vector<PreferenceRecord> swapped = recs;
  for (auto& r : swapped) std::swap(r.y_w, r.y_l);
  const ReferencePolicy ref = fit_reference_sft(
      swapped, g.response_count, g.embed_dim, {300, 0.5, 9});
  TrainConfig tc;
  tc.loss = LossConfig{0.1, 0.0, 0.0, LossVariant::kDpo};
  tc.steps = 400;
  tc.eval_every = 200;
  tc.batch_size = 32;
  tc.learning_rate_policy = 40.0;
  tc.warmup_steps = 50;
  tc.seed = 9;
  IntentModel dummy;
  dummy.classifier = Matrix(g.num_intents, g.prompt_dim + g.embed_dim);
  dummy.embeddings = Matrix(g.num_intents, g.embed_dim);
  const auto res = run_training(
      swapped, swapped,
      PolicyModel::init(g.response_count, g.prompt_dim, g.embed_dim, 9), ref,
      dummy, tc);
  const ConditionedPolicy hostile{&res.policy, nullptr};
  CHECK(dsr(hostile, recs) < 0.2);
}

TEST_CASE("slice_report: partitions, per-slice oracle values, recomputation",
          "[eval]") {
  GenConfig g;
  g.num_records = 800;
  g.num_intents = 8;
  g.noise_rate = 0.0;
  g.seed = 10;
  const auto recs = gen_attackpref(g);
  const PolicyModel pm = similarity_policy(g.response_count, g.prompt_dim,
                                           g.embed_dim);
  const IntentModel im = cue_reader(g.num_intents, g.prompt_dim, g.embed_dim);
  const ConditionedPolicy cp{&pm, &im};
  std::mt19937_64 rng(11);
  std::vector<int> baseline(recs.size());
  for (int& b : baseline)
    b = static_cast<int>(uniform01(rng) *
                         static_cast<double>(g.response_count));

  const MetricReport rep = slice_report(cp, &im, recs, baseline);
  CHECK(rep.overall.n == recs.size());
  CHECK(rep.slices.at("majority").n + rep.slices.at("minority").n ==
        rep.overall.n);
  CHECK(rep.slices.at("attack").n == recs.size());
  CHECK(*rep.slices.at("minority").ric == 1.0);  // oracle policy

  // Double-entry: recompute the minority win rate with an independent pass.
  std::vector<PreferenceRecord> minors;
  std::vector<int> minor_base;
  for (std::size_t i = 0; i < recs.size(); ++i)
    if (recs[i].group == Group::kMinority) {
      minors.push_back(recs[i]);
      minor_base.push_back(baseline[i]);
    }
  CHECK_THAT(*rep.slices.at("minority").win_rate,
             Catch::Matchers::WithinAbs(win_rate(cp, minor_base, minors),
                                        1e-15));

  // Domain slice sizes partition the total as well.
  std::size_t domain_total = 0;
  for (const auto& [name, s] : rep.slices)
    if (name.rfind("domain:", 0) == 0) domain_total += s.n;
  CHECK(domain_total == rep.overall.n);

  // Serialization shape.
  const nlohmann::json j = report_to_json(rep);
  CHECK(j.contains("overall"));
  CHECK(j["overall"]["n"] == recs.size());
}
