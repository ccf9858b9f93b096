#ifndef AIPO_DATAGEN_HPP
#define AIPO_DATAGEN_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "aipo/common.hpp"
#include "aipo/embedding.hpp"
#include "aipo/types.hpp"

// Deterministic synthetic corpora with known ground truth. Responses are
// abstract indices with signed-hash embeddings; intents have prototype
// vectors; preferences follow the argmax-similarity rule, so every judge
// in the eval module is an exactly recomputable oracle.
//
// The clean corpus pairs a majority and a minority intent per prompt
// archetype with conflicting preferred responses on identical prompt
// features. The adversarial corpus injects a distractor-intent block into
// a marked span of the prompt features.

namespace aipo {

struct GenConfig {
  std::size_t num_records = 1000;
  std::size_t num_intents = 12;  // even; two per prompt archetype
  std::array<double, 6> domain_mix = {1, 1, 1, 1, 1, 1};
  double minority_fraction = 0.2;  // strictly below 0.5
  std::size_t response_count = 16;
  std::size_t prompt_dim = 32;  // includes the embed_dim-wide injected span
  std::size_t embed_dim = 16;
  double noise_rate = 0.05;        // pair-swap label noise
  double attack_strength = 2.0;    // injected-block scale (adversarial gen)
  double feature_noise = 0.5;      // task-block jitter (adversarial gen)
  double opinion_skew_strength = 0.0;  // per-domain opinion-skew option
  std::uint64_t seed = 0;

  std::size_t task_dim() const { return prompt_dim - embed_dim; }
};

inline void validate(const GenConfig& c) {
  if (c.num_records == 0)
    throw InvalidArgumentError("num_records must be positive");
  if (c.num_intents < 2 || c.num_intents % 2 != 0)
    throw InvalidArgumentError("num_intents must be even and >= 2");
  if (!(c.minority_fraction > 0.0 && c.minority_fraction < 0.5))
    throw InvalidArgumentError("minority_fraction must lie in (0, 0.5)");
  if (c.response_count < 2)
    throw InvalidArgumentError("response_count must be >= 2");
  if (c.prompt_dim <= c.embed_dim)
    throw InvalidArgumentError("prompt_dim must exceed embed_dim");
  if (c.embed_dim == 0) throw InvalidArgumentError("embed_dim must be positive");
  if (!(c.noise_rate >= 0.0 && c.noise_rate < 0.5))
    throw InvalidArgumentError("noise_rate must lie in [0, 0.5)");
  if (c.attack_strength < 0.0 || c.feature_noise < 0.0 ||
      c.opinion_skew_strength < 0.0)
    throw InvalidArgumentError("strength knobs must be nonnegative");
  double mix = 0.0;
  for (double w : c.domain_mix) {
    if (w < 0.0) throw InvalidArgumentError("domain_mix must be nonnegative");
    mix += w;
  }
  if (mix <= 0.0) throw InvalidArgumentError("domain_mix must have mass");
}

// Deterministic per-domain opinion-skew vector over responses, in [0, 1).
inline std::vector<double> opinion_skew(const std::string& domain,
                                        std::size_t response_count) {
  std::uint64_t dh = fnv1a64(domain.data(), domain.size());
  std::vector<double> v(response_count);
  for (std::size_t y = 0; y < response_count; ++y)
    v[y] = hash_unit(mix64(kSkewSalt, mix64(dh, y)));
  return v;
}

// Layout derived deterministically from the config: intent pairs per
// archetype (conflicting preferred responses guaranteed), archetype
// domains, and the per-intent preferred response.
struct GenPlan {
  std::vector<std::pair<int, int>> archetype_intents;  // (majority, minority)
  std::vector<std::string> archetype_domain;
  std::vector<int> preferred_response;  // per intent, under the active rule
  std::vector<IntentLabel> taxonomy;
};

// Pure cosine argmax; the eval oracles use exactly this rule.
inline int similarity_argmax(int intent, std::size_t response_count,
                             std::size_t embed_dim) {
  const std::vector<double> proto = intent_prototype(intent, embed_dim);
  int best = 0;
  double best_score = -2.0;
  for (std::size_t y = 0; y < response_count; ++y) {
    const double s =
        cosine(response_embedding(static_cast<int>(y), embed_dim), proto);
    if (s > best_score) {
      best_score = s;
      best = static_cast<int>(y);
    }
  }
  return best;
}

namespace detail {
inline int preferred_under_rule(int intent, const std::string& domain,
                                const GenConfig& c) {
  const std::vector<double> proto = intent_prototype(intent, c.embed_dim);
  const std::vector<double> skew =
      c.opinion_skew_strength > 0.0
          ? opinion_skew(domain, c.response_count)
          : std::vector<double>(c.response_count, 0.0);
  int best = 0;
  double best_score = -1e300;
  for (std::size_t y = 0; y < c.response_count; ++y) {
    const double s =
        cosine(response_embedding(static_cast<int>(y), c.embed_dim), proto) +
        c.opinion_skew_strength * skew[y];
    if (s > best_score) {
      best_score = s;
      best = static_cast<int>(y);
    }
  }
  return best;
}
}  // namespace detail

inline GenPlan make_plan(const GenConfig& c) {
  validate(c);
  GenPlan plan;
  const std::size_t num_arch = c.num_intents / 2;
  plan.archetype_domain.reserve(num_arch);
  for (std::size_t a = 0; a < num_arch; ++a)
    plan.archetype_domain.push_back(domain_tags()[a % 6]);

  // Preferred response per intent under the active preference rule,
  // evaluated with the domain the intent will belong to.
  plan.preferred_response.assign(c.num_intents, 0);

  // Pair intents so each archetype's majority/minority preferred responses
  // conflict. Consuming the most frequent preferred response first keeps
  // the pairing feasible whenever no single response is preferred by more
  // than half the intents.
  std::vector<int> unused;
  for (std::size_t k = 0; k < c.num_intents; ++k)
    unused.push_back(static_cast<int>(k));
  for (std::size_t a = 0; a < num_arch; ++a) {
    const std::string& dom = plan.archetype_domain[a];
    auto pref_of = [&](int intent) {
      return detail::preferred_under_rule(intent, dom, c);
    };
    auto count_pref = [&](int pref) {
      std::size_t n = 0;
      for (int u : unused)
        if (pref_of(u) == pref) ++n;
      return n;
    };
    std::size_t maj_at = 0;
    for (std::size_t i = 1; i < unused.size(); ++i)
      if (count_pref(pref_of(unused[i])) >
          count_pref(pref_of(unused[maj_at])))
        maj_at = i;
    const int maj = unused[maj_at];
    unused.erase(unused.begin() + static_cast<long>(maj_at));
    const int maj_pref = pref_of(maj);
    int pick = -1;
    std::size_t pick_count = 0;
    for (std::size_t i = 0; i < unused.size(); ++i) {
      const int p = pref_of(unused[i]);
      if (p == maj_pref) continue;
      const std::size_t n = count_pref(p);
      if (n > pick_count) {
        pick_count = n;
        pick = static_cast<int>(i);
      }
    }
    if (pick < 0)
      throw InvalidArgumentError(
          "degenerate config: cannot pair intents with conflicting "
          "preferred responses");
    const int min = unused[static_cast<std::size_t>(pick)];
    unused.erase(unused.begin() + pick);
    plan.archetype_intents.emplace_back(maj, min);
    plan.preferred_response[static_cast<std::size_t>(maj)] =
        detail::preferred_under_rule(maj, dom, c);
    plan.preferred_response[static_cast<std::size_t>(min)] =
        detail::preferred_under_rule(min, dom, c);
    plan.taxonomy.push_back({maj, dom + "-maj-" + std::to_string(a)});
    plan.taxonomy.push_back({min, dom + "-min-" + std::to_string(a)});
  }
  std::sort(plan.taxonomy.begin(), plan.taxonomy.end(),
            [](const IntentLabel& l, const IntentLabel& r) {
              return l.id < r.id;
            });
  return plan;
}

namespace detail {

template <typename Engine>
std::size_t sample_archetype(const GenPlan& plan, const GenConfig& c,
                             Engine& rng) {
  std::vector<double> w(plan.archetype_intents.size());
  double total = 0.0;
  for (std::size_t a = 0; a < w.size(); ++a) {
    std::size_t dom_idx = 0;
    for (std::size_t i = 0; i < 6; ++i)
      if (domain_tags()[i] == plan.archetype_domain[a]) dom_idx = i;
    w[a] = c.domain_mix[dom_idx];
    total += w[a];
  }
  double u = uniform01(rng) * total;
  for (std::size_t a = 0; a < w.size(); ++a) {
    u -= w[a];
    if (u < 0.0) return a;
  }
  return w.size() - 1;
}

inline FeatureVector realpref_prompt(std::size_t archetype,
                                     const GenConfig& c) {
  FeatureVector x(c.prompt_dim, 0.0);
  const std::vector<double> block = archetype_features(archetype, c.task_dim());
  std::copy(block.begin(), block.end(), x.begin());
  return x;
}

inline ContextVector compose_context(const FeatureVector& prompt, int intent,
                                     std::size_t embed_dim) {
  ContextVector x_con;
  x_con.reserve(prompt.size() + embed_dim);
  x_con.insert(x_con.end(), prompt.begin(), prompt.end());
  const std::vector<double> cue = intent_prototype(intent, embed_dim);
  x_con.insert(x_con.end(), cue.begin(), cue.end());
  return x_con;
}

}  // namespace detail

// Clean corpus: per-archetype majority/minority intents with conflicting
// preferred responses on identical prompt features; label noise swaps the
// pair with probability noise_rate.
inline std::vector<PreferenceRecord> gen_realpref(const GenConfig& c) {
  const GenPlan plan = make_plan(c);
  std::mt19937_64 rng(c.seed);
  std::vector<PreferenceRecord> out;
  out.reserve(c.num_records);
  for (std::size_t i = 0; i < c.num_records; ++i) {
    const std::size_t a = detail::sample_archetype(plan, c, rng);
    const bool minority = uniform01(rng) < c.minority_fraction;
    const auto [maj, min] = plan.archetype_intents[a];
    PreferenceRecord r;
    r.intent = minority ? min : maj;
    r.group = minority ? Group::kMinority : Group::kMajority;
    r.domain = plan.archetype_domain[a];
    r.prompt = detail::realpref_prompt(a, c);
    r.context = detail::compose_context(r.prompt, r.intent, c.embed_dim);
    r.y_w = plan.preferred_response[static_cast<std::size_t>(r.intent)];
    // dispreferred: uniform over the remaining responses
    const auto draw = static_cast<int>(
        uniform01(rng) * static_cast<double>(c.response_count - 1));
    r.y_l = draw >= r.y_w ? draw + 1 : draw;
    if (uniform01(rng) < c.noise_rate) std::swap(r.y_w, r.y_l);
    out.push_back(std::move(r));
  }
  return out;
}

// Adversarial corpus: the prompt carries a jittered main-task block plus an
// injected distractor block on a marked span; the preferred response
// answers the main task, the dispreferred one answers the distractor.
inline std::vector<PreferenceRecord> gen_attackpref(const GenConfig& c) {
  const GenPlan plan = make_plan(c);
  std::mt19937_64 rng(c.seed);
  std::vector<PreferenceRecord> out;
  out.reserve(c.num_records);
  const std::size_t block = c.task_dim();
  for (std::size_t i = 0; i < c.num_records; ++i) {
    const std::size_t a = detail::sample_archetype(plan, c, rng);
    const bool minority = uniform01(rng) < c.minority_fraction;
    const auto [maj, min] = plan.archetype_intents[a];
    const int main_intent = minority ? min : maj;
    const int y_main =
        plan.preferred_response[static_cast<std::size_t>(main_intent)];
    const std::vector<double> main_emb =
        response_embedding(y_main, c.embed_dim);
    const std::vector<double> main_proto =
        intent_prototype(main_intent, c.embed_dim);
    const double main_fit = cosine(main_emb, main_proto);

    // Distractor: a different intent whose preferred response differs and
    // does not out-attract the main answer (the defense oracle must accept
    // the main answer on every clean record).
    int distractor = -1;
    for (int attempt = 0; attempt < 256; ++attempt) {
      const auto cand = static_cast<int>(
          uniform01(rng) * static_cast<double>(c.num_intents));
      if (cand == main_intent ||
          static_cast<std::size_t>(cand) >= c.num_intents)
        continue;
      const int y_cand = similarity_argmax(cand, c.response_count, c.embed_dim);
      if (y_cand == y_main) continue;
      if (cosine(main_emb, intent_prototype(cand, c.embed_dim)) >= main_fit)
        continue;
      distractor = cand;
      break;
    }
    if (distractor < 0)
      throw InvalidArgumentError(
          "degenerate config: no usable distractor intent");

    PreferenceRecord r;
    r.intent = main_intent;
    r.group = minority ? Group::kMinority : Group::kMajority;
    r.domain = plan.archetype_domain[a];
    r.prompt.assign(c.prompt_dim, 0.0);
    const std::vector<double> task = archetype_features(a, block);
    const double jitter =
        c.feature_noise / std::sqrt(static_cast<double>(block));
    for (std::size_t j = 0; j < block; ++j)
      r.prompt[j] = task[j] + jitter * normal01(rng);
    const std::vector<double> inj = intent_prototype(distractor, c.embed_dim);
    for (std::size_t j = 0; j < c.embed_dim; ++j)
      r.prompt[block + j] = c.attack_strength * inj[j];
    r.context = detail::compose_context(r.prompt, main_intent, c.embed_dim);
    r.y_w = y_main;
    r.y_l = similarity_argmax(distractor, c.response_count, c.embed_dim);
    if (uniform01(rng) < c.noise_rate) std::swap(r.y_w, r.y_l);
    r.attack = AttackMarker{block, c.prompt_dim, distractor};
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization: UTF-8, one JSON object per line, field names exactly
// prompt, context, y_w, y_l, intent, group, domain, attack.
// ---------------------------------------------------------------------------

inline nlohmann::json record_to_json(const PreferenceRecord& r) {
  nlohmann::json j;
  j["prompt"] = r.prompt;
  j["context"] = r.context;
  j["y_w"] = r.y_w;
  j["y_l"] = r.y_l;
  j["intent"] = r.intent;
  j["group"] = to_string(r.group);
  j["domain"] = r.domain;
  if (r.attack) {
    j["attack"] = {{"span_begin", r.attack->span_begin},
                   {"span_end", r.attack->span_end},
                   {"distractor_intent", r.attack->distractor_intent}};
  } else {
    j["attack"] = nullptr;
  }
  return j;
}

inline PreferenceRecord record_from_json(const nlohmann::json& j) {
  for (const char* field : {"prompt", "context", "y_w", "y_l", "intent",
                            "group", "domain", "attack"}) {
    if (!j.contains(field))
      throw SchemaError("record missing field", field);
  }
  PreferenceRecord r;
  try {
    r.prompt = j.at("prompt").get<std::vector<double>>();
    r.context = j.at("context").get<std::vector<double>>();
    r.y_w = j.at("y_w").get<int>();
    r.y_l = j.at("y_l").get<int>();
    r.intent = j.at("intent").get<int>();
    r.group = group_from_string(j.at("group").get<std::string>());
    r.domain = j.at("domain").get<std::string>();
    if (!j.at("attack").is_null()) {
      const auto& a = j.at("attack");
      for (const char* field : {"span_begin", "span_end", "distractor_intent"})
        if (!a.contains(field)) throw SchemaError("attack missing field", field);
      r.attack = AttackMarker{a.at("span_begin").get<std::size_t>(),
                              a.at("span_end").get<std::size_t>(),
                              a.at("distractor_intent").get<int>()};
    }
  } catch (const SchemaError&) {
    throw;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("record field has wrong type: ") + e.what(),
                      "");
  }
  if (r.y_w == r.y_l)
    throw InvalidArgumentError("record has y_w == y_l");
  return r;
}

inline void write_dataset(const std::string& path,
                          const std::vector<PreferenceRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for write: " + path);
  for (const auto& r : records) out << record_to_json(r).dump() << '\n';
  if (!out) throw IoError("write failed: " + path);
}

inline std::vector<PreferenceRecord> read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for read: " + path);
  std::vector<PreferenceRecord> out;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("malformed record: ") + e.what(), lineno);
    }
    out.push_back(record_from_json(j));
  }
  return out;
}

}  // namespace aipo

#endif  // AIPO_DATAGEN_HPP
