#ifndef AIPO_TYPES_HPP
#define AIPO_TYPES_HPP

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "aipo/common.hpp"

// Shared domain types. A PreferenceRecord is the unit of every dataset:
// one (prompt, context, preferred, dispreferred, intent) training triple.

namespace aipo {

// Prompt features after featurization; fixed dimension within a run.
using FeatureVector = std::vector<double>;

// Prompt features concatenated with a context-provider block.
using ContextVector = std::vector<double>;

struct IntentLabel {
  int id = 0;
  std::string name;
};

enum class Group { kMajority, kMinority };

inline const char* to_string(Group g) {
  return g == Group::kMajority ? "majority" : "minority";
}

inline Group group_from_string(const std::string& s) {
  if (s == "majority") return Group::kMajority;
  if (s == "minority") return Group::kMinority;
  throw InvalidArgumentError("unknown group: " + s);
}

// The fixed six-domain tag set.
inline const std::array<std::string, 6>& domain_tags() {
  static const std::array<std::string, 6> kTags = {
      "religion", "food", "health", "regional", "language", "music"};
  return kTags;
}

inline bool is_known_domain(const std::string& d) {
  for (const auto& t : domain_tags())
    if (t == d) return true;
  return false;
}

// Marks the injected feature span of an adversarial record, plus the
// distractor intent the injection promotes, so the defense oracle can judge.
struct AttackMarker {
  std::size_t span_begin = 0;
  std::size_t span_end = 0;
  int distractor_intent = 0;

  bool operator==(const AttackMarker&) const = default;
};

struct PreferenceRecord {
  FeatureVector prompt;
  ContextVector context;
  int y_w = 0;
  int y_l = 0;
  int intent = 0;
  Group group = Group::kMajority;
  std::string domain;
  std::optional<AttackMarker> attack;

  bool operator==(const PreferenceRecord&) const = default;
};

}  // namespace aipo

#endif  // AIPO_TYPES_HPP
