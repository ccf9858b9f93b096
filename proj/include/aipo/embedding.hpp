#ifndef AIPO_EMBEDDING_HPP
#define AIPO_EMBEDDING_HPP

#include <cmath>
#include <cstdint>
#include <vector>

#include "aipo/common.hpp"

// Deterministic signed-hash embeddings. Responses are abstract indices; each
// gets a fixed unit vector with +-1/sqrt(dim) entries so that every
// similarity-based oracle is exactly recomputable. Intents get prototype
// vectors from a separate hash stream.

namespace aipo {

namespace detail {
inline std::vector<double> signed_hash_vector(std::uint64_t salt,
                                              std::uint64_t key,
                                              std::size_t dim) {
  if (dim == 0) throw InvalidArgumentError("embedding dim must be positive");
  std::vector<double> v(dim);
  const double mag = 1.0 / std::sqrt(static_cast<double>(dim));
  for (std::size_t j = 0; j < dim; ++j) {
    const std::uint64_t h = mix64(salt, mix64(key, j));
    v[j] = (h & 1ull) ? mag : -mag;
  }
  return v;
}
}  // namespace detail

inline constexpr std::uint64_t kResponseSalt = 0x5245535021ull;
inline constexpr std::uint64_t kIntentSalt = 0x494e54454eull;
inline constexpr std::uint64_t kArchetypeSalt = 0x4152434845ull;
inline constexpr std::uint64_t kSkewSalt = 0x534b4557ull;

// Signed bag-of-token embedding of an abstract response index.
inline std::vector<double> response_embedding(int response, std::size_t dim) {
  if (response < 0) throw InvalidArgumentError("response index negative");
  return detail::signed_hash_vector(kResponseSalt,
                                    static_cast<std::uint64_t>(response), dim);
}

// Prototype vector of an intent id; also the generator's intent-cue block.
inline std::vector<double> intent_prototype(int intent, std::size_t dim) {
  if (intent < 0) throw InvalidArgumentError("intent id negative");
  return detail::signed_hash_vector(kIntentSalt,
                                    static_cast<std::uint64_t>(intent), dim);
}

// Prompt block of a generator archetype.
inline std::vector<double> archetype_features(std::uint64_t archetype,
                                              std::size_t dim) {
  return detail::signed_hash_vector(kArchetypeSalt, archetype, dim);
}

inline double cosine(const std::vector<double>& a,
                     const std::vector<double>& b) {
  if (a.size() != b.size())
    throw InvalidArgumentError("cosine: dimension mismatch");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa <= 0.0 || bb <= 0.0)
    throw DegenerateEmbeddingError("cosine of a zero-norm vector");
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

}  // namespace aipo

#endif  // AIPO_EMBEDDING_HPP
