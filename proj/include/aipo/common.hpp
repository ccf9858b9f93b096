#ifndef AIPO_COMMON_HPP
#define AIPO_COMMON_HPP

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

// Shared plumbing: error taxonomy, a small dense matrix, deterministic
// hashing/RNG helpers, and lossless double <-> text conversion.

namespace aipo {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

class InvalidArgumentError : public Error {
 public:
  using Error::Error;
};

class NumericRangeError : public Error {
 public:
  using Error::Error;
};

class FullSupportError : public Error {
 public:
  using Error::Error;
};

class FrozenModelError : public Error {
 public:
  using Error::Error;
};

class TrainingDivergedError : public Error {
 public:
  TrainingDivergedError(const std::string& what, long step)
      : Error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

class ContextProviderError : public Error {
 public:
  ContextProviderError(const std::string& what, std::string provider_id)
      : Error(what + " [provider: " + provider_id + "]"),
        provider_id_(std::move(provider_id)) {}
  const std::string& provider_id() const { return provider_id_; }

 private:
  std::string provider_id_;
};

class IncompleteTaxonomyError : public Error {
 public:
  using Error::Error;
};

class DegenerateEmbeddingError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, long line)
      : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  long line() const { return line_; }

 private:
  long line_;
};

class SchemaError : public Error {
 public:
  SchemaError(const std::string& what, std::string field)
      : Error(what + " [field: " + field + "]"), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

class OptimizationFailedError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Small dense row-major matrix
// ---------------------------------------------------------------------------

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  const double* row(std::size_t r) const { return data.data() + r * cols; }
  double* row(std::size_t r) { return data.data() + r * cols; }

  bool same_shape(const Matrix& o) const {
    return rows == o.rows && cols == o.cols;
  }

  void add_scaled(const Matrix& g, double s) {
    for (std::size_t i = 0; i < data.size(); ++i) data[i] += s * g.data[i];
  }

  double frobenius_norm() const {
    double acc = 0.0;
    for (double v : data) acc += v * v;
    return std::sqrt(acc);
  }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

// ---------------------------------------------------------------------------
// Deterministic hashing
// ---------------------------------------------------------------------------

// splitmix64 finalizer; stable across platforms, used for feature hashing.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t mix64(std::uint64_t a, std::uint64_t b) {
  return mix64(a ^ mix64(b));
}

// Uniform double in [0, 1) from a hash; 53 mantissa bits.
inline double hash_unit(std::uint64_t h) {
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

// Uniform double in [0, 1) from an engine, bit-stable across platforms
// (avoids the implementation-defined std distributions).
template <typename Engine>
double uniform01(Engine& rng) {
  return hash_unit(static_cast<std::uint64_t>(rng()));
}

template <typename Engine>
double uniform_in(Engine& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

// Standard normal via Box-Muller on the stable uniform stream.
template <typename Engine>
double normal01(Engine& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

// FNV-1a 64-bit, used for artifact checksums.
inline std::uint64_t fnv1a64(const void* bytes, std::size_t n,
                             std::uint64_t seed = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Misc numeric helpers
// ---------------------------------------------------------------------------

inline void require_finite(double v, const char* what) {
  if (!std::isfinite(v))
    throw InvalidArgumentError(std::string(what) + " must be finite");
}

inline double dot(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

inline double norm2(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

// Lossless double -> text (17 significant digits).
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace aipo

#endif  // AIPO_COMMON_HPP
