#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace sweet {

using Token = std::string;
using TokenSeq = std::vector<Token>;

/// Thrown when an operation's precondition is violated.
class PreconditionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when a loss or gradient becomes NaN or infinite during training.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline double logsumexp(std::span<const double> xs) {
  double hi = -std::numeric_limits<double>::infinity();
  for (double x : xs) hi = std::max(hi, x);
  if (!std::isfinite(hi)) return hi;
  double acc = 0.0;
  for (double x : xs) acc += std::exp(x - hi);
  return hi + std::log(acc);
}

/// log(1 + exp(x)) without overflow.
inline double softplus(double x) {
  if (x > 0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// -log(sigmoid(margin)); the shared Bradley-Terry / DPO loss form.
inline double preference_loss(double margin) { return softplus(-margin); }

/// d/dmargin of preference_loss.
inline double preference_loss_grad(double margin) { return -sigmoid(-margin); }

/// Softmax of `logits` written into `out` (resized).
inline void softmax(std::span<const double> logits, std::vector<double>& out) {
  out.resize(logits.size());
  const double lse = logsumexp(logits);
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = std::exp(logits[i] - lse);
}

/// 64-bit FNV-1a, stable across platforms and runs.
class Fnv1a {
 public:
  explicit Fnv1a(std::uint64_t seed = 0) : state_(kOffset ^ (seed * kPrime)) {}

  Fnv1a& bytes(std::string_view s) {
    for (unsigned char c : s) {
      state_ ^= c;
      state_ *= kPrime;
    }
    return *this;
  }
  Fnv1a& u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      state_ ^= (v >> (8 * i)) & 0xffU;
      state_ *= kPrime;
    }
    return *this;
  }
  /// Appends a token followed by a unit separator so that token boundaries matter.
  Fnv1a& token(std::string_view s) { return bytes(s).u64(0x1f); }

  std::uint64_t value() const { return state_; }

 private:
  static constexpr std::uint64_t kOffset = 0xcbf29ce484222325ULL;
  static constexpr std::uint64_t kPrime = 0x100000001b3ULL;
  std::uint64_t state_;
};

inline std::uint64_t hash_bytes(std::string_view s, std::uint64_t seed = 0) {
  return Fnv1a(seed).bytes(s).value();
}

/// splitmix64 finalizer; used to derive independent child seeds.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seeded random source. Draws are implemented here rather than through
/// <random> distributions so results are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(mix64(seed)) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw PreconditionError("Rng::below: n must be positive");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t v;
    do {
      v = engine_();
    } while (v >= limit);
    return v % n;
  }

  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  /// Index drawn from the categorical distribution `probs` (need not be normalized).
  std::size_t categorical(std::span<const double> probs) {
    double total = 0.0;
    for (double p : probs) total += p;
    double u = uniform() * total;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      u -= probs[i];
      if (u < 0.0) return i;
    }
    for (std::size_t i = probs.size(); i-- > 0;)
      if (probs[i] > 0.0) return i;
    return probs.size() - 1;
  }

  /// Independent child stream derived from this stream's seed material and `salt`.
  Rng split(std::uint64_t salt) { return Rng(mix64(engine_() ^ mix64(salt))); }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

 private:
  std::mt19937_64 engine_;
};

/// Deterministic seed for a named sub-stream of a run.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view label,
                                 std::uint64_t index = 0) {
  return mix64(Fnv1a(base).bytes(label).u64(index).value());
}

}  // namespace sweet
