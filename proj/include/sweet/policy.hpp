#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "sweet/numeric.hpp"

namespace sweet {

/// Segment separator inside a conditioning prompt. Hashed features never
/// cross it and are tagged with the segment they came from.
inline const Token kSeparator = "<sep>";

/// Output token set of a policy.
class Vocab {
 public:
  Vocab() = default;
  explicit Vocab(std::vector<Token> tokens);

  std::size_t size() const { return tokens_.size(); }
  const Token& token(std::size_t i) const { return tokens_.at(i); }
  const std::vector<Token>& tokens() const { return tokens_; }
  bool contains(const Token& t) const { return index_.contains(t); }
  /// Throws PreconditionError for tokens outside the vocabulary.
  std::size_t index_of(const Token& t) const;
  /// Index of the END token when present.
  std::optional<std::size_t> end_index() const { return end_; }

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<Token> tokens_;
  std::unordered_map<Token, std::size_t> index_;
  std::optional<std::size_t> end_;
};

inline const Token kEndToken = "END";

enum class ModelMode { kTabularExact, kLinearHashed };

std::string to_string(ModelMode m);
ModelMode model_mode_from_string(const std::string& s);

/// Feature families for linear_hashed mode.
struct FeatureConfig {
  std::size_t width = 1U << 14;
  int max_order = 3;
  std::uint64_t hash_seed = 17;
  bool bias = true;
  bool count_features = true;   // (token, capped count) per prompt segment
  bool prefix_features = true;  // prefix length, anchored suffix n-grams, prefix bag
  bool position_conjoined = true;  // prompt features get separate rows per action position

  bool operator==(const FeatureConfig&) const = default;
};

using SparseFeatures = std::vector<std::pair<std::uint32_t, double>>;

/// A prompt preprocessed once so that many prefixes can be scored against it.
/// Tabular mode keeps the canonical serialization; linear mode keeps hashed features.
struct EncodedPrompt {
  std::string key;
  SparseFeatures features;
};

/// Hashed n-gram features of a prompt (no prefix features).
SparseFeatures hash_prompt_features(std::span<const Token> prompt, const FeatureConfig& cfg);

/// Address of one scalar parameter: a tabular row by context key or a linear row by feature.
struct ParamKey {
  std::string context;
  std::uint32_t feature = 0;
  std::size_t token = 0;
};

/// Sparse gradient over policy parameters. Iteration order is deterministic.
struct Gradient {
  std::map<std::string, std::vector<double>> tabular;
  std::map<std::uint32_t, std::vector<double>> linear;

  bool empty() const { return tabular.empty() && linear.empty(); }
  /// this += scale * other
  void add(const Gradient& other, double scale = 1.0);
  void scale(double s);
  double squared_norm() const;
  /// Value at a parameter address, zero if absent.
  double at(const ParamKey& key) const;
  std::vector<ParamKey> support() const;
};

struct ActionLogProb {
  double total = 0.0;
  std::vector<double> per_token;
};

/// Autoregressive per-turn token policy. Parameters untouched since construction
/// are exactly zero, so a fresh model is uniform over the vocabulary.
class PolicyModel {
 public:
  static PolicyModel tabular(Vocab vocab);
  static PolicyModel linear(Vocab vocab, FeatureConfig features = {});

  ModelMode mode() const { return mode_; }
  const Vocab& vocab() const { return vocab_; }
  const FeatureConfig& feature_config() const { return features_; }

  EncodedPrompt encode(std::span<const Token> prompt) const;

  /// Unnormalized scores over the vocabulary for prompt ⊕ prefix.
  void logits(const EncodedPrompt& prompt, std::span<const Token> prefix,
              std::vector<double>& out) const;

  /// log π(token | prompt, prefix).
  double token_logprob(std::span<const Token> prompt, std::span<const Token> prefix,
                       const Token& token) const;

  /// Per-token log-probabilities of `action`, each conditioned on the action prefix before it.
  ActionLogProb action_logprob(std::span<const Token> prompt, std::span<const Token> action) const;
  ActionLogProb action_logprob(const EncodedPrompt& prompt, std::span<const Token> action) const;

  /// Ancestral sampling until END or max_len tokens.
  TokenSeq sample_action(std::span<const Token> prompt, Rng& rng, std::size_t max_len) const;
  TokenSeq sample_action(const EncodedPrompt& prompt, Rng& rng, std::size_t max_len) const;

  /// Gradient of the action's total log-probability. With `per_token_weights`
  /// the l-th token's term is scaled by weights[l].
  Gradient logprob_grad(std::span<const Token> prompt, std::span<const Token> action) const;
  void accumulate_logprob_grad(const EncodedPrompt& prompt, std::span<const Token> action,
                               double scale, Gradient& out,
                               std::span<const double> per_token_weights = {}) const;

  /// params += step * grad
  void apply(const Gradient& grad, double step);

  /// Tabular row key of prompt ⊕ prefix.
  std::string context_key(std::span<const Token> prompt, std::span<const Token> prefix = {}) const {
    return tabular_key(encode(prompt), prefix);
  }

  double param(const ParamKey& key) const;
  double& mutable_param(const ParamKey& key);

  /// Number of explicitly stored nonzero parameters.
  std::size_t nonzero_count() const;

  /// Deep copy that can no longer be mutated.
  std::shared_ptr<const PolicyModel> freeze_reference() const;

  /// Stable hash of mode, vocabulary, feature config and every parameter bit.
  std::uint64_t fingerprint() const;

  void save(const std::filesystem::path& path) const;
  static PolicyModel load(const std::filesystem::path& path);

  bool operator==(const PolicyModel& other) const;

 private:
  PolicyModel(ModelMode mode, Vocab vocab, FeatureConfig features);

  SparseFeatures prefix_features(std::span<const Token> prefix) const;
  std::uint32_t prompt_row(std::uint32_t feature, std::size_t position) const;
  std::string tabular_key(const EncodedPrompt& prompt, std::span<const Token> prefix) const;

  ModelMode mode_;
  Vocab vocab_;
  FeatureConfig features_;
  std::unordered_map<std::string, std::vector<double>> table_;
  std::vector<double> weights_;  // width x |vocab|, row-major by feature
};

using FrozenPolicy = std::shared_ptr<const PolicyModel>;

}  // namespace sweet
