#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sweet/actor.hpp"
#include "sweet/critic.hpp"
#include "sweet/env.hpp"
#include "sweet/theory.hpp"
#include "sweet/tiny_mdp.hpp"

namespace sweet {

enum class ScorerKind {
  kCriticAdvantage,
  kCriticNoHiddenInfo,
  kValueHead,
  kRandom,
  kOracleExactAdvantage,
};

std::string to_string(ScorerKind k);
ScorerKind scorer_kind_from_string(const std::string& s);

/// Turn-level action scorer used for Best-of-N selection. Holds a non-owning
/// handle to its model, which must outlive the scorer.
class Scorer {
 public:
  /// Kind follows the critic: critic_advantage with c, critic_no_hidden_info without.
  static Scorer critic(const CriticModel& critic);
  static Scorer value_head(const ValueHead& head);
  static Scorer random();
  /// Exact A^π(o, a, c) read from `tables`. Observations are TinyMDP::prompt(o),
  /// hidden info is {"c<k>"}, actions are {"a<j>"}. Only valid on TinyMDP.
  static Scorer oracle(const TinyMDP& mdp, const QvaTables& tables);

  ScorerKind kind() const { return kind_; }
  std::string name() const { return to_string(kind_); }
  /// Whether score() reads c; selection never fetches c for scorers that do not.
  bool needs_hidden_info() const;

  double score(std::span<const Token> observation, std::span<const Token> action,
               std::span<const Token> hidden_info, Rng& rng) const;

 private:
  using Fn = std::function<double(std::span<const Token>, std::span<const Token>,
                                  std::span<const Token>, Rng&)>;
  Scorer(ScorerKind kind, Fn fn) : kind_(kind), fn_(std::move(fn)) {}

  ScorerKind kind_;
  Fn fn_;
};

/// Index of the highest-scoring candidate; ties broken uniformly with `rng`.
/// A single candidate is returned without scoring.
std::size_t best_of_n_select(const Scorer& scorer, std::span<const TokenSeq> candidates,
                             std::span<const Token> observation,
                             std::span<const Token> hidden_info, Rng& rng);

/// Best-of-N action selection layered over an actor's samples.
struct BestOfN {
  const Scorer* scorer = nullptr;
  std::size_t n = 1;
  /// Stream for scoring and tie-breaking, kept apart from candidate sampling.
  Rng* select_rng = nullptr;
  /// When set, turn t draws its candidates from a stream derived from
  /// (paired_seed, t) so that runs sharing the seed share candidate draws.
  std::optional<std::uint64_t> paired_seed;
};

/// Rolls the actor until the episode ends. Without a selector each turn
/// samples one action from `rng`; with n = 1 the selector reproduces that
/// rollout exactly.
Trajectory run_episode(const PolicyModel& actor, const SlotEnv& env, const Task& task, Rng& rng,
                       const BestOfN* selector = nullptr);

struct EvalResult {
  double success_rate = 0.0;
  double mean_reward = 0.0;
  double stderr_success = 0.0;  // binomial
  double stderr_reward = 0.0;
  double mean_action_length = 0.0;
  double mean_turns = 0.0;
  std::size_t episodes = 0;
};

/// Aggregates finished episodes; success means cumulative reward >= 1.
EvalResult summarize_episodes(std::span<const Trajectory> episodes);

/// Episode e runs task tasks[e mod |tasks|] with a stream derived from (seed, e).
EvalResult eval_success(const PolicyModel& actor, const SlotEnv& env, std::span<const Task> tasks,
                        std::uint64_t seed, std::size_t episodes, unsigned jobs = 1);

struct CurvePoint {
  std::string scorer;
  std::size_t n = 0;
  double success_rate = 0.0;
  double stderr = 0.0;
  std::size_t episodes = 0;
};

/// Best-of-N success per (scorer, N). Episode e with a given N uses the same
/// candidate streams for every scorer, so curves differ only through selection.
std::vector<CurvePoint> scaling_curve(const PolicyModel& actor, const SlotEnv& env,
                                      std::span<const Scorer* const> scorers,
                                      std::span<const std::size_t> n_values,
                                      std::span<const Task> tasks, std::uint64_t seed,
                                      std::size_t episodes, unsigned jobs = 1);

/// Columns: scorer,N,success_rate,stderr,episodes.
void write_curve_csv(const std::filesystem::path& path, std::span<const CurvePoint> points);

/// Per-(o, c) action law of Best-of-N selection by exact advantage of `policy`,
/// indexed [o * n_hidden + c][a].
std::vector<std::vector<double>> tiny_best_of_n_policy(const TinyMDP& mdp,
                                                       const PolicyModel& policy, std::size_t n);

/// Exact expected return of the Best-of-N exact-advantage selector on TinyMDP.
double tiny_best_of_n_return(const TinyMDP& mdp, const PolicyModel& policy, std::size_t n);

}  // namespace sweet
