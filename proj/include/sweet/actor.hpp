#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sweet/critic.hpp"
#include "sweet/env.hpp"
#include "sweet/policy.hpp"
#include "sweet/trajectory.hpp"

namespace sweet {

struct TurnPreference {
  TokenSeq observation;
  TokenSeq chosen;
  TokenSeq rejected;
  double chosen_score = 0.0;
  double rejected_score = 0.0;
};

/// n iid samples from the actor at observation o_t. Requires n >= 2.
std::vector<TokenSeq> generate_candidates(const PolicyModel& actor,
                                          std::span<const Token> observation, std::size_t n,
                                          std::size_t max_len, Rng& rng);

/// Sorts candidates by score (descending, seeded random tie-break), then draws
/// chosen uniformly from the top half and rejected uniformly from the bottom
/// half; with an odd count the middle element belongs to the bottom half.
/// Returns nullopt when every candidate is the same action.
std::optional<TurnPreference> rank_and_pair(std::span<const TokenSeq> candidates,
                                            std::span<const double> scores,
                                            std::span<const Token> observation, Rng& rng);

/// Scores candidates with the critic's advantage given c, then rank_and_pair.
std::optional<TurnPreference> rank_and_pair(std::span<const TokenSeq> candidates,
                                            const CriticModel& critic,
                                            std::span<const Token> observation,
                                            std::span<const Token> hidden_info, Rng& rng);

/// β'(log π_φ(a⁺) − log π_ref(a⁺)) − β'(log π_φ(a⁻) − log π_ref(a⁻)).
double dpo_margin(const PolicyModel& actor, const PolicyModel& pi_ref, const TurnPreference& pref,
                  double beta_prime);

/// Standard DPO loss −log σ(dpo_margin).
double dpo_loss(const PolicyModel& actor, const PolicyModel& pi_ref, const TurnPreference& pref,
                double beta_prime);

/// Gradient of dpo_loss w.r.t. the actor, accumulated with `scale`. Returns the loss.
double accumulate_dpo_grad(const PolicyModel& actor, const PolicyModel& pi_ref,
                           const TurnPreference& pref, double beta_prime, double scale,
                           Gradient& out);

struct ActorOptConfig {
  double learning_rate = 0.5;
  int epochs = 1;
  std::size_t batch_size = 8;
  double beta = 0.1;  // β' of the DPO objective
  double nll_coef = 0.01;
  std::size_t n_candidates = 16;
  std::size_t max_action_len = 6;
  std::uint64_t seed = 0;
};

struct ActorReport {
  std::vector<double> batch_losses;
  std::vector<double> epoch_losses;
  double mean_margin = 0.0;          // mean implicit-reward margin over updates
  double mean_score_gap = 0.0;       // SWEET: mean critic gap chosen − rejected
  std::size_t preferences = 0;
  std::size_t skipped_turns = 0;
  std::size_t steps = 0;
};

/// Scores candidate actions; the SWEET trainer is agnostic to what sits behind it.
using CandidateScorer = std::function<double(std::span<const Token> observation,
                                             std::span<const Token> action,
                                             const std::string& task_id)>;

/// Critic-advantage scorer, reading c from `hidden_info`.
CandidateScorer critic_scorer(const CriticModel& critic, HiddenInfoLookup hidden_info);

/// Per-turn DPO driven by a turn-level scorer over the logged offline histories.
/// Candidates come from the current actor; one pass per epoch.
ActorReport train_actor_sweet(PolicyModel& actor, const PolicyModel& pi_ref,
                              const CandidateScorer& scorer,
                              std::span<const Trajectory> offline, const ActorOptConfig& opt);

/// Maximum likelihood on every action of trajectories with return >= threshold.
/// Throws PreconditionError when none qualify.
ActorReport train_rejection_ft(PolicyModel& actor, std::span<const Trajectory> trajectories,
                               double threshold, const ActorOptConfig& opt);

/// Mean per-token negative log-likelihood of the trajectories' actions.
double sequence_nll(const PolicyModel& actor, std::span<const Trajectory> trajectories);

/// Trajectory-level DPO margin: β' Σ_t log-ratio(chosen) − β' Σ_t log-ratio(rejected).
double multiturn_dpo_margin(const PolicyModel& actor, const PolicyModel& pi_ref,
                            const TrajectoryPair& pair, double beta_prime);
double multiturn_dpo_loss(const PolicyModel& actor, const PolicyModel& pi_ref,
                          const TrajectoryPair& pair, double beta_prime);
double accumulate_multiturn_dpo_grad(const PolicyModel& actor, const PolicyModel& pi_ref,
                                     const TrajectoryPair& pair, double beta_prime, double scale,
                                     Gradient& out);

ActorReport train_multiturn_dpo(PolicyModel& actor, const PolicyModel& pi_ref,
                                std::span<const TrajectoryPair> pairs, const ActorOptConfig& opt);

/// Logistic success predictor over hashed features of c ⊕ o_t ⊕ a_t.
class ValueHead {
 public:
  explicit ValueHead(FeatureConfig features = {});

  SparseFeatures features(std::span<const Token> observation, std::span<const Token> action,
                          std::span<const Token> hidden_info) const;
  double logit(const SparseFeatures& x) const;
  /// Predicted success probability in (0, 1).
  double predict(std::span<const Token> observation, std::span<const Token> action,
                 std::span<const Token> hidden_info) const;

  const FeatureConfig& feature_config() const { return features_; }
  std::vector<double>& weights() { return weights_; }
  const std::vector<double>& weights() const { return weights_; }

  void save(const std::filesystem::path& path) const;
  static ValueHead load(const std::filesystem::path& path);

 private:
  FeatureConfig features_;
  std::vector<double> weights_;
};

/// Mean binary cross-entropy of final success over every turn of every trajectory.
double value_bce(const ValueHead& head, std::span<const Trajectory> trajectories,
                 const HiddenInfoLookup& hidden_info);

/// Gradient of value_bce w.r.t. the head weights (dense, same layout as weights()).
std::vector<double> value_bce_grad(const ValueHead& head, std::span<const Trajectory> trajectories,
                                   const HiddenInfoLookup& hidden_info);

struct ValueReport {
  double initial_bce = 0.0;
  std::vector<double> epoch_losses;
  double final_bce = 0.0;
};

ValueReport train_value_head(ValueHead& head, std::span<const Trajectory> trajectories,
                             const HiddenInfoLookup& hidden_info, const OptConfig& opt);

/// Zero-shot actor: a linear policy pretrained by maximum likelihood on an
/// imperfect heuristic collaborator's episodes (tasks disjoint from any dataset
/// seeds via a dedicated seed stream).
struct SeedActorConfig {
  FeatureConfig features{};
  HeuristicAgentParams heuristic{};
  std::size_t pretrain_episodes = 5000;
  int epochs = 8;
  double learning_rate = 0.5;
  std::size_t batch_size = 16;
};

PolicyModel make_seed_actor(const SlotEnv& env, const SeedActorConfig& config, std::uint64_t seed);

}  // namespace sweet
