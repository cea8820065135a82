#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "sweet/policy.hpp"
#include "sweet/trajectory.hpp"

namespace sweet {

/// Stand-in for c when the critic is denied training-time information.
inline const Token kBlankHiddenToken = "<blank>";

/// Turn-wise advantage function parameterized by a log-probability ratio
/// between a trainable policy and its frozen initial copy, conditioned on the
/// hidden information c placed before the interaction history.
class CriticModel {
 public:
  CriticModel(PolicyModel pi_theta, double beta = 0.1, bool normalize_by_length = true,
              bool use_hidden_info = true);
  /// Restores a critic whose reference was saved separately.
  CriticModel(PolicyModel pi_theta, FrozenPolicy pi_ref, double beta, bool normalize_by_length,
              bool use_hidden_info);

  const PolicyModel& pi_theta() const { return pi_theta_; }
  PolicyModel& pi_theta() { return pi_theta_; }
  const PolicyModel& pi_ref() const { return *pi_ref_; }
  const FrozenPolicy& pi_ref_handle() const { return pi_ref_; }
  double beta() const { return beta_; }
  bool normalize_by_length() const { return normalize_by_length_; }
  bool use_hidden_info() const { return use_hidden_info_; }

  /// c ⊕ <sep> ⊕ o_t, with c replaced by <blank> when hidden info is disabled.
  TokenSeq prompt(std::span<const Token> observation, std::span<const Token> hidden_info) const;

  /// Mean (or sum, without length normalization) over action tokens of
  /// log π_θ − log π_ref.
  double advantage(std::span<const Token> observation, std::span<const Token> action,
                   std::span<const Token> hidden_info) const;

  /// Advantage of an action under a prompt already built with prompt().
  double advantage_for_prompt(std::span<const Token> prompt, std::span<const Token> action) const;

  /// this->advantage gradient w.r.t. π_θ parameters, scaled and accumulated into `out`.
  void accumulate_advantage_grad(std::span<const Token> prompt, std::span<const Token> action,
                                 double scale, Gradient& out) const;

  void save(const std::filesystem::path& theta_path) const;

 private:
  PolicyModel pi_theta_;
  FrozenPolicy pi_ref_;
  double beta_;
  bool normalize_by_length_;
  bool use_hidden_info_;
};

/// Maps task_id to its hidden information c.
using HiddenInfoLookup = std::function<const TokenSeq&(const std::string& task_id)>;

/// −log σ(β Σ_t A(chosen) − β Σ_t A(rejected)).
double bt_loss(const CriticModel& critic, const TrajectoryPair& pair,
               std::span<const Token> hidden_info);

/// β Σ_t A(chosen) − β Σ_t A(rejected).
double bt_margin(const CriticModel& critic, const TrajectoryPair& pair,
                 std::span<const Token> hidden_info);

/// Gradient of bt_loss w.r.t. π_θ, accumulated with `scale`. Returns the loss.
double accumulate_bt_grad(const CriticModel& critic, const TrajectoryPair& pair,
                          std::span<const Token> hidden_info, double scale, Gradient& out);

struct OptConfig {
  double learning_rate = 0.5;
  int epochs = 4;
  std::size_t batch_size = 8;
  double nll_coef = 0.01;
  std::uint64_t seed = 0;
};

struct CriticReport {
  double initial_loss = 0.0;          // mean bt_loss before any update
  std::vector<double> epoch_losses;   // mean objective over each epoch's batches
  double final_loss = 0.0;            // mean bt_loss after training
  double pair_accuracy = 0.0;         // fraction of pairs with positive margin
  std::size_t steps = 0;
};

/// Mini-batch gradient descent on mean bt_loss + nll_coef * per-token NLL of
/// the chosen trajectories' actions under π_θ.
CriticReport train_critic(CriticModel& critic, std::span<const TrajectoryPair> pairs,
                          const HiddenInfoLookup& hidden_info, const OptConfig& opt);

}  // namespace sweet
