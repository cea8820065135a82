#pragma once

#include <cstdint>
#include <vector>

#include "sweet/policy.hpp"

namespace sweet {

/// Fully enumerable finite-horizon POMDP with hidden information c.
///
/// Observations are layered by turn (layer t holds the observations the agent
/// can see at turn t), so values are well defined per observation. The agent's
/// policy conditions on the observation only; transitions and rewards may
/// depend on c.
struct TinyMDP {
  struct Outcome {
    int next_obs = -1;  // -1 at the last layer
    double prob = 1.0;
  };
  struct Start {
    int hidden = 0;
    int obs = 0;
    double prob = 0.0;
  };

  int horizon = 1;
  int n_hidden = 1;
  int n_actions = 2;
  std::vector<int> obs_layer;  // layer (0-based turn) of each observation
  /// transitions[(o * n_actions + a) * n_hidden + c]
  std::vector<std::vector<Outcome>> transitions;
  /// rewards[(o * n_actions + a) * n_hidden + c]
  std::vector<double> rewards;
  std::vector<Start> initial;

  int n_obs() const { return static_cast<int>(obs_layer.size()); }
  std::size_t index(int o, int a, int c) const {
    return (static_cast<std::size_t>(o) * n_actions + a) * n_hidden + c;
  }
  double reward(int o, int a, int c) const { return rewards[index(o, a, c)]; }
  const std::vector<Outcome>& transition(int o, int a, int c) const {
    return transitions[index(o, a, c)];
  }
  bool deterministic() const;

  /// Throws PreconditionError on inconsistent tables.
  void validate() const;

  /// Action tokens "a0".."a{n-1}" used by policies over this MDP.
  Vocab action_vocab() const;
  /// Prompt under which a policy is queried at observation o.
  static TokenSeq prompt(int o);
};

struct TinyMdpShape {
  int horizon = 3;
  int n_hidden = 2;
  int n_actions = 2;
  int obs_per_layer = 3;
};

/// Seeded random MDP with deterministic transitions and a nondegenerate initial
/// distribution over (c, o1).
TinyMDP random_tiny_mdp(std::uint64_t seed, const TinyMdpShape& shape = {});

/// Two-turn MDP whose first transition is stochastic; violates the
/// deterministic-transition hypothesis of the return/advantage telescoping.
TinyMDP stochastic_counterexample_mdp();

/// Tabular policy over the MDP's observations.
PolicyModel make_tiny_policy(const TinyMDP& mdp);
/// Policy with N(0, scale^2) logits at every observation.
PolicyModel random_tiny_policy(const TinyMDP& mdp, std::uint64_t seed, double scale = 1.0);

/// π(· | o) as a probability vector.
std::vector<double> action_probs(const PolicyModel& policy, int obs);

struct MdpTrajectory {
  int hidden = 0;
  std::vector<int> obs;
  std::vector<int> actions;
  std::vector<double> rewards;
  double prob = 0.0;
};

class EnumerationOverflow : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Every (c, trajectory) with nonzero probability. Throws EnumerationOverflow beyond `cap`.
std::vector<MdpTrajectory> enumerate_trajectories(const TinyMDP& mdp, const PolicyModel& policy,
                                                  std::size_t cap = 10000);

}  // namespace sweet
