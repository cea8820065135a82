#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "sweet/actor.hpp"
#include "sweet/critic.hpp"
#include "sweet/env.hpp"

namespace sweet {

/// Invalid or unknown configuration entry. The message is qualified by source and line.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  EnvConfig env{};
  FeatureConfig features{};
  SeedActorConfig seed_actor{};

  std::size_t trajectories = 2000;  // offline dataset size
  std::size_t rollouts_per_task = 8;
  std::size_t eval_tasks = 200;
  std::size_t pair_cap = 16;  // trajectory pairs kept per task, 0 keeps all
  double pair_min_gap = 0.0;

  OptConfig critic{0.5, 4, 8, 0.01, 0};
  double critic_beta = 0.1;
  bool critic_normalize = true;

  ActorOptConfig actor{0.002, 1, 8, 0.1, 0.01, 16, 6, 0};
  int actor_rounds = 1;

  ActorOptConfig rft{0.002, 4, 32, 0.1, 0.0, 16, 6, 0};
  double rft_threshold = 1.0;

  ActorOptConfig mtdpo{0.002, 4, 8, 0.1, 0.01, 16, 6, 0};

  OptConfig value{0.5, 4, 8, 0.0, 0};

  std::size_t eval_episodes = 1000;
  std::vector<std::size_t> bon_n{1, 2, 4, 8, 16};
  std::size_t bon_episodes = 500;

  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};

  int lemma1_mdps = 20;
  int lemma1_policies = 5;
  int lemma2_mdps = 10;

  /// Number of training tasks implied by trajectories / rollouts_per_task (rounded up).
  std::size_t train_tasks() const;
  /// Throws ConfigError naming the first invalid field.
  void validate() const;
};

/// Parses flat "key = value" lines; '#' starts a comment. Keys absent from the
/// text keep their defaults. `source` prefixes error messages.
RunConfig parse_config_text(const std::string& text, const std::string& source = "<config>");
RunConfig parse_config_file(const std::filesystem::path& path);

/// Applies one assignment, as if it appeared in a config file.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);

/// Every key with its current value, one "key = value" line each, sorted by key.
std::string canonical_config(const RunConfig& cfg);

/// Hex digest of canonical_config.
std::string config_hash(const RunConfig& cfg);

std::vector<std::string> config_keys();

}  // namespace sweet
