#pragma once

#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "sweet/env.hpp"
#include "sweet/trajectory.hpp"

namespace sweet::testing {

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& name) {
    path_ = std::filesystem::temp_directory_path() /
            ("sweet-test-" + name + "-" + std::to_string(::getpid()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

 private:
  std::filesystem::path path_;
};

/// Heuristic-agent episodes on freshly sampled tasks, with c recorded per task.
struct Dataset {
  std::vector<Task> tasks;
  std::vector<Trajectory> trajectories;
  std::unordered_map<std::string, TokenSeq> hidden;

  const TokenSeq& c(const std::string& task_id) const { return hidden.at(task_id); }
};

inline Dataset heuristic_dataset(const SlotEnv& env, std::size_t n_tasks, int per_task,
                                 std::uint64_t seed) {
  Dataset d;
  Rng rng(seed);
  const auto agent = heuristic_agent(env.config());
  for (std::size_t i = 0; i < n_tasks; ++i) {
    d.tasks.push_back(env.sample_task(derive_seed(seed, "test-task", i)));
    d.hidden[d.tasks.back().task_id()] = d.tasks.back().training_time_info();
    for (int k = 0; k < per_task; ++k)
      d.trajectories.push_back(run_agent(env, d.tasks.back(), agent, rng));
  }
  return d;
}

/// Single-turn trajectory whose one action is `action` with reward `r`.
inline Trajectory one_turn(const std::string& task_id, TokenSeq obs, TokenSeq action, double r) {
  TurnRecord t{1, std::move(obs), std::move(action), {}, r};
  return Trajectory(task_id, {t}, Termination::kAnswerToken);
}

}  // namespace sweet::testing
