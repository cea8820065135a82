#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "sweet/numeric.hpp"

namespace sweet {

/// Number of times Task::training_time_info() has been read in this process.
/// Tests use it to check that actor-side code never touches hidden information.
std::uint64_t hidden_info_reads();

/// An episode template. The hidden training-time information is only reachable
/// through training_time_info(), which is counted.
class Task {
 public:
  Task() = default;
  Task(std::string task_id, TokenSeq initial_observation, TokenSeq hidden_info, int horizon,
       std::string evaluator_id);

  const std::string& task_id() const { return task_id_; }
  const TokenSeq& initial_observation() const { return initial_observation_; }
  int horizon() const { return horizon_; }
  const std::string& evaluator_id() const { return evaluator_id_; }

  /// Hidden information c. Critic, value head and environment only.
  const TokenSeq& training_time_info() const;

  bool operator==(const Task& other) const = default;

 private:
  std::string task_id_;
  TokenSeq initial_observation_;
  TokenSeq hidden_info_;
  int horizon_ = 1;
  std::string evaluator_id_;
};

struct TurnRecord {
  int turn_index = 1;
  TokenSeq observation;  // full interaction history o_t
  TokenSeq action;
  TokenSeq simulator_response;
  double reward = 0.0;

  bool operator==(const TurnRecord&) const = default;
};

enum class Termination { kAnswerToken, kHorizonExhausted };

std::string to_string(Termination t);
Termination termination_from_string(const std::string& s);

/// Sum of per-turn rewards, no discounting. Throws PreconditionError when empty.
double cumulative_reward(std::span<const TurnRecord> turns);

class Trajectory {
 public:
  Trajectory() = default;
  /// Validates turn indices, the history-append transition and nonempty actions.
  Trajectory(std::string task_id, std::vector<TurnRecord> turns, Termination terminated_by);

  const std::string& task_id() const { return task_id_; }
  const std::vector<TurnRecord>& turns() const { return turns_; }
  Termination terminated_by() const { return terminated_by_; }
  double cumulative_reward() const { return cumulative_reward_; }

  bool operator==(const Trajectory&) const = default;

 private:
  std::string task_id_;
  std::vector<TurnRecord> turns_;
  Termination terminated_by_ = Termination::kHorizonExhausted;
  double cumulative_reward_ = 0.0;
};

double cumulative_reward(const Trajectory& traj);

class TrajectoryPair {
 public:
  /// Throws PreconditionError unless both share task_id and chosen strictly dominates.
  TrajectoryPair(Trajectory chosen, Trajectory rejected);

  const std::string& task_id() const { return chosen_.task_id(); }
  const Trajectory& chosen() const { return chosen_; }
  const Trajectory& rejected() const { return rejected_; }

  bool operator==(const TrajectoryPair&) const = default;

 private:
  Trajectory chosen_;
  Trajectory rejected_;
};

struct PairingOptions {
  double min_gap = 0.0;
  std::size_t max_pairs_per_task = 8;  // 0 keeps every pair
  std::uint64_t seed = 0;
};

/// Cross pairs within each task whose reward gap strictly exceeds min_gap.
/// Tasks are visited in first-appearance order; when a task has more pairs than
/// the cap, a seeded random subset is kept in enumeration order.
std::vector<TrajectoryPair> make_trajectory_pairs(std::span<const Trajectory> dataset,
                                                  const PairingOptions& options = {});

// JSON mapping (one object per JSONL line).
void to_json(nlohmann::json& j, const Task& t);
void from_json(const nlohmann::json& j, Task& t);
void to_json(nlohmann::json& j, const TurnRecord& r);
void from_json(const nlohmann::json& j, TurnRecord& r);
void to_json(nlohmann::json& j, const Trajectory& t);
void from_json(const nlohmann::json& j, Trajectory& t);
void to_json(nlohmann::json& j, const TrajectoryPair& p);
TrajectoryPair pair_from_json(const nlohmann::json& j);

class JsonlError : public std::runtime_error {
 public:
  JsonlError(const std::string& path, std::size_t line, const std::string& what);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

template <class T>
void save_jsonl(const std::filesystem::path& path, std::span<const T> items);

template <class T>
std::vector<T> load_jsonl(const std::filesystem::path& path);

template <class T>
void save_jsonl(const std::filesystem::path& path, const std::vector<T>& items) {
  save_jsonl<T>(path, std::span<const T>(items));
}

}  // namespace sweet
