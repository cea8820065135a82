#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "sweet/config.hpp"
#include "sweet/evaluation.hpp"

namespace sweet {

/// A stage could not complete: missing or corrupt artifact, or a training error.
class StageError : public std::runtime_error {
 public:
  StageError(const std::string& stage, const std::string& what)
      : std::runtime_error(stage + ": " + what), stage_(stage) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

// Critic variants trained by the train-critic stage.
inline const std::vector<std::string> kCriticVariants{"main", "no_hidden", "no_norm"};
// Actor algorithms accepted by train-actor.
inline const std::vector<std::string> kActorAlgos{"sweet", "sweet_no_norm", "rft", "mtdpo",
                                                  "value"};
// Stage order of the full pipeline.
inline const std::vector<std::string> kStages{"gen-tasks",  "rollout", "train-critic",
                                              "train-actor", "eval",   "best-of-n",
                                              "verify-theory"};

/// One (config, seed) run rooted at <out>/seed-<seed>/.
class RunContext {
 public:
  RunContext(RunConfig config, std::uint64_t seed, std::filesystem::path out_root,
             unsigned jobs = 1);

  const RunConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }
  unsigned jobs() const { return jobs_; }
  const std::filesystem::path& dir() const { return dir_; }
  std::filesystem::path path(const std::string& artifact) const { return dir_ / artifact; }

  /// Throws StageError naming `artifact` when it is absent.
  std::filesystem::path require(const std::string& stage, const std::string& artifact) const;

  /// Records artifact checksums and the config hash in manifest.json.
  void record(const std::vector<std::string>& artifacts) const;
  /// True when every artifact exists and matches the manifest under the current config hash.
  bool up_to_date(const std::vector<std::string>& artifacts) const;

 private:
  RunConfig config_;
  std::uint64_t seed_;
  std::filesystem::path dir_;
  unsigned jobs_;
};

/// Hex FNV-1a digest of a file's bytes.
std::string file_checksum(const std::filesystem::path& path);

// Stages. Each reads only artifacts persisted by earlier stages.
void stage_gen_tasks(const RunContext& ctx);
void stage_rollout(const RunContext& ctx);
/// variant: one of kCriticVariants, or "all".
void stage_train_critic(const RunContext& ctx, const std::string& variant = "all");
/// algo: one of kActorAlgos, or "all".
void stage_train_actor(const RunContext& ctx, const std::string& algo = "all");
void stage_eval(const RunContext& ctx);
void stage_best_of_n(const RunContext& ctx);
/// Returns false when any check fails; the table is written either way.
bool stage_verify_theory(const RunContext& ctx);

/// Runs every stage in order, skipping stages whose outputs are up to date.
/// Returns false when the theory checks fail.
bool run_pipeline(const RunContext& ctx, bool resume = true);

/// Artifacts produced by a stage (for train-critic / train-actor with "all").
std::vector<std::string> stage_outputs(const std::string& stage);

/// Critic checkpoint: π_θ weights plus metadata pinning the frozen reference.
void save_critic(const CriticModel& critic, const std::filesystem::path& theta_path,
                 const std::filesystem::path& reference_path);
/// Throws std::runtime_error when the stored reference fingerprint does not
/// match the reference checkpoint.
CriticModel load_critic(const std::filesystem::path& theta_path,
                        const std::filesystem::path& reference_path);

struct ResultRow {
  std::string algorithm;
  double success_rate = 0.0;
  double stderr_success = 0.0;
  double mean_reward = 0.0;
  double mean_action_length = 0.0;
  std::size_t episodes = 0;
};

void write_results_csv(const std::filesystem::path& path, std::span<const ResultRow> rows);
std::vector<ResultRow> read_results_csv(const std::filesystem::path& path);
std::vector<CurvePoint> read_curve_csv(const std::filesystem::path& path);

struct SummaryRow {
  std::string algorithm;
  std::size_t seeds = 0;
  // Means across seeds; stderr is across seeds and 0 with a single seed.
  double success_mean = 0.0, success_stderr = 0.0;
  double reward_mean = 0.0, reward_stderr = 0.0;
  double length_mean = 0.0, length_stderr = 0.0;
};

/// Aggregates every <root>/seed-*/results.csv into summary.csv and every
/// bon.csv into curve.csv (columns scorer,N,success_rate,stderr). Throws
/// StageError when no results exist.
std::vector<SummaryRow> build_report(const std::filesystem::path& root);

}  // namespace sweet
