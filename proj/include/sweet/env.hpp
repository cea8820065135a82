#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sweet/numeric.hpp"
#include "sweet/policy.hpp"
#include "sweet/trajectory.hpp"

namespace sweet {

// Fixed (non-value) vocabulary of the slot-query game.
inline const Token kAnswerToken = "ANSWER";
inline const Token kTaskToken = "TASK";
inline const Token kEqualsToken = "=";
inline const Token kUnparseableToken = "UNPARSEABLE";
inline const std::string kQueryPrefix = "Q:";

enum class RewardMode { kBinaryAllTests, kFractionPassed };

std::string to_string(RewardMode m);
RewardMode reward_mode_from_string(const std::string& s);

struct EnvConfig {
  int n_attributes = 4;
  int n_values = 4;
  int horizon = 6;
  int n_tests = 4;
  RewardMode reward_mode = RewardMode::kBinaryAllTests;
  /// Longest action the actor may emit; 0 means n_attributes + 2 (ANSWER, values, END).
  int max_action_len = 0;
  /// Probability that a query is answered with a wrong value. Off by default.
  double responder_noise = 0.0;

  /// Throws PreconditionError describing the first invalid field.
  void validate() const;
  std::size_t action_max_len() const;

  std::vector<Token> attribute_names() const;
  /// Value tokens of attribute `attr` (token names are unique across attributes).
  std::vector<Token> attribute_values(int attr) const;

  /// Q:<attr> per attribute, ANSWER, every attribute value, END.
  Vocab action_vocab() const;
  std::string evaluator_id() const;
};

/// Reference slot assignment visible only to the simulated collaborator.
struct HiddenSpec {
  std::vector<std::pair<Token, Token>> slots;  // attribute -> value, attribute order
  std::vector<std::pair<Token, Token>> test_battery;  // (attribute queried, expected value)

  /// "attr = value" triples in slot order.
  TokenSeq serialize() const;
  static HiddenSpec parse(const TokenSeq& tokens, const EnvConfig& config);

  bool operator==(const HiddenSpec&) const = default;
};

/// Test j checks slot j mod n_attributes.
std::vector<std::pair<Token, Token>> derive_test_battery(
    const std::vector<std::pair<Token, Token>>& slots, int n_tests);

enum class ActionKind { kQuery, kAnswer, kMalformed };

struct ParsedAction {
  ActionKind kind = ActionKind::kMalformed;
  Token attribute;        // kQuery
  TokenSeq answer_values; // kAnswer
};

/// A trailing END is optional. Anything other than exactly one query or a full
/// answer is malformed.
ParsedAction parse_action(std::span<const Token> action, const EnvConfig& config);

/// Score of an answer action (ANSWER v1..vk [END]) against the spec; unparseable scores 0.
double evaluate_answer(std::span<const Token> answer, const HiddenSpec& spec, RewardMode mode,
                       const EnvConfig& config);

struct StepResult {
  TokenSeq response;
  double reward = 0.0;
  bool done = false;
};

/// Hidden-slot query game. Stateless: every call is a pure function of its inputs.
class SlotEnv {
 public:
  explicit SlotEnv(EnvConfig config);

  const EnvConfig& config() const { return config_; }
  const Vocab& action_vocab() const { return vocab_; }

  Task sample_task(std::uint64_t seed) const;
  HiddenSpec spec_of(const Task& task) const;

  /// One turn at 1-based `turn` with interaction history `history`.
  StepResult step(const Task& task, int turn, std::span<const Token> history,
                  std::span<const Token> action) const;

 private:
  EnvConfig config_;
  Vocab vocab_;
};

/// One episode in progress; enforces the turn limit and history-append transition.
class Episode {
 public:
  Episode(const SlotEnv& env, const Task& task);

  /// Observation o_t the actor conditions on.
  const TokenSeq& observation() const { return history_; }
  int turn() const { return static_cast<int>(turns_.size()) + 1; }
  bool done() const { return done_; }

  /// Throws std::logic_error when the episode has already finished.
  StepResult step(TokenSeq action);

  /// Throws std::logic_error until done.
  Trajectory finish() const;

 private:
  const SlotEnv* env_;
  const Task* task_;
  TokenSeq history_;
  std::vector<TurnRecord> turns_;
  bool done_ = false;
  Termination termination_ = Termination::kHorizonExhausted;
};

/// Values revealed so far, read off "attr = value" triples in the history.
std::vector<std::optional<Token>> revealed_values(std::span<const Token> history,
                                                  const EnvConfig& config);

/// Chooses the next action from the actor-visible history only.
using ActionSource = std::function<TokenSeq(std::span<const Token> history, int turn, Rng& rng)>;

/// Queries every unknown attribute in order, then answers with the revealed values.
ActionSource scripted_optimal_agent(const EnvConfig& config);

/// Imperfect collaborator used to pretrain the zero-shot actor.
struct HeuristicAgentParams {
  double answer_prob_base = 0.0;       // chance of answering with no attribute known
  double answer_prob_per_known = 0.05; // added per known attribute
  double repeat_query_prob = 0.3;      // chance a query targets an already known attribute
  double copy_error_prob = 0.2;        // per known slot, answer a random value instead
  double malformed_prob = 0.05;
};

ActionSource heuristic_agent(const EnvConfig& config, HeuristicAgentParams params = {});

/// Runs `agent` against `task` to completion.
Trajectory run_agent(const SlotEnv& env, const Task& task, const ActionSource& agent, Rng& rng);

}  // namespace sweet
