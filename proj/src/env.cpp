#include "sweet/env.hpp"

#include <algorithm>
#include <stdexcept>

namespace sweet {

namespace {

const std::vector<Token> kDefaultAttributes = {"color", "size", "shape", "material", "pattern",
                                               "weight"};
const std::vector<std::vector<Token>> kDefaultValues = {
    {"red", "green", "blue", "yellow", "black", "white"},
    {"small", "medium", "large", "huge", "tiny", "giant"},
    {"circle", "square", "triangle", "star", "hexagon", "oval"},
    {"wood", "metal", "glass", "stone", "paper", "cloth"},
    {"plain", "striped", "dotted", "checked", "floral", "wavy"},
    {"light", "heavy", "hollow", "dense", "airy", "solid"},
};

std::vector<Token> make_attribute_names(int n) {
  std::vector<Token> out;
  for (int i = 0; i < n; ++i)
    out.push_back(i < static_cast<int>(kDefaultAttributes.size()) ? kDefaultAttributes[i]
                                                                  : "attr" + std::to_string(i));
  return out;
}

}  // namespace

std::string to_string(RewardMode m) {
  return m == RewardMode::kBinaryAllTests ? "binary_all_tests" : "fraction_passed";
}

RewardMode reward_mode_from_string(const std::string& s) {
  if (s == "binary_all_tests" || s == "binary") return RewardMode::kBinaryAllTests;
  if (s == "fraction_passed" || s == "fraction") return RewardMode::kFractionPassed;
  throw std::invalid_argument("unknown reward mode '" + s + "'");
}

void EnvConfig::validate() const {
  if (n_attributes < 1) throw PreconditionError("env.n_attributes must be >= 1");
  if (n_values < 1) throw PreconditionError("env.n_values must be >= 1");
  if (horizon < 1) throw PreconditionError("env.horizon must be >= 1");
  if (n_tests < 1) throw PreconditionError("env.n_tests must be >= 1");
  if (max_action_len < 0) throw PreconditionError("env.max_action_len must be >= 0");
  if (responder_noise < 0.0 || responder_noise > 1.0)
    throw PreconditionError("env.responder_noise must be in [0, 1]");
}

std::size_t EnvConfig::action_max_len() const {
  return max_action_len > 0 ? static_cast<std::size_t>(max_action_len)
                            : static_cast<std::size_t>(n_attributes + 2);
}

std::vector<Token> EnvConfig::attribute_names() const { return make_attribute_names(n_attributes); }

std::vector<Token> EnvConfig::attribute_values(int attr) const {
  std::vector<Token> out;
  for (int j = 0; j < n_values; ++j) {
    if (attr < static_cast<int>(kDefaultValues.size()) &&
        j < static_cast<int>(kDefaultValues[attr].size()))
      out.push_back(kDefaultValues[attr][j]);
    else
      out.push_back(attribute_names()[attr] + "_v" + std::to_string(j));
  }
  return out;
}

Vocab EnvConfig::action_vocab() const {
  std::vector<Token> tokens;
  for (const auto& a : attribute_names()) tokens.push_back(kQueryPrefix + a);
  tokens.push_back(kAnswerToken);
  for (int i = 0; i < n_attributes; ++i)
    for (const auto& v : attribute_values(i)) tokens.push_back(v);
  tokens.push_back(kEndToken);
  return Vocab(std::move(tokens));
}

std::string EnvConfig::evaluator_id() const { return "slots/" + to_string(reward_mode); }

TokenSeq HiddenSpec::serialize() const {
  TokenSeq out;
  for (const auto& [attr, value] : slots) {
    out.push_back(attr);
    out.push_back(kEqualsToken);
    out.push_back(value);
  }
  return out;
}

HiddenSpec HiddenSpec::parse(const TokenSeq& tokens, const EnvConfig& config) {
  if (tokens.size() != static_cast<std::size_t>(3 * config.n_attributes))
    throw PreconditionError("HiddenSpec::parse: wrong token count");
  HiddenSpec spec;
  for (std::size_t i = 0; i < tokens.size(); i += 3) {
    if (tokens[i + 1] != kEqualsToken) throw PreconditionError("HiddenSpec::parse: expected '='");
    spec.slots.emplace_back(tokens[i], tokens[i + 2]);
  }
  spec.test_battery = derive_test_battery(spec.slots, config.n_tests);
  return spec;
}

std::vector<std::pair<Token, Token>> derive_test_battery(
    const std::vector<std::pair<Token, Token>>& slots, int n_tests) {
  std::vector<std::pair<Token, Token>> tests;
  for (int j = 0; j < n_tests; ++j) tests.push_back(slots[j % slots.size()]);
  return tests;
}

ParsedAction parse_action(std::span<const Token> action, const EnvConfig& config) {
  ParsedAction out;
  auto body = action;
  if (!body.empty() && body.back() == kEndToken) body = body.first(body.size() - 1);
  if (body.empty()) return out;
  const auto& names = config.attribute_names();
  if (body.size() == 1 && body[0].starts_with(kQueryPrefix)) {
    const Token attr = body[0].substr(kQueryPrefix.size());
    if (std::find(names.begin(), names.end(), attr) != names.end()) {
      out.kind = ActionKind::kQuery;
      out.attribute = attr;
    }
    return out;
  }
  if (body[0] == kAnswerToken && body.size() == static_cast<std::size_t>(config.n_attributes) + 1) {
    for (std::size_t i = 1; i < body.size(); ++i) {
      const auto& t = body[i];
      if (t == kAnswerToken || t == kEndToken || t.starts_with(kQueryPrefix)) return out;
    }
    const Vocab vocab = config.action_vocab();
    for (std::size_t i = 1; i < body.size(); ++i)
      if (!vocab.contains(body[i])) return out;
    out.kind = ActionKind::kAnswer;
    out.answer_values.assign(body.begin() + 1, body.end());
  }
  return out;
}

double evaluate_answer(std::span<const Token> answer, const HiddenSpec& spec, RewardMode mode,
                       const EnvConfig& config) {
  const auto parsed = parse_action(answer, config);
  if (parsed.kind != ActionKind::kAnswer || spec.test_battery.empty()) return 0.0;
  std::size_t passed = 0;
  for (const auto& [attr, expected] : spec.test_battery) {
    for (std::size_t i = 0; i < spec.slots.size(); ++i) {
      if (spec.slots[i].first == attr) {
        passed += (parsed.answer_values[i] == expected);
        break;
      }
    }
  }
  if (mode == RewardMode::kBinaryAllTests) return passed == spec.test_battery.size() ? 1.0 : 0.0;
  return static_cast<double>(passed) / static_cast<double>(spec.test_battery.size());
}

SlotEnv::SlotEnv(EnvConfig config) : config_(std::move(config)) {
  config_.validate();
  vocab_ = config_.action_vocab();
}

Task SlotEnv::sample_task(std::uint64_t seed) const {
  Rng rng(derive_seed(seed, "task"));
  HiddenSpec spec;
  const auto& names = config_.attribute_names();
  for (int i = 0; i < config_.n_attributes; ++i) {
    const auto values = config_.attribute_values(i);
    spec.slots.emplace_back(names[i], values[rng.below(values.size())]);
  }
  TokenSeq obs{kTaskToken};
  obs.insert(obs.end(), names.begin(), names.end());
  return Task("task-" + std::to_string(seed), std::move(obs), spec.serialize(), config_.horizon,
              config_.evaluator_id());
}

HiddenSpec SlotEnv::spec_of(const Task& task) const {
  return HiddenSpec::parse(task.training_time_info(), config_);
}

StepResult SlotEnv::step(const Task& task, int turn, std::span<const Token> history,
                         std::span<const Token> action) const {
  if (turn < 1 || turn > task.horizon())
    throw std::logic_error("step: turn " + std::to_string(turn) + " outside the horizon");
  StepResult out;
  const auto parsed = parse_action(action, config_);
  const HiddenSpec spec = spec_of(task);
  switch (parsed.kind) {
    case ActionKind::kAnswer:
      out.reward = evaluate_answer(action, spec, config_.reward_mode, config_);
      out.done = true;
      return out;
    case ActionKind::kQuery: {
      const auto& names = config_.attribute_names();
      const auto idx = static_cast<int>(std::find(names.begin(), names.end(), parsed.attribute) -
                                        names.begin());
      Token value = spec.slots[idx].second;
      if (config_.responder_noise > 0.0) {
        Fnv1a h(0x5eed);
        h.bytes(task.task_id()).u64(static_cast<std::uint64_t>(turn));
        for (const auto& t : history) h.token(t);
        Rng noise(h.value());
        if (noise.uniform() < config_.responder_noise) {
          auto values = config_.attribute_values(idx);
          std::erase(values, value);
          if (!values.empty()) value = values[noise.below(values.size())];
        }
      }
      out.response = {parsed.attribute, kEqualsToken, value};
      break;
    }
    case ActionKind::kMalformed:
      out.response = {kUnparseableToken};
      break;
  }
  out.done = turn >= task.horizon();
  return out;
}

Episode::Episode(const SlotEnv& env, const Task& task)
    : env_(&env), task_(&task), history_(task.initial_observation()) {}

StepResult Episode::step(TokenSeq action) {
  if (done_) throw std::logic_error("Episode::step: episode already finished");
  if (action.empty()) throw PreconditionError("Episode::step: empty action");
  const int t = turn();
  auto result = env_->step(*task_, t, history_, action);
  TurnRecord rec{t, history_, action, result.response, result.reward};
  history_.insert(history_.end(), action.begin(), action.end());
  history_.insert(history_.end(), result.response.begin(), result.response.end());
  turns_.push_back(std::move(rec));
  if (result.done) {
    done_ = true;
    termination_ = parse_action(action, env_->config()).kind == ActionKind::kAnswer
                       ? Termination::kAnswerToken
                       : Termination::kHorizonExhausted;
  }
  return result;
}

Trajectory Episode::finish() const {
  if (!done_) throw std::logic_error("Episode::finish: episode not done");
  return Trajectory(task_->task_id(), turns_, termination_);
}

std::vector<std::optional<Token>> revealed_values(std::span<const Token> history,
                                                  const EnvConfig& config) {
  const auto& names = config.attribute_names();
  std::vector<std::optional<Token>> out(names.size());
  for (std::size_t i = 0; i + 2 < history.size(); ++i) {
    if (history[i + 1] != kEqualsToken) continue;
    auto it = std::find(names.begin(), names.end(), history[i]);
    if (it != names.end()) out[it - names.begin()] = history[i + 2];
  }
  return out;
}

ActionSource scripted_optimal_agent(const EnvConfig& config) {
  return [config](std::span<const Token> history, int, Rng&) {
    const auto known = revealed_values(history, config);
    const auto& names = config.attribute_names();
    for (std::size_t i = 0; i < known.size(); ++i)
      if (!known[i]) return TokenSeq{kQueryPrefix + names[i], kEndToken};
    TokenSeq answer{kAnswerToken};
    for (const auto& v : known) answer.push_back(*v);
    answer.push_back(kEndToken);
    return answer;
  };
}

ActionSource heuristic_agent(const EnvConfig& config, HeuristicAgentParams p) {
  return [config, p](std::span<const Token> history, int turn, Rng& rng) {
    const auto known = revealed_values(history, config);
    const auto& names = config.attribute_names();
    const Vocab vocab = config.action_vocab();
    if (rng.uniform() < p.malformed_prob) {
      const std::size_t len = 1 + rng.below(config.action_max_len());
      TokenSeq junk;
      for (std::size_t i = 0; i < len; ++i) junk.push_back(vocab.token(rng.below(vocab.size())));
      return junk;
    }
    std::vector<std::size_t> unknown;
    for (std::size_t i = 0; i < known.size(); ++i)
      if (!known[i]) unknown.push_back(i);
    const double n_known = static_cast<double>(known.size() - unknown.size());
    const bool last_turn = turn >= config.horizon;
    const double answer_prob = unknown.empty() ? 1.0 - p.repeat_query_prob
                                               : p.answer_prob_base + p.answer_prob_per_known * n_known;
    if (last_turn || rng.uniform() < answer_prob) {
      TokenSeq answer{kAnswerToken};
      for (std::size_t i = 0; i < known.size(); ++i) {
        const auto values = config.attribute_values(static_cast<int>(i));
        if (known[i] && rng.uniform() >= p.copy_error_prob)
          answer.push_back(*known[i]);
        else
          answer.push_back(values[rng.below(values.size())]);
      }
      answer.push_back(kEndToken);
      return answer;
    }
    std::size_t target;
    if (unknown.empty() || rng.uniform() < p.repeat_query_prob)
      target = rng.below(names.size());
    else
      target = unknown[rng.below(unknown.size())];
    return TokenSeq{kQueryPrefix + names[target], kEndToken};
  };
}

Trajectory run_agent(const SlotEnv& env, const Task& task, const ActionSource& agent, Rng& rng) {
  Episode ep(env, task);
  while (!ep.done()) ep.step(agent(ep.observation(), ep.turn(), rng));
  return ep.finish();
}

}  // namespace sweet
