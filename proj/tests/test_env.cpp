#include <gtest/gtest.h>

#include <set>
#include <unistd.h>

#include "helpers.hpp"
#include "sweet/env.hpp"
#include "sweet/tiny_mdp.hpp"

namespace sweet {
namespace {

TokenSeq answer_of(const HiddenSpec& spec) {
  TokenSeq a{kAnswerToken};
  for (const auto& [attr, v] : spec.slots) a.push_back(v);
  a.push_back(kEndToken);
  return a;
}

TEST(EnvConfig, VocabularyHasExactlyTheGameTokens) {
  const EnvConfig cfg;
  const auto vocab = cfg.action_vocab();
  std::size_t queries = 0, values = 0, answer = 0, end = 0;
  for (const auto& t : vocab.tokens()) {
    if (t.starts_with(kQueryPrefix)) ++queries;
    else if (t == kAnswerToken) ++answer;
    else if (t == kEndToken) ++end;
    else ++values;
  }
  EXPECT_EQ(queries, 4U);
  EXPECT_EQ(answer, 1U);
  EXPECT_EQ(end, 1U);
  EXPECT_EQ(values, 16U);
}

TEST(EnvConfig, ValidateRejectsBadFields) {
  EnvConfig cfg;
  cfg.horizon = 0;
  EXPECT_THROW(cfg.validate(), PreconditionError);
  cfg = EnvConfig{};
  cfg.responder_noise = 1.5;
  EXPECT_THROW(cfg.validate(), PreconditionError);
}

TEST(SampleTask, DeterministicInSeed) {
  const SlotEnv env{EnvConfig{}};
  EXPECT_EQ(env.sample_task(1), env.sample_task(1));
}

TEST(SampleTask, SpecsVaryAcrossSeeds) {
  const SlotEnv env{EnvConfig{}};
  std::set<TokenSeq> specs;
  for (std::uint64_t s = 1; s <= 100; ++s) specs.insert(env.sample_task(s).training_time_info());
  // Oracle: occupied-bin count of n uniform draws over m = 4^4 specs.
  const double m = 256.0, n = 100.0;
  const double mean = m * (1.0 - std::pow(1.0 - 1.0 / m, n));
  const double var = m * (m - 1.0) * std::pow(1.0 - 2.0 / m, n) + m * std::pow(1.0 - 1.0 / m, n) -
                     m * m * std::pow(1.0 - 1.0 / m, 2.0 * n);
  EXPECT_NEAR(static_cast<double>(specs.size()), mean, 4.0 * std::sqrt(var));
}

TEST(SampleTask, DegenerateSpaceHasOneSpec) {
  EnvConfig cfg;
  cfg.n_attributes = 1;
  cfg.n_values = 1;
  const SlotEnv env(cfg);
  for (std::uint64_t s = 0; s < 10; ++s)
    EXPECT_EQ(env.sample_task(s).training_time_info(), env.sample_task(0).training_time_info());
}

TEST(SampleTask, ObservationNamesAttributesButNoValues) {
  const SlotEnv env{EnvConfig{}};
  const auto task = env.sample_task(3);
  const auto spec = env.spec_of(task);
  for (const auto& [attr, value] : spec.slots) {
    const auto& obs = task.initial_observation();
    EXPECT_NE(std::find(obs.begin(), obs.end(), attr), obs.end());
    EXPECT_EQ(std::find(obs.begin(), obs.end(), value), obs.end());
  }
  EXPECT_EQ(HiddenSpec::parse(spec.serialize(), env.config()), spec);
}

TEST(Step, QueryRevealsValueVerbatim) {
  const SlotEnv env{EnvConfig{}};
  const Task task("t", {kTaskToken, "color"}, {"color", "=", "red", "size", "=", "small", "shape",
                                               "=", "star", "material", "=", "wood"},
                  6, env.config().evaluator_id());
  const auto r = env.step(task, 1, task.initial_observation(), TokenSeq{"Q:color", kEndToken});
  EXPECT_EQ(r.response, (TokenSeq{"color", "=", "red"}));
  EXPECT_EQ(r.reward, 0.0);
  EXPECT_FALSE(r.done);
}

TEST(Step, CorrectAnswerBinaryMode) {
  const SlotEnv env{EnvConfig{}};
  const auto task = env.sample_task(11);
  const auto r = env.step(task, 1, task.initial_observation(), answer_of(env.spec_of(task)));
  EXPECT_EQ(r.reward, 1.0);
  EXPECT_TRUE(r.done);
  EXPECT_TRUE(r.response.empty());
}

TEST(Step, FractionModeCountsPassingTests) {
  EnvConfig cfg;
  cfg.reward_mode = RewardMode::kFractionPassed;
  const SlotEnv env(cfg);
  const auto task = env.sample_task(5);
  const auto spec = env.spec_of(task);
  auto answer = answer_of(spec);
  // Corrupt slots 2 and 3.
  for (int i : {2, 3}) {
    const auto values = cfg.attribute_values(i);
    answer[1 + i] = values[0] == spec.slots[i].second ? values[1] : values[0];
  }
  // Oracle: execute the test battery by hand.
  std::size_t passed = 0;
  for (const auto& [attr, expected] : spec.test_battery)
    for (std::size_t i = 0; i < spec.slots.size(); ++i)
      if (spec.slots[i].first == attr) passed += answer[1 + i] == expected;
  const double oracle = static_cast<double>(passed) / static_cast<double>(spec.test_battery.size());
  EXPECT_DOUBLE_EQ(oracle, 0.5);
  EXPECT_DOUBLE_EQ(env.step(task, 1, task.initial_observation(), answer).reward, oracle);
}

TEST(Step, MalformedActionGetsSentinel) {
  const SlotEnv env{EnvConfig{}};
  const auto task = env.sample_task(2);
  const auto r = env.step(task, 1, task.initial_observation(), TokenSeq{"Q:color", "Q:size"});
  EXPECT_EQ(r.response, TokenSeq{kUnparseableToken});
  EXPECT_EQ(r.reward, 0.0);
  EXPECT_FALSE(r.done);
}

TEST(Step, HorizonForcesDoneWithoutReward) {
  EnvConfig cfg;
  cfg.horizon = 2;
  const SlotEnv env(cfg);
  const auto task = env.sample_task(2);
  Episode ep(env, task);
  ep.step({"Q:color", kEndToken});
  const auto r = ep.step({"Q:size", kEndToken});
  EXPECT_TRUE(r.done);
  EXPECT_EQ(r.reward, 0.0);
  EXPECT_THROW(ep.step({"Q:size"}), std::logic_error);
  EXPECT_EQ(ep.finish().terminated_by(), Termination::kHorizonExhausted);
}

TEST(Step, PureFunctionOfInputs) {
  const SlotEnv env{EnvConfig{}};
  const auto task = env.sample_task(8);
  const TokenSeq act{"Q:shape", kEndToken};
  const auto a = env.step(task, 2, task.initial_observation(), act);
  const auto b = env.step(task, 2, task.initial_observation(), act);
  EXPECT_EQ(a.response, b.response);
  EXPECT_EQ(a.reward, b.reward);
  EXPECT_EQ(a.done, b.done);
}

TEST(EvaluateAnswer, EchoEmptyAndPartial) {
  EnvConfig cfg;
  cfg.reward_mode = RewardMode::kFractionPassed;
  const SlotEnv env(cfg);
  const auto spec = env.spec_of(env.sample_task(21));
  EXPECT_EQ(evaluate_answer(answer_of(spec), spec, RewardMode::kBinaryAllTests, cfg), 1.0);
  EXPECT_EQ(evaluate_answer(TokenSeq{}, spec, RewardMode::kFractionPassed, cfg), 0.0);
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    auto answer = answer_of(spec);
    std::size_t k = 0;
    for (int i = 0; i < cfg.n_attributes; ++i) {
      if (rng.uniform() < 0.5) {
        const auto values = cfg.attribute_values(i);
        answer[1 + i] = values[0] == spec.slots[i].second ? values[1] : values[0];
      } else {
        ++k;
      }
    }
    // One test per slot, so the passing fraction is k / n.
    EXPECT_DOUBLE_EQ(evaluate_answer(answer, spec, RewardMode::kFractionPassed, cfg),
                     static_cast<double>(k) / cfg.n_attributes);
  }
}

TEST(Env, ScriptedOptimalAgentAlwaysSucceeds) {
  const SlotEnv env{EnvConfig{}};
  const auto agent = scripted_optimal_agent(env.config());
  Rng rng(1);
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto t = run_agent(env, env.sample_task(s), agent, rng);
    EXPECT_EQ(t.cumulative_reward(), 1.0);
    EXPECT_EQ(t.terminated_by(), Termination::kAnswerToken);
  }
}

TEST(Env, PartialObservabilityAndRewardSupport) {
  const SlotEnv env{EnvConfig{}};
  const auto data = testing::heuristic_dataset(env, 30, 4, 12);
  for (const auto& traj : data.trajectories) {
    for (const auto& turn : traj.turns()) {
      const auto parsed = parse_action(turn.action, env.config());
      // A value reaches the actor only as the reply to a query for its attribute.
      if (parsed.kind == ActionKind::kQuery)
        EXPECT_EQ(turn.simulator_response.at(0), parsed.attribute);
      else
        EXPECT_TRUE(turn.simulator_response.empty() ||
                    turn.simulator_response == TokenSeq{kUnparseableToken});
      EXPECT_TRUE(turn.reward == 0.0 || turn.reward == 1.0);
      if (parsed.kind != ActionKind::kAnswer) EXPECT_EQ(turn.reward, 0.0);
    }
  }
}

TEST(Env, InitialObservationCarriesNoHiddenValue) {
  const SlotEnv env{EnvConfig{}};
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto task = env.sample_task(s);
    const auto& obs = task.initial_observation();
    EXPECT_EQ(std::find(obs.begin(), obs.end(), kEqualsToken), obs.end());
  }
}

TEST(Env, NoisyResponderIsDeterministic) {
  EnvConfig cfg;
  cfg.responder_noise = 1.0;
  const SlotEnv env(cfg);
  const auto task = env.sample_task(4);
  const auto spec = env.spec_of(task);
  const auto a = env.step(task, 1, task.initial_observation(), TokenSeq{"Q:color"});
  EXPECT_NE(a.response[2], spec.slots[0].second);
  EXPECT_EQ(a.response, env.step(task, 1, task.initial_observation(), TokenSeq{"Q:color"}).response);
}

TEST(HiddenInfoGuard, CountsReads) {
  const SlotEnv env{EnvConfig{}};
  const auto task = env.sample_task(1);
  const auto before = hidden_info_reads();
  (void)task.training_time_info();
  EXPECT_EQ(hidden_info_reads(), before + 1);
}

TEST(TinyMdp, EnumerationUniformHorizonOne) {
  TinyMDP m;
  m.horizon = 1;
  m.n_hidden = 1;
  m.n_actions = 2;
  m.obs_layer = {0};
  m.transitions.assign(2, {TinyMDP::Outcome{-1, 1.0}});
  m.rewards = {0.0, 1.0};
  m.initial = {{0, 0, 1.0}};
  m.validate();
  const auto trajs = enumerate_trajectories(m, make_tiny_policy(m));
  ASSERT_EQ(trajs.size(), 2U);
  for (const auto& t : trajs) EXPECT_DOUBLE_EQ(t.prob, 0.5);
}

TEST(TinyMdp, DeterministicPolicySingleTrajectory) {
  TinyMDP m;
  m.horizon = 1;
  m.n_hidden = 1;
  m.n_actions = 2;
  m.obs_layer = {0};
  m.transitions.assign(2, {TinyMDP::Outcome{-1, 1.0}});
  m.rewards = {0.0, 1.0};
  m.initial = {{0, 0, 1.0}};
  auto pol = make_tiny_policy(m);
  pol.mutable_param({pol.context_key(TinyMDP::prompt(0)), 0, 1}) = 800.0;
  const auto trajs = enumerate_trajectories(m, pol);
  ASSERT_EQ(trajs.size(), 1U);
  EXPECT_EQ(trajs[0].prob, 1.0);
  EXPECT_EQ(trajs[0].actions, std::vector<int>{1});
}

TEST(TinyMdp, RandomMdpProbabilitiesSumToOne) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto m = random_tiny_mdp(s);
    EXPECT_TRUE(m.deterministic());
    const auto trajs = enumerate_trajectories(m, random_tiny_policy(m, s + 100));
    double total = 0.0;
    for (const auto& t : trajs) {
      total += t.prob;
      // Consistency with the transition table.
      for (std::size_t k = 0; k + 1 < t.obs.size(); ++k)
        EXPECT_EQ(m.transition(t.obs[k], t.actions[k], t.hidden).front().next_obs, t.obs[k + 1]);
    }
    EXPECT_NEAR(total, 1.0, 1e-10);
  }
}

TEST(TinyMdp, OverflowCap) {
  const auto m = random_tiny_mdp(1);
  EXPECT_THROW(enumerate_trajectories(m, make_tiny_policy(m), 3), EnumerationOverflow);
}

TEST(TinyMdp, CounterexampleIsStochastic) {
  const auto m = stochastic_counterexample_mdp();
  EXPECT_NO_THROW(m.validate());
  EXPECT_FALSE(m.deterministic());
}

}  // namespace
}  // namespace sweet
