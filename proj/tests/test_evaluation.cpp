#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <map>
#include <unistd.h>

#include "helpers.hpp"
#include "sweet/evaluation.hpp"
#include "sweet/theory.hpp"

namespace sweet {
namespace {

using testing::one_turn;

TEST(Summarize, ScriptedAgentAlwaysSucceeds) {
  const SlotEnv env{EnvConfig{}};
  Rng rng(1);
  std::vector<Trajectory> eps;
  for (std::uint64_t s = 0; s < 50; ++s)
    eps.push_back(run_agent(env, env.sample_task(s), scripted_optimal_agent(env.config()), rng));
  const auto r = summarize_episodes(eps);
  EXPECT_EQ(r.success_rate, 1.0);
  EXPECT_EQ(r.stderr_success, 0.0);
  EXPECT_EQ(r.episodes, 50U);
}

TEST(Summarize, BinomialStderrAndMeans) {
  const std::vector<Trajectory> eps{one_turn("a", {"o"}, {"x"}, 1.0), one_turn("b", {"o"}, {"x", "y"}, 1.0),
                                    one_turn("c", {"o"}, {"x"}, 1.0), one_turn("d", {"o"}, {"x", "y", "z"}, 0.0)};
  const auto r = summarize_episodes(eps);
  EXPECT_DOUBLE_EQ(r.success_rate, 0.75);
  EXPECT_NEAR(r.stderr_success, std::sqrt(0.75 * 0.25 / 4), 1e-12);
  EXPECT_DOUBLE_EQ(r.mean_action_length, 7.0 / 4);
  EXPECT_DOUBLE_EQ(r.mean_turns, 1.0);
}

TEST(Summarize, BinaryRewardEqualsSuccessAndFractionDominates) {
  EnvConfig bin;
  EnvConfig frac;
  frac.reward_mode = RewardMode::kFractionPassed;
  for (const auto& cfg : {bin, frac}) {
    const SlotEnv env{cfg};
    const auto data = testing::heuristic_dataset(env, 60, 4, 2);
    const auto r = summarize_episodes(data.trajectories);
    if (cfg.reward_mode == RewardMode::kBinaryAllTests)
      EXPECT_DOUBLE_EQ(r.mean_reward, r.success_rate);
    else
      EXPECT_GE(r.mean_reward, r.success_rate);
  }
}

TEST(EvalSuccess, UniformActorRarelySucceeds) {
  const SlotEnv env{EnvConfig{}};
  std::vector<Task> tasks;
  for (std::uint64_t s = 0; s < 20; ++s) tasks.push_back(env.sample_task(s));
  const auto actor = PolicyModel::linear(env.action_vocab());
  const auto r = eval_success(actor, env, tasks, 3, 200);
  EXPECT_LT(r.success_rate, 0.05);
  EXPECT_EQ(r.episodes, 200U);
}

TEST(EvalSuccess, JobsDoNotChangeResults) {
  const SlotEnv env{EnvConfig{}};
  std::vector<Task> tasks;
  for (std::uint64_t s = 0; s < 10; ++s) tasks.push_back(env.sample_task(s));
  SeedActorConfig sc;
  sc.pretrain_episodes = 300;
  sc.epochs = 2;
  sc.features.width = 4096;
  const auto actor = make_seed_actor(env, sc, 5);
  const auto a = eval_success(actor, env, tasks, 4, 120, 1);
  const auto b = eval_success(actor, env, tasks, 4, 120, 3);
  EXPECT_EQ(a.success_rate, b.success_rate);
  EXPECT_EQ(a.mean_action_length, b.mean_action_length);
}

TEST(BestOfN, SingleCandidateReproducesPlainRollout) {
  const SlotEnv env{EnvConfig{}};
  const auto task = env.sample_task(9);
  Rng wrng(1);
  auto actor = PolicyModel::linear(env.action_vocab());
  for (std::uint32_t f = 0; f < 2000; ++f)
    for (std::size_t t = 0; t < env.action_vocab().size(); ++t) actor.mutable_param({"", f, t}) = wrng.normal();
  Rng a(42), b(42), sel(7);
  const auto scorer = Scorer::random();
  const BestOfN bon{&scorer, 1, &sel, std::nullopt};
  EXPECT_EQ(run_episode(actor, env, task, a), run_episode(actor, env, task, b, &bon));
}

TEST(BestOfN, RandomScorerIsUniform) {
  const std::vector<TokenSeq> cands{{"a"}, {"b"}, {"c"}, {"d"}};
  const auto scorer = Scorer::random();
  EXPECT_FALSE(scorer.needs_hidden_info());
  Rng rng(3);
  std::map<std::size_t, int> counts;
  const int trials = 10000;
  for (int i = 0; i < trials; ++i) ++counts[best_of_n_select(scorer, cands, TokenSeq{"o"}, {}, rng)];
  for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(counts[k] / static_cast<double>(trials), 0.25, 0.02);
}

TEST(BestOfN, FreshCriticTiesAreBrokenUniformly) {
  const Vocab v({"a", "b", kEndToken});
  const CriticModel critic(PolicyModel::linear(v));
  const auto scorer = Scorer::critic(critic);
  EXPECT_EQ(scorer.kind(), ScorerKind::kCriticAdvantage);
  EXPECT_TRUE(scorer.needs_hidden_info());
  const std::vector<TokenSeq> cands{{"a"}, {"b"}};
  Rng rng(5);
  int first = 0;
  for (int i = 0; i < 4000; ++i) first += best_of_n_select(scorer, cands, TokenSeq{"o"}, TokenSeq{"c"}, rng) == 0;
  EXPECT_NEAR(first / 4000.0, 0.5, 0.03);
}

TEST(BestOfN, NoHiddenCriticVariantDoesNotReadC) {
  const Vocab v({"a", "b", kEndToken});
  const CriticModel critic(PolicyModel::linear(v), 0.1, true, false);
  EXPECT_EQ(Scorer::critic(critic).kind(), ScorerKind::kCriticNoHiddenInfo);
  EXPECT_FALSE(Scorer::critic(critic).needs_hidden_info());
}

TEST(BestOfN, OraclePicksLargestExactAdvantage) {
  const auto mdp = random_tiny_mdp(11, {2, 2, 3, 2});
  const auto policy = random_tiny_policy(mdp, 4);
  const auto tables = exact_qva(mdp, policy);
  const auto scorer = Scorer::oracle(mdp, tables);
  std::vector<TokenSeq> cands;
  for (int a = 0; a < mdp.n_actions; ++a) cands.push_back({"a" + std::to_string(a)});
  Rng rng(1);
  for (int o = 0; o < mdp.n_obs(); ++o)
    for (int c = 0; c < mdp.n_hidden; ++c) {
      int best = 0;
      for (int a = 1; a < mdp.n_actions; ++a)
        if (tables.A(o, a, c) > tables.A(o, best, c)) best = a;
      const auto pick = best_of_n_select(scorer, cands, TinyMDP::prompt(o), TokenSeq{"c" + std::to_string(c)}, rng);
      EXPECT_EQ(pick, static_cast<std::size_t>(best)) << "o=" << o << " c=" << c;
    }
}

TEST(TinyBestOfN, TwoActionLawMatchesClosedForm) {
  // With two actions, the argmax action a* is chosen unless all n draws miss it.
  const auto mdp = random_tiny_mdp(3, {2, 2, 2, 2});
  const auto policy = random_tiny_policy(mdp, 8);
  const auto tables = exact_qva(mdp, policy);
  for (std::size_t n : {1U, 2U, 5U}) {
    const auto law = tiny_best_of_n_policy(mdp, policy, n);
    for (int o = 0; o < mdp.n_obs(); ++o) {
      const auto p = action_probs(policy, o);
      for (int c = 0; c < mdp.n_hidden; ++c) {
        const int star = tables.A(o, 1, c) > tables.A(o, 0, c) ? 1 : 0;
        const double expected = 1.0 - std::pow(1.0 - p[star], static_cast<double>(n));
        EXPECT_NEAR(law[o * mdp.n_hidden + c][star], expected, 1e-12);
      }
    }
  }
}

TEST(TinyBestOfN, NeverWorseThanThePolicy) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto mdp = random_tiny_mdp(s);
    const auto policy = random_tiny_policy(mdp, s + 100);
    const double base = expected_return(mdp, policy);
    EXPECT_NEAR(tiny_best_of_n_return(mdp, policy, 1), base, 1e-12);
    for (std::size_t n : {2U, 4U, 8U}) EXPECT_GE(tiny_best_of_n_return(mdp, policy, n), base - 1e-12);
  }
}

TEST(ScalingCurve, PairedStreamsMakeNEqualsOneIdentical) {
  const SlotEnv env{EnvConfig{}};
  std::vector<Task> tasks;
  for (std::uint64_t s = 0; s < 10; ++s) tasks.push_back(env.sample_task(s));
  SeedActorConfig sc;
  sc.pretrain_episodes = 300;
  sc.epochs = 2;
  sc.features.width = 4096;
  const auto actor = make_seed_actor(env, sc, 6);
  const CriticModel critic(actor);
  const ValueHead head;
  const auto s1 = Scorer::critic(critic), s2 = Scorer::random(), s3 = Scorer::value_head(head);
  const std::vector<const Scorer*> scorers{&s1, &s2, &s3};
  const std::vector<std::size_t> ns{1, 4};
  const auto curve = scaling_curve(actor, env, scorers, ns, tasks, 8, 80, 2);
  ASSERT_EQ(curve.size(), 6U);
  std::map<std::size_t, std::vector<double>> by_n;
  for (const auto& p : curve) {
    EXPECT_EQ(p.episodes, 80U);
    by_n[p.n].push_back(p.success_rate);
  }
  for (double r : by_n[1]) EXPECT_EQ(r, by_n[1][0]);
}

TEST(ScalingCurve, CsvColumns) {
  testing::TempDir dir("curve");
  const std::vector<CurvePoint> pts{{"random", 4, 0.25, 0.01, 100}};
  write_curve_csv(dir / "c.csv", pts);
  std::ifstream in(dir / "c.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "scorer,N,success_rate,stderr,episodes");
}

}  // namespace
}  // namespace sweet
