#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <unistd.h>

#include "helpers.hpp"
#include "sweet/actor.hpp"

namespace sweet {
namespace {

using testing::one_turn;

const Vocab kVocab({"a", "b", "c", kEndToken});
const TokenSeq kObs{"TASK", "o"};

std::vector<TokenSeq> singletons(std::initializer_list<const char*> names) {
  std::vector<TokenSeq> out;
  for (auto n : names) out.push_back({n});
  return out;
}

TEST(GenerateCandidates, CountAndPreconditions) {
  const auto actor = PolicyModel::linear(kVocab);
  Rng rng(1);
  EXPECT_EQ(generate_candidates(actor, kObs, 16, 4, rng).size(), 16U);
  EXPECT_THROW(generate_candidates(actor, kObs, 1, 4, rng), PreconditionError);
}

TEST(GenerateCandidates, DeterministicActorRepeats) {
  auto actor = PolicyModel::tabular(kVocab);
  const auto key = actor.context_key(kObs, {});
  actor.mutable_param({key, 0, 1}) = 80.0;
  Rng rng(2);
  for (const auto& c : generate_candidates(actor, kObs, 8, 1, rng)) EXPECT_EQ(c, TokenSeq{"b"});
}

TEST(GenerateCandidates, CollisionProbabilityOfTwoUniformDraws) {
  const auto actor = PolicyModel::linear(kVocab);
  Rng rng(3);
  int distinct = 0;
  const int trials = 10000;
  for (int i = 0; i < trials; ++i) {
    const auto c = generate_candidates(actor, kObs, 2, 1, rng);
    distinct += c[0] != c[1];
  }
  // Exact: 1 − Σ_v (1/4)^2 = 3/4.
  EXPECT_NEAR(static_cast<double>(distinct) / trials, 1.0 - 4 * 0.0625, 0.02);
}

TEST(RankAndPair, QuantileSplitOfFour) {
  const auto cands = singletons({"a", "b", "c", kEndToken.c_str()});
  const std::vector<double> scores{3, 2, 1, 0};
  std::set<double> chosen, rejected;
  for (std::uint64_t s = 0; s < 200; ++s) {
    Rng rng(s);
    const auto p = rank_and_pair(cands, scores, kObs, rng);
    ASSERT_TRUE(p.has_value());
    chosen.insert(p->chosen_score);
    rejected.insert(p->rejected_score);
    EXPECT_GE(p->chosen_score, p->rejected_score);
    EXPECT_EQ(p->observation, kObs);
  }
  EXPECT_EQ(chosen, (std::set<double>{3, 2}));
  EXPECT_EQ(rejected, (std::set<double>{1, 0}));
}

TEST(RankAndPair, OddCountPutsMiddleInBottomHalf) {
  const auto cands = singletons({"a", "b", "c", kEndToken.c_str(), "a"});
  const std::vector<double> scores{4, 3, 2, 1, 0};
  std::set<double> chosen, rejected;
  for (std::uint64_t s = 0; s < 300; ++s) {
    Rng rng(s);
    const auto p = rank_and_pair(cands, scores, kObs, rng);
    chosen.insert(p->chosen_score);
    rejected.insert(p->rejected_score);
  }
  EXPECT_EQ(chosen, (std::set<double>{4, 3}));
  EXPECT_EQ(rejected, (std::set<double>{2, 1, 0}));
}

TEST(RankAndPair, TwoCandidates) {
  const auto cands = singletons({"a", "b"});
  const std::vector<double> scores{-1.0, 5.0};
  Rng rng(0);
  const auto p = rank_and_pair(cands, scores, kObs, rng);
  EXPECT_EQ(p->chosen, TokenSeq{"b"});
  EXPECT_EQ(p->rejected, TokenSeq{"a"});
}

TEST(RankAndPair, TiedScoresAndIdenticalCandidates) {
  const auto cands = singletons({"a", "b", "c", kEndToken.c_str()});
  const std::vector<double> zeros(4, 0.0);
  Rng rng(4);
  const auto actor = PolicyModel::linear(kVocab);
  std::set<TokenSeq> seen;
  for (int i = 0; i < 100; ++i) {
    const auto p = rank_and_pair(cands, zeros, kObs, rng);
    EXPECT_EQ(p->chosen_score, p->rejected_score);
    EXPECT_NEAR(dpo_loss(actor, actor, *p, 0.1), std::log(2.0), 1e-12);
    seen.insert(p->chosen);
  }
  // Random tie-break reaches every candidate.
  EXPECT_EQ(seen.size(), 4U);
  const auto same = singletons({"a", "a", "a"});
  EXPECT_FALSE(rank_and_pair(same, std::vector<double>{1, 2, 3}, kObs, rng).has_value());
}

TurnPreference pref_of(TokenSeq chosen, TokenSeq rejected) {
  TurnPreference p;
  p.observation = kObs;
  p.chosen = std::move(chosen);
  p.rejected = std::move(rejected);
  return p;
}

TEST(DpoLoss, ReferenceEqualsActorGivesLn2) {
  Rng rng(5);
  auto actor = PolicyModel::linear(kVocab);
  for (std::size_t f = 0; f < 64; ++f)
    for (std::size_t t = 0; t < 4; ++t) actor.mutable_param({"", static_cast<std::uint32_t>(f * 101), t}) = rng.normal();
  EXPECT_NEAR(dpo_loss(actor, actor, pref_of({"a", "b"}, {"c"}), 0.1), std::log(2.0), 1e-12);
  EXPECT_THROW(dpo_loss(actor, actor, pref_of({"a"}, {"c"}), 0.0), PreconditionError);
}

TEST(DpoLoss, SaturatedMargin) {
  auto actor = PolicyModel::tabular(kVocab);
  const auto ref = PolicyModel::tabular(kVocab);
  const auto key = actor.context_key(kObs, {});
  actor.mutable_param({key, 0, 0}) = 300.0;
  EXPECT_LT(dpo_loss(actor, ref, pref_of({"a"}, {"b"}), 0.1), 1e-6);
}

TEST(DpoLoss, KnownMargin) {
  // One shared row with logit s on "a": log-ratio(a) − log-ratio(b) = s.
  auto actor = PolicyModel::tabular(kVocab);
  const auto ref = PolicyModel::tabular(kVocab);
  actor.mutable_param({actor.context_key(kObs, {}), 0, 0}) = 1.0;
  const auto pref = pref_of({"a"}, {"b"});
  EXPECT_NEAR(dpo_margin(actor, ref, pref, 0.1), 0.1, 1e-12);
  EXPECT_NEAR(dpo_loss(actor, ref, pref, 0.1), 0.644397, 1e-6);
}

double fd_check(PolicyModel& actor, const std::function<double()>& loss, const Gradient& g) {
  const double eps = 1e-5;
  double worst = 0.0;
  for (const auto& key : g.support()) {
    if (std::abs(g.at(key)) < 1e-7) continue;
    double& w = actor.mutable_param(key);
    const double w0 = w;
    w = w0 + eps;
    const double up = loss();
    w = w0 - eps;
    const double down = loss();
    w = w0;
    const double fd = (up - down) / (2 * eps);
    worst = std::max(worst, std::abs(fd - g.at(key)) / std::max({std::abs(fd), std::abs(g.at(key)), 1e-8}));
  }
  return worst;
}

void randomize_rows(PolicyModel& m, const TokenSeq& prompt, const std::vector<TokenSeq>& prefixes, Rng& rng) {
  for (const auto& p : prefixes) {
    const auto key = m.context_key(prompt, p);
    for (std::size_t i = 0; i < kVocab.size(); ++i) m.mutable_param({key, 0, i}) = rng.normal();
  }
}

TEST(DpoLoss, GradientMatchesFiniteDifferences) {
  Rng rng(6);
  auto actor = PolicyModel::tabular(kVocab);
  auto ref = PolicyModel::tabular(kVocab);
  const std::vector<TokenSeq> prefixes{{}, {"a"}, {"a", "b"}, {"c"}};
  randomize_rows(actor, kObs, prefixes, rng);
  randomize_rows(ref, kObs, prefixes, rng);
  const auto pref = pref_of({"a", "b", kEndToken}, {"c", kEndToken});
  Gradient g;
  accumulate_dpo_grad(actor, ref, pref, 0.1, 1.0, g);
  EXPECT_LT(fd_check(actor, [&] { return dpo_loss(actor, ref, pref, 0.1); }, g), 1e-4);
}

TEST(DpoLoss, SmallStepIncreasesMargin) {
  Rng rng(7);
  auto actor = PolicyModel::tabular(kVocab);
  randomize_rows(actor, kObs, {{}, {"a"}}, rng);
  const auto ref = actor;
  const auto pref = pref_of({"a", kEndToken}, {"b"});
  Gradient g;
  accumulate_dpo_grad(actor, ref, pref, 0.1, 1.0, g);
  const double before = dpo_margin(actor, ref, pref, 0.1);
  actor.apply(g, -1e-2);
  EXPECT_GT(dpo_margin(actor, ref, pref, 0.1), before);
}

TEST(TrainSweet, ZeroEpochsLeavesActorBitExact) {
  const SlotEnv env{EnvConfig{}};
  const auto data = testing::heuristic_dataset(env, 5, 2, 1);
  auto actor = PolicyModel::linear(env.action_vocab());
  const auto before = actor;
  CandidateScorer scorer = [](auto, auto, const std::string&) { return 0.0; };
  ActorOptConfig opt;
  opt.epochs = 0;
  const auto rep = train_actor_sweet(actor, before, scorer, data.trajectories, opt);
  EXPECT_EQ(rep.steps, 0U);
  EXPECT_EQ(actor.fingerprint(), before.fingerprint());
}

TEST(TrainSweet, ReportCountsEveryLoggedTurn) {
  const SlotEnv env{EnvConfig{}};
  const auto data = testing::heuristic_dataset(env, 6, 2, 2);
  std::size_t turns = 0;
  for (const auto& t : data.trajectories) turns += t.turns().size();
  auto actor = PolicyModel::linear(env.action_vocab());
  const auto ref = actor;
  CandidateScorer scorer = [](std::span<const Token>, std::span<const Token> a, const std::string&) {
    return -static_cast<double>(a.size());
  };
  ActorOptConfig opt;
  opt.max_action_len = env.config().action_max_len();
  const auto rep = train_actor_sweet(actor, ref, scorer, data.trajectories, opt);
  EXPECT_EQ(rep.preferences + rep.skipped_turns, turns);
  EXPECT_GT(rep.steps, 0U);
  EXPECT_GE(rep.mean_score_gap, 0.0);
}

TEST(AccessGuard, ActorTrainingNeverReadsHiddenInfo) {
  const SlotEnv env{EnvConfig{}};
  const auto data = testing::heuristic_dataset(env, 10, 4, 3);
  const auto pairs = make_trajectory_pairs(data.trajectories, {0.0, 4, 0});
  ASSERT_FALSE(pairs.empty());
  const HiddenInfoLookup lookup = [&](const std::string& id) -> const TokenSeq& { return data.c(id); };
  const CriticModel critic(PolicyModel::linear(env.action_vocab()));
  const auto ref = PolicyModel::linear(env.action_vocab());
  ActorOptConfig opt;
  opt.max_action_len = env.config().action_max_len();
  const auto reads = hidden_info_reads();
  auto a1 = ref;
  train_actor_sweet(a1, ref, critic_scorer(critic, lookup), data.trajectories, opt);
  auto a2 = ref;
  train_multiturn_dpo(a2, ref, pairs, opt);
  auto a3 = ref;
  if (std::any_of(data.trajectories.begin(), data.trajectories.end(),
                  [](const Trajectory& t) { return t.cumulative_reward() >= 1.0; }))
    train_rejection_ft(a3, data.trajectories, 1.0, opt);
  EXPECT_EQ(hidden_info_reads(), reads);
}

TEST(RejectionFt, ThresholdAboveAllRewardsThrows) {
  const std::vector<Trajectory> d{one_turn("t", kObs, {"a"}, 1.0)};
  auto actor = PolicyModel::tabular(kVocab);
  EXPECT_THROW(train_rejection_ft(actor, d, 2.0, ActorOptConfig{}), PreconditionError);
}

TEST(RejectionFt, ConvergesToTheSuccessfulTrajectory) {
  const SlotEnv env{EnvConfig{}};
  const auto task = env.sample_task(4);
  Rng rng(1);
  const auto good = run_agent(env, task, scripted_optimal_agent(env.config()), rng);
  const auto bad = run_agent(env, task, heuristic_agent(env.config(), {0.9, 0.0, 0.0, 1.0, 0.0}), rng);
  ASSERT_EQ(good.cumulative_reward(), 1.0);
  auto actor = PolicyModel::tabular(env.action_vocab());
  ActorOptConfig opt;
  opt.learning_rate = 1.0;
  opt.epochs = 60;
  opt.batch_size = 4;
  const std::vector<Trajectory> d{good, bad};
  const double before = sequence_nll(actor, std::vector<Trajectory>{good});
  train_rejection_ft(actor, d, 1.0, opt);
  EXPECT_LT(sequence_nll(actor, std::vector<Trajectory>{good}), before);
  // Greedy decoding along the environment reproduces the successful episode.
  Episode ep(env, task);
  while (!ep.done()) {
    TokenSeq action;
    while (action.empty() || (action.back() != kEndToken && action.size() < env.config().action_max_len())) {
      std::size_t best = 0;
      double best_lp = -1e300;
      for (std::size_t i = 0; i < env.action_vocab().size(); ++i) {
        const double lp = actor.token_logprob(ep.observation(), action, env.action_vocab().token(i));
        if (lp > best_lp) best_lp = lp, best = i;
      }
      action.push_back(env.action_vocab().token(best));
    }
    ep.step(action);
  }
  const auto greedy = ep.finish();
  ASSERT_EQ(greedy.turns().size(), good.turns().size());
  for (std::size_t t = 0; t < good.turns().size(); ++t)
    EXPECT_EQ(greedy.turns()[t].action, good.turns()[t].action);
}

TEST(RejectionFt, OneEpochLowersNll) {
  const SlotEnv env{EnvConfig{}};
  const auto data = testing::heuristic_dataset(env, 30, 4, 9);
  std::vector<Trajectory> wins;
  for (const auto& t : data.trajectories)
    if (t.cumulative_reward() >= 1.0) wins.push_back(t);
  ASSERT_FALSE(wins.empty());
  auto actor = PolicyModel::linear(env.action_vocab());
  const double before = sequence_nll(actor, wins);
  ActorOptConfig opt;
  opt.learning_rate = 0.1;
  opt.batch_size = 32;
  opt.epochs = 1;
  train_rejection_ft(actor, data.trajectories, 1.0, opt);
  EXPECT_LT(sequence_nll(actor, wins), before);
}

TEST(MultiturnDpo, ReferenceEqualsActorGivesLn2) {
  const SlotEnv env{EnvConfig{}};
  const auto data = testing::heuristic_dataset(env, 20, 4, 10);
  const auto pairs = make_trajectory_pairs(data.trajectories, {0.0, 0, 0});
  const auto actor = PolicyModel::linear(env.action_vocab());
  for (const auto& p : pairs) EXPECT_NEAR(multiturn_dpo_loss(actor, actor, p, 0.1), std::log(2.0), 1e-12);
}

TEST(MultiturnDpo, MarginSumsTurnLogRatios) {
  Rng rng(12);
  auto actor = PolicyModel::tabular(kVocab);
  randomize_rows(actor, kObs, {{}, {"a"}}, rng);
  const auto ref = PolicyModel::tabular(kVocab);
  const TrajectoryPair pair(one_turn("t", kObs, {"a", "b"}, 1.0), one_turn("t", kObs, {"c"}, 0.0));
  auto ratio = [&](const TokenSeq& a) {
    return actor.action_logprob(kObs, a).total - ref.action_logprob(kObs, a).total;
  };
  EXPECT_NEAR(multiturn_dpo_margin(actor, ref, pair, 0.1), 0.1 * (ratio({"a", "b"}) - ratio({"c"})), 1e-12);
}

TEST(MultiturnDpo, SeparablePairAndGradient) {
  Rng rng(13);
  auto actor = PolicyModel::tabular(kVocab);
  randomize_rows(actor, kObs, {{}, {"a"}, {"c"}}, rng);
  const auto ref = PolicyModel::tabular(kVocab);
  const TrajectoryPair pair(one_turn("t", kObs, {"a", kEndToken}, 1.0),
                            one_turn("t", kObs, {"c", kEndToken}, 0.0));
  Gradient g;
  accumulate_multiturn_dpo_grad(actor, ref, pair, 0.1, 1.0, g);
  EXPECT_LT(fd_check(actor, [&] { return multiturn_dpo_loss(actor, ref, pair, 0.1); }, g), 1e-4);

  auto fresh = PolicyModel::tabular(kVocab);
  ActorOptConfig opt;
  opt.learning_rate = 1.0;
  opt.epochs = 20;
  opt.batch_size = 1;
  train_multiturn_dpo(fresh, ref, std::vector<TrajectoryPair>{pair}, opt);
  EXPECT_GT(multiturn_dpo_margin(fresh, ref, pair, 0.1), 0.0);
  EXPECT_THROW(train_multiturn_dpo(fresh, ref, std::vector<TrajectoryPair>{}, opt), PreconditionError);
}

TEST(ValueHead, ZeroInitBceIsLn2AndOutputsInUnitInterval) {
  const SlotEnv env{EnvConfig{}};
  const auto data = testing::heuristic_dataset(env, 20, 4, 14);
  const HiddenInfoLookup lookup = [&](const std::string& id) -> const TokenSeq& { return data.c(id); };
  const ValueHead head;
  EXPECT_NEAR(value_bce(head, data.trajectories, lookup), std::log(2.0), 1e-12);
  const auto& turn = data.trajectories[0].turns()[0];
  const double p = head.predict(turn.observation, turn.action, data.c(data.trajectories[0].task_id()));
  EXPECT_GT(p, 0.0);
  EXPECT_LT(p, 1.0);
}

TEST(ValueHead, AllSuccessDatasetDrivesBceToZero) {
  const SlotEnv env{EnvConfig{}};
  Rng rng(2);
  std::vector<Trajectory> wins;
  std::unordered_map<std::string, TokenSeq> hidden;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto task = env.sample_task(s);
    hidden[task.task_id()] = task.training_time_info();
    wins.push_back(run_agent(env, task, scripted_optimal_agent(env.config()), rng));
  }
  const HiddenInfoLookup lookup = [&](const std::string& id) -> const TokenSeq& { return hidden.at(id); };
  ValueHead head;
  const auto rep = train_value_head(head, wins, lookup, OptConfig{0.5, 100, 8, 0.0, 0});
  EXPECT_LT(rep.final_bce, 0.05);
  EXPECT_LT(rep.final_bce, rep.initial_bce);
}

TEST(ValueHead, HeldOutBceBeatsChance) {
  const SlotEnv env{EnvConfig{}};
  const auto train = testing::heuristic_dataset(env, 150, 8, 15);
  const auto test = testing::heuristic_dataset(env, 50, 8, 16);
  const HiddenInfoLookup tr = [&](const std::string& id) -> const TokenSeq& { return train.c(id); };
  const HiddenInfoLookup te = [&](const std::string& id) -> const TokenSeq& { return test.c(id); };
  ValueHead head;
  train_value_head(head, train.trajectories, tr, OptConfig{0.5, 4, 8, 0.0, 1});
  EXPECT_LT(value_bce(head, test.trajectories, te), std::log(2.0));
}

TEST(ValueHead, GradientMatchesFiniteDifferences) {
  const SlotEnv env{EnvConfig{}};
  const auto data = testing::heuristic_dataset(env, 6, 3, 17);
  const HiddenInfoLookup lookup = [&](const std::string& id) -> const TokenSeq& { return data.c(id); };
  FeatureConfig fc;
  fc.width = 256;
  ValueHead head(fc);
  Rng rng(3);
  for (auto& w : head.weights()) w = 0.3 * rng.normal();
  const auto g = value_bce_grad(head, data.trajectories, lookup);
  double worst = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (std::abs(g[i]) < 1e-6) continue;
    const double w0 = head.weights()[i];
    head.weights()[i] = w0 + 1e-5;
    const double up = value_bce(head, data.trajectories, lookup);
    head.weights()[i] = w0 - 1e-5;
    const double down = value_bce(head, data.trajectories, lookup);
    head.weights()[i] = w0;
    const double fd = (up - down) / 2e-5;
    worst = std::max(worst, std::abs(fd - g[i]) / std::max({std::abs(fd), std::abs(g[i]), 1e-8}));
  }
  EXPECT_LT(worst, 1e-4);
}

}  // namespace
}  // namespace sweet
