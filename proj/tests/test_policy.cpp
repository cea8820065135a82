#include <gtest/gtest.h>

#include <cmath>
#include <unistd.h>

#include "helpers.hpp"
#include "sweet/policy.hpp"

namespace sweet {
namespace {

const Vocab kVocab4({"a", "b", "c", kEndToken});
const TokenSeq kPrompt{"x", "y"};

void set_logits(PolicyModel& m, const TokenSeq& prompt, const TokenSeq& prefix,
                const std::vector<double>& z) {
  const auto key = m.context_key(prompt, prefix);
  for (std::size_t i = 0; i < z.size(); ++i) m.mutable_param({key, 0, i}) = z[i];
}

PolicyModel random_linear(std::uint64_t seed, std::size_t width = 64) {
  FeatureConfig fc;
  fc.width = width;
  auto m = PolicyModel::linear(kVocab4, fc);
  Rng rng(seed);
  for (std::size_t f = 0; f < width; ++f)
    for (std::size_t t = 0; t < kVocab4.size(); ++t) m.mutable_param({"", static_cast<std::uint32_t>(f), t}) = rng.normal();
  return m;
}

TokenSeq random_seq(Rng& rng, std::size_t len, const std::vector<Token>& alphabet) {
  TokenSeq s;
  for (std::size_t i = 0; i < len; ++i) s.push_back(alphabet[rng.below(alphabet.size())]);
  return s;
}

TEST(TokenLogprob, FreshModelIsUniform) {
  for (const auto& m : {PolicyModel::tabular(kVocab4), PolicyModel::linear(kVocab4)})
    for (const auto& t : kVocab4.tokens()) EXPECT_NEAR(m.token_logprob(kPrompt, {}, t), std::log(0.25), 1e-15);
}

TEST(TokenLogprob, SaturatedLogit) {
  auto m = PolicyModel::tabular(kVocab4);
  set_logits(m, kPrompt, {}, {50, 0, 0, 0});
  EXPECT_NEAR(m.token_logprob(kPrompt, {}, "a"), 0.0, 1e-20);
}

TEST(TokenLogprob, MatchesLogSumExpByHand) {
  const Vocab v({"a", "b", kEndToken});
  auto m = PolicyModel::tabular(v);
  set_logits(m, kPrompt, {}, {1, 2, 3});
  const double oracle = 3.0 - std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0));
  EXPECT_NEAR(m.token_logprob(kPrompt, {}, kEndToken), oracle, 1e-12);
  EXPECT_NEAR(oracle, -0.407606, 1e-6);
}

TEST(TokenLogprob, UnknownTokenThrows) {
  const auto m = PolicyModel::tabular(kVocab4);
  EXPECT_THROW(m.token_logprob(kPrompt, {}, "zzz"), PreconditionError);
}

TEST(ActionLogprob, StructuralIdentities) {
  const auto fresh = PolicyModel::linear(kVocab4);
  EXPECT_NEAR(fresh.action_logprob(kPrompt, TokenSeq{"a", "b", "c"}).total, 3 * std::log(0.25), 1e-12);
  const auto m = random_linear(3);
  EXPECT_DOUBLE_EQ(m.action_logprob(kPrompt, TokenSeq{"b"}).total, m.token_logprob(kPrompt, {}, "b"));
  Rng rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    const auto action = random_seq(rng, 1 + rng.below(5), kVocab4.tokens());
    const auto lp = m.action_logprob(kPrompt, action);
    double prod = 1.0, sum = 0.0;
    for (std::size_t l = 0; l < action.size(); ++l) {
      const double tl = m.token_logprob(kPrompt, TokenSeq(action.begin(), action.begin() + l), action[l]);
      EXPECT_DOUBLE_EQ(lp.per_token[l], tl);
      prod *= std::exp(tl);
      sum += lp.per_token[l];
    }
    EXPECT_NEAR(std::exp(lp.total), prod, 1e-10);
    EXPECT_DOUBLE_EQ(lp.total, sum);
  }
  EXPECT_THROW(m.action_logprob(kPrompt, TokenSeq{}), PreconditionError);
}

TEST(Normalization, ThousandRandomContexts) {
  const auto m = random_linear(5);
  Rng rng(6);
  const std::vector<Token> alphabet{"x", "y", "z", "w", kSeparator};
  for (int trial = 0; trial < 1000; ++trial) {
    const auto prompt = random_seq(rng, rng.below(10), alphabet);
    const auto prefix = random_seq(rng, rng.below(4), kVocab4.tokens());
    double total = 0.0;
    for (const auto& t : kVocab4.tokens()) total += std::exp(m.token_logprob(prompt, prefix, t));
    EXPECT_NEAR(total, 1.0, 1e-9);
  }
}

TEST(SampleAction, DeterministicModelIgnoresRng) {
  auto m = PolicyModel::tabular(kVocab4);
  set_logits(m, kPrompt, {}, {60, 0, 0, 0});
  set_logits(m, kPrompt, {"a"}, {0, 0, 0, 60});
  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng rng(s);
    EXPECT_EQ(m.sample_action(kPrompt, rng, 5), (TokenSeq{"a", kEndToken}));
  }
}

TEST(SampleAction, FreshFirstTokenFrequencies) {
  const auto m = PolicyModel::linear(kVocab4);
  Rng rng(123);
  std::vector<double> counts(4, 0.0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) counts[kVocab4.index_of(m.sample_action(kPrompt, rng, 1)[0])] += 1.0;
  for (double c : counts) EXPECT_NEAR(c / n, 0.25, 0.01);
}

TEST(SampleAction, MaxLenBoundsLength) {
  const auto m = PolicyModel::linear(kVocab4);
  Rng rng(1);
  for (int i = 0; i < 200; ++i) EXPECT_EQ(m.sample_action(kPrompt, rng, 1).size(), 1U);
  for (int i = 0; i < 200; ++i) {
    const auto a = m.sample_action(kPrompt, rng, 3);
    EXPECT_LE(a.size(), 3U);
    // END only ever appears last.
    for (std::size_t l = 0; l + 1 < a.size(); ++l) EXPECT_NE(a[l], kEndToken);
  }
  EXPECT_THROW(m.sample_action(kPrompt, rng, 0), PreconditionError);
}

TEST(SampleAction, SameRngStateSameSample) {
  const auto m = random_linear(2);
  Rng a(77), b(77);
  for (int i = 0; i < 50; ++i) EXPECT_EQ(m.sample_action(kPrompt, a, 5), m.sample_action(kPrompt, b, 5));
}

TEST(LogprobGrad, TabularRowsSumToZeroAndMatchIndicatorMinusSoftmax) {
  auto m = PolicyModel::tabular(kVocab4);
  set_logits(m, kPrompt, {}, {0.3, -1.0, 2.0, 0.1});
  const auto g = m.logprob_grad(kPrompt, TokenSeq{"c", "a"});
  ASSERT_EQ(g.tabular.size(), 2U);
  for (const auto& [key, row] : g.tabular) {
    double s = 0.0;
    for (double x : row) s += x;
    EXPECT_NEAR(s, 0.0, 1e-15);
  }
  const auto& row0 = g.tabular.at(m.context_key(kPrompt, {}));
  const std::vector<double> z{0.3, -1.0, 2.0, 0.1};
  const double lse = std::log(std::exp(0.3) + std::exp(-1.0) + std::exp(2.0) + std::exp(0.1));
  for (std::size_t i = 0; i < 4; ++i)
    EXPECT_NEAR(row0[i], (i == 2 ? 1.0 : 0.0) - std::exp(z[i] - lse), 1e-15);
}

TEST(LogprobGrad, SaturatedContextHasNearZeroGradient) {
  auto m = PolicyModel::tabular(kVocab4);
  set_logits(m, kPrompt, {}, {60, 0, 0, 0});
  const auto g = m.logprob_grad(kPrompt, TokenSeq{"a"});
  for (double x : g.tabular.begin()->second) EXPECT_NEAR(x, 0.0, 1e-20);
}

// Central differences on the total log-probability, written independently of the library audit.
double max_fd_rel_error(PolicyModel& m, const TokenSeq& prompt, const TokenSeq& action) {
  const auto g = m.logprob_grad(prompt, action);
  double worst = 0.0;
  const double eps = 1e-5;
  for (const auto& key : g.support()) {
    double& w = m.mutable_param(key);
    const double w0 = w;
    w = w0 + eps;
    const double up = m.action_logprob(prompt, action).total;
    w = w0 - eps;
    const double down = m.action_logprob(prompt, action).total;
    w = w0;
    const double fd = (up - down) / (2 * eps);
    const double an = g.at(key);
    worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8}));
  }
  return worst;
}

TEST(LogprobGrad, MatchesFiniteDifferences) {
  Rng rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    auto tab = PolicyModel::tabular(kVocab4);
    const auto action = random_seq(rng, 1 + rng.below(4), kVocab4.tokens());
    for (std::size_t l = 0; l < action.size(); ++l) {
      std::vector<double> z;
      for (int i = 0; i < 4; ++i) z.push_back(rng.normal());
      set_logits(tab, kPrompt, TokenSeq(action.begin(), action.begin() + l), z);
    }
    EXPECT_LT(max_fd_rel_error(tab, kPrompt, action), 1e-5);
    auto lin = random_linear(100 + trial, 32);
    EXPECT_LT(max_fd_rel_error(lin, kPrompt, action), 1e-5);
  }
}

TEST(FreezeReference, IsDeepAndImmutable) {
  auto m = random_linear(8);
  const auto ref = m.freeze_reference();
  const TokenSeq action{"a", "b"};
  EXPECT_EQ(ref->action_logprob(kPrompt, action).total, m.action_logprob(kPrompt, action).total);
  const double before = ref->action_logprob(kPrompt, action).total;
  m.apply(m.logprob_grad(kPrompt, action), 1.0);
  EXPECT_EQ(ref->action_logprob(kPrompt, action).total, before);
  EXPECT_NE(m.action_logprob(kPrompt, action).total, before);
  const auto fresh_ref = PolicyModel::linear(kVocab4).freeze_reference();
  EXPECT_NEAR(fresh_ref->token_logprob(kPrompt, {}, "a"), std::log(0.25), 1e-15);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  testing::TempDir dir("ckpt");
  auto tab = PolicyModel::tabular(kVocab4);
  set_logits(tab, kPrompt, {}, {0.1, 0.2, -0.3, 1e-17});
  for (const auto& m : {random_linear(4), tab}) {
    m.save(dir / "m.json");
    const auto back = PolicyModel::load(dir / "m.json");
    EXPECT_EQ(back, m);
    Rng rng(5);
    for (int i = 0; i < 20; ++i) {
      const auto action = random_seq(rng, 1 + rng.below(4), kVocab4.tokens());
      EXPECT_EQ(back.action_logprob(kPrompt, action).total, m.action_logprob(kPrompt, action).total);
    }
  }
}

TEST(Features, PromptSegmentsAreTagged) {
  FeatureConfig fc;
  const auto a = hash_prompt_features(TokenSeq{"x", kSeparator, "y"}, fc);
  const auto b = hash_prompt_features(TokenSeq{"y", kSeparator, "x"}, fc);
  EXPECT_NE(a, b);
  EXPECT_EQ(a, hash_prompt_features(TokenSeq{"x", kSeparator, "y"}, fc));
}

// With single-token prompts, unigram features only and one-token actions,
// every context owns one weight row, so the linear model is a relabelled
// table provided the rows do not collide.
TEST(TabularLinearAgreement, CollisionFreeFixture) {
  const std::vector<TokenSeq> prompts{{"p"}, {"q"}, {"r"}};
  FeatureConfig fc;
  fc.max_order = 1;
  fc.bias = false;
  fc.count_features = false;
  fc.prefix_features = false;
  // Search for a width where a step on one context leaves the others untouched.
  std::optional<FeatureConfig> found;
  for (std::size_t width = 4; width < 4096 && !found; ++width) {
    fc.width = width;
    bool clean = true;
    for (std::size_t i = 0; i < prompts.size() && clean; ++i) {
      auto m = PolicyModel::linear(kVocab4, fc);
      m.apply(m.logprob_grad(prompts[i], TokenSeq{"a"}), 1.0);
      for (std::size_t j = 0; j < prompts.size(); ++j)
        if (j != i) clean = clean && m.token_logprob(prompts[j], {}, "a") == std::log(0.25);
    }
    if (clean) found = fc;
  }
  ASSERT_TRUE(found.has_value());
  auto lin = PolicyModel::linear(kVocab4, *found);
  auto tab = PolicyModel::tabular(kVocab4);
  Rng rng(17);
  for (int step = 0; step < 200; ++step) {
    const auto& prompt = prompts[rng.below(prompts.size())];
    const TokenSeq action{kVocab4.token(rng.below(4))};
    const double lr = 0.1 + rng.uniform();
    lin.apply(lin.logprob_grad(prompt, action), lr);
    tab.apply(tab.logprob_grad(prompt, action), lr);
  }
  for (const auto& p : prompts)
    for (const auto& t : kVocab4.tokens())
      EXPECT_NEAR(lin.token_logprob(p, {}, t), tab.token_logprob(p, {}, t), 1e-8);
}

TEST(Gradient, AddScaleAndNorm) {
  auto m = random_linear(1);
  auto g = m.logprob_grad(kPrompt, TokenSeq{"a"});
  const double n = g.squared_norm();
  Gradient h;
  h.add(g, 2.0);
  EXPECT_NEAR(h.squared_norm(), 4 * n, 1e-12);
  h.scale(0.5);
  EXPECT_NEAR(h.squared_norm(), n, 1e-12);
}

}  // namespace
}  // namespace sweet
