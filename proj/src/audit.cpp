#include "sweet/audit.hpp"

#include <cmath>
#include <unordered_map>

#include "sweet/actor.hpp"
#include "sweet/critic.hpp"
#include "sweet/env.hpp"
#include "sweet/theory.hpp"

namespace sweet {

namespace {

// Below this magnitude the central difference is dominated by rounding
// (about ε_mach·|L|/ε ≈ 1e-11 absolute), so relative error carries no signal.
constexpr double kMinAuditedGradient = 1e-5;

struct Fixture {
  SlotEnv env{EnvConfig{}};
  FeatureConfig features;
  std::vector<Task> tasks;
  std::vector<Trajectory> trajectories;
  std::vector<TrajectoryPair> pairs;
  std::unordered_map<std::string, TokenSeq> hidden;

  explicit Fixture(std::uint64_t seed) {
    features.width = 512;
    Rng rng(derive_seed(seed, "audit-rollout"));
    const auto agent = heuristic_agent(env.config());
    for (std::size_t i = 0; i < 24; ++i) {
      tasks.push_back(env.sample_task(derive_seed(seed, "audit-task", i)));
      hidden[tasks.back().task_id()] = tasks.back().training_time_info();
      for (int k = 0; k < 6; ++k) trajectories.push_back(run_agent(env, tasks.back(), agent, rng));
    }
    pairs = make_trajectory_pairs(trajectories, PairingOptions{0.0, 1, seed});
    if (pairs.size() > 4) pairs.erase(pairs.begin() + 4, pairs.end());
    if (pairs.empty()) throw std::runtime_error("audit fixture: no trajectory pairs");
  }

  HiddenInfoLookup lookup() const {
    return [this](const std::string& id) -> const TokenSeq& { return hidden.at(id); };
  }

  PolicyModel policy() const { return PolicyModel::linear(env.action_vocab(), features); }
};

void randomize(PolicyModel& policy, const Gradient& support, Rng& rng, double scale) {
  for (const auto& key : support.support()) policy.mutable_param(key) += scale * rng.normal();
}

AuditResult audit_policy(const std::string& name, PolicyModel& policy,
                         const std::function<double()>& loss, const Gradient& analytic,
                         std::uint64_t seed) {
  const auto keys = analytic.support();
  std::vector<double*> coords;
  std::vector<double> values;
  for (const auto& k : keys) {
    if (std::abs(analytic.at(k)) < kMinAuditedGradient) continue;
    coords.push_back(&policy.mutable_param(k));
    values.push_back(analytic.at(k));
  }
  Rng rng(derive_seed(seed, "audit-coords"));
  return {name, finite_diff_audit(loss, coords, values, rng), coords.size()};
}

TurnPreference preference_from(const Fixture& f, const PolicyModel& actor, Rng& rng) {
  const auto& turn = f.trajectories.front().turns().front();
  TurnPreference pref;
  pref.observation = turn.observation;
  do {
    pref.chosen = actor.sample_action(turn.observation, rng, f.env.config().action_max_len());
    pref.rejected = actor.sample_action(turn.observation, rng, f.env.config().action_max_len());
  } while (pref.chosen == pref.rejected);
  return pref;
}

}  // namespace

AuditResult audit_bt_loss(std::uint64_t seed) {
  const Fixture f(seed);
  Rng rng(derive_seed(seed, "audit-bt"));
  auto base = f.policy();
  Gradient support;
  {
    CriticModel probe(base);
    for (const auto& p : f.pairs) accumulate_bt_grad(probe, p, f.hidden.at(p.task_id()), 1.0, support);
  }
  randomize(base, support, rng, 0.3);
  CriticModel critic(base);
  randomize(critic.pi_theta(), support, rng, 0.3);
  const auto lookup = f.lookup();
  auto loss = [&] {
    double total = 0.0;
    for (const auto& p : f.pairs) total += bt_loss(critic, p, lookup(p.task_id()));
    return total;
  };
  Gradient g;
  for (const auto& p : f.pairs) accumulate_bt_grad(critic, p, lookup(p.task_id()), 1.0, g);
  return audit_policy("bt_loss", critic.pi_theta(), loss, g, seed);
}

AuditResult audit_dpo_loss(std::uint64_t seed) {
  const Fixture f(seed);
  Rng rng(derive_seed(seed, "audit-dpo"));
  auto actor = f.policy();
  const auto pref = preference_from(f, actor, rng);
  Gradient support;
  accumulate_dpo_grad(actor, actor, pref, 0.1, 1.0, support);
  randomize(actor, support, rng, 0.5);
  const auto ref = actor;
  randomize(actor, support, rng, 0.5);
  auto loss = [&] { return dpo_loss(actor, ref, pref, 0.1); };
  Gradient g;
  accumulate_dpo_grad(actor, ref, pref, 0.1, 1.0, g);
  return audit_policy("dpo_loss", actor, loss, g, seed);
}

AuditResult audit_multiturn_dpo_loss(std::uint64_t seed) {
  const Fixture f(seed);
  Rng rng(derive_seed(seed, "audit-mtdpo"));
  auto actor = f.policy();
  const auto& pair = f.pairs.front();
  Gradient support;
  accumulate_multiturn_dpo_grad(actor, actor, pair, 0.1, 1.0, support);
  randomize(actor, support, rng, 0.5);
  const auto ref = actor;
  randomize(actor, support, rng, 0.5);
  auto loss = [&] { return multiturn_dpo_loss(actor, ref, pair, 0.1); };
  Gradient g;
  accumulate_multiturn_dpo_grad(actor, ref, pair, 0.1, 1.0, g);
  return audit_policy("multiturn_dpo_loss", actor, loss, g, seed);
}

AuditResult audit_rft_nll(std::uint64_t seed) {
  const Fixture f(seed);
  Rng rng(derive_seed(seed, "audit-rft"));
  auto actor = f.policy();
  const std::span<const Trajectory> data(f.trajectories.data(), 4);
  auto grad_of = [&](const PolicyModel& m) {
    Gradient g;
    std::size_t tokens = 0;
    for (const auto& t : data)
      for (const auto& turn : t.turns()) tokens += turn.action.size();
    for (const auto& t : data)
      for (const auto& turn : t.turns())
        m.accumulate_logprob_grad(m.encode(turn.observation), turn.action,
                                  -1.0 / static_cast<double>(tokens), g);
    return g;
  };
  randomize(actor, grad_of(actor), rng, 0.5);
  auto loss = [&] { return sequence_nll(actor, data); };
  return audit_policy("rft_nll", actor, loss, grad_of(actor), seed);
}

AuditResult audit_value_bce(std::uint64_t seed) {
  const Fixture f(seed);
  Rng rng(derive_seed(seed, "audit-value"));
  ValueHead head(f.features);
  const std::span<const Trajectory> data(f.trajectories.data(), 12);
  const auto lookup = f.lookup();
  auto support = value_bce_grad(head, data, lookup);
  for (std::size_t i = 0; i < support.size(); ++i)
    if (support[i] != 0.0) head.weights()[i] = 0.5 * rng.normal();
  const auto g = value_bce_grad(head, data, lookup);
  std::vector<double*> coords;
  std::vector<double> values;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (support[i] != 0.0 && std::abs(g[i]) >= kMinAuditedGradient) {
      coords.push_back(&head.weights()[i]);
      values.push_back(g[i]);
    }
  auto loss = [&] { return value_bce(head, data, lookup); };
  Rng crng(derive_seed(seed, "audit-coords"));
  return {"value_bce", finite_diff_audit(loss, coords, values, crng), coords.size()};
}

std::vector<AuditResult> run_gradient_audits(std::uint64_t seed) {
  return {audit_bt_loss(seed), audit_dpo_loss(seed), audit_multiturn_dpo_loss(seed),
          audit_rft_nll(seed), audit_value_bce(seed)};
}

}  // namespace sweet
