#include "sweet/actor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace sweet {

std::vector<TokenSeq> generate_candidates(const PolicyModel& actor,
                                          std::span<const Token> observation, std::size_t n,
                                          std::size_t max_len, Rng& rng) {
  if (n < 2) throw PreconditionError("generate_candidates: need at least 2 candidates");
  const auto enc = actor.encode(observation);
  std::vector<TokenSeq> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(actor.sample_action(enc, rng, max_len));
  return out;
}

std::optional<TurnPreference> rank_and_pair(std::span<const TokenSeq> candidates,
                                            std::span<const double> scores,
                                            std::span<const Token> observation, Rng& rng) {
  if (candidates.size() < 2) throw PreconditionError("rank_and_pair: need at least 2 candidates");
  if (scores.size() != candidates.size())
    throw PreconditionError("rank_and_pair: one score per candidate required");
  if (std::all_of(candidates.begin(), candidates.end(),
                  [&](const TokenSeq& c) { return c == candidates.front(); }))
    return std::nullopt;

  std::vector<std::pair<std::size_t, std::uint64_t>> order;
  for (std::size_t i = 0; i < candidates.size(); ++i) order.emplace_back(i, rng.next());
  std::sort(order.begin(), order.end(), [&](const auto& a, const auto& b) {
    if (scores[a.first] != scores[b.first]) return scores[a.first] > scores[b.first];
    return a.second < b.second;
  });
  const std::size_t top = candidates.size() / 2;
  const std::size_t chosen = order[rng.below(top)].first;
  const std::size_t rejected = order[top + rng.below(candidates.size() - top)].first;
  TurnPreference pref;
  pref.observation.assign(observation.begin(), observation.end());
  pref.chosen = candidates[chosen];
  pref.rejected = candidates[rejected];
  pref.chosen_score = scores[chosen];
  pref.rejected_score = scores[rejected];
  return pref;
}

std::optional<TurnPreference> rank_and_pair(std::span<const TokenSeq> candidates,
                                            const CriticModel& critic,
                                            std::span<const Token> observation,
                                            std::span<const Token> hidden_info, Rng& rng) {
  const auto prompt = critic.prompt(observation, hidden_info);
  std::vector<double> scores;
  for (const auto& c : candidates) scores.push_back(critic.advantage_for_prompt(prompt, c));
  return rank_and_pair(candidates, scores, observation, rng);
}

double dpo_margin(const PolicyModel& actor, const PolicyModel& pi_ref, const TurnPreference& pref,
                  double beta_prime) {
  if (!(beta_prime > 0.0)) throw PreconditionError("dpo: beta' must be positive");
  const auto enc = actor.encode(pref.observation);
  const auto enc_ref = pi_ref.encode(pref.observation);
  const double chosen =
      actor.action_logprob(enc, pref.chosen).total - pi_ref.action_logprob(enc_ref, pref.chosen).total;
  const double rejected = actor.action_logprob(enc, pref.rejected).total -
                          pi_ref.action_logprob(enc_ref, pref.rejected).total;
  return beta_prime * chosen - beta_prime * rejected;
}

double dpo_loss(const PolicyModel& actor, const PolicyModel& pi_ref, const TurnPreference& pref,
                double beta_prime) {
  return preference_loss(dpo_margin(actor, pi_ref, pref, beta_prime));
}

double accumulate_dpo_grad(const PolicyModel& actor, const PolicyModel& pi_ref,
                           const TurnPreference& pref, double beta_prime, double scale,
                           Gradient& out) {
  const double margin = dpo_margin(actor, pi_ref, pref, beta_prime);
  const double dm = scale * preference_loss_grad(margin) * beta_prime;
  const auto enc = actor.encode(pref.observation);
  actor.accumulate_logprob_grad(enc, pref.chosen, dm, out);
  actor.accumulate_logprob_grad(enc, pref.rejected, -dm, out);
  return preference_loss(margin);
}

CandidateScorer critic_scorer(const CriticModel& critic, HiddenInfoLookup hidden_info) {
  return [&critic, hidden_info = std::move(hidden_info)](
             std::span<const Token> obs, std::span<const Token> action, const std::string& id) {
    return critic.advantage(obs, action, hidden_info(id));
  };
}

namespace {

void check_finite(double objective, const Gradient& grad, const char* where, std::size_t step) {
  if (!std::isfinite(objective) || !std::isfinite(grad.squared_norm())) {
    std::ostringstream msg;
    msg << where << ": non-finite loss at step " << step << " (objective=" << objective << ")";
    throw NonFiniteError(msg.str());
  }
}

struct LoggedTurn {
  const Trajectory* traj;
  const TurnRecord* turn;
};

}  // namespace

ActorReport train_actor_sweet(PolicyModel& actor, const PolicyModel& pi_ref,
                              const CandidateScorer& scorer,
                              std::span<const Trajectory> offline, const ActorOptConfig& opt) {
  if (opt.batch_size == 0) throw PreconditionError("train_actor_sweet: batch_size must be >= 1");
  std::vector<LoggedTurn> turns;
  for (const auto& traj : offline)
    for (const auto& turn : traj.turns()) turns.push_back({&traj, &turn});

  ActorReport report;
  Rng rng(derive_seed(opt.seed, "train-actor-sweet"));
  double margin_total = 0.0, gap_total = 0.0;
  std::vector<TurnPreference> batch;

  auto flush = [&] {
    if (batch.empty()) return;
    const double inv = 1.0 / static_cast<double>(batch.size());
    Gradient grad;
    double loss = 0.0, nll = 0.0;
    std::size_t tokens = 0;
    Gradient nll_grad;
    for (const auto& pref : batch) {
      margin_total += dpo_margin(actor, pi_ref, pref, opt.beta);
      loss += accumulate_dpo_grad(actor, pi_ref, pref, opt.beta, inv, grad);
      if (opt.nll_coef > 0.0) {
        const auto enc = actor.encode(pref.observation);
        nll -= actor.action_logprob(enc, pref.chosen).total;
        tokens += pref.chosen.size();
        actor.accumulate_logprob_grad(enc, pref.chosen, -1.0, nll_grad);
      }
    }
    double objective = loss * inv;
    if (tokens > 0) {
      objective += opt.nll_coef * nll / static_cast<double>(tokens);
      grad.add(nll_grad, opt.nll_coef / static_cast<double>(tokens));
    }
    check_finite(objective, grad, "train_actor_sweet", report.steps);
    actor.apply(grad, -opt.learning_rate);
    report.batch_losses.push_back(objective);
    ++report.steps;
    batch.clear();
  };

  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    rng.shuffle(turns);
    const std::size_t first_batch = report.batch_losses.size();
    for (const auto& logged : turns) {
      const auto& obs = logged.turn->observation;
      Rng turn_rng = rng.split(report.preferences + report.skipped_turns);
      const auto candidates =
          generate_candidates(actor, obs, opt.n_candidates, opt.max_action_len, turn_rng);
      std::vector<double> scores;
      scores.reserve(candidates.size());
      for (const auto& c : candidates) scores.push_back(scorer(obs, c, logged.traj->task_id()));
      auto pref = rank_and_pair(candidates, scores, obs, turn_rng);
      if (!pref) {
        ++report.skipped_turns;
        continue;
      }
      gap_total += pref->chosen_score - pref->rejected_score;
      ++report.preferences;
      batch.push_back(std::move(*pref));
      if (batch.size() == opt.batch_size) flush();
    }
    flush();
    const std::size_t n = report.batch_losses.size() - first_batch;
    double total = 0.0;
    for (std::size_t i = first_batch; i < report.batch_losses.size(); ++i)
      total += report.batch_losses[i];
    report.epoch_losses.push_back(n ? total / static_cast<double>(n) : 0.0);
  }
  if (report.preferences > 0) {
    report.mean_margin = margin_total / static_cast<double>(report.preferences);
    report.mean_score_gap = gap_total / static_cast<double>(report.preferences);
  }
  return report;
}

double sequence_nll(const PolicyModel& actor, std::span<const Trajectory> trajectories) {
  double nll = 0.0;
  std::size_t tokens = 0;
  for (const auto& traj : trajectories) {
    for (const auto& turn : traj.turns()) {
      nll -= actor.action_logprob(turn.observation, turn.action).total;
      tokens += turn.action.size();
    }
  }
  return tokens ? nll / static_cast<double>(tokens) : 0.0;
}

ActorReport train_rejection_ft(PolicyModel& actor, std::span<const Trajectory> trajectories,
                               double threshold, const ActorOptConfig& opt) {
  if (opt.batch_size == 0) throw PreconditionError("train_rejection_ft: batch_size must be >= 1");
  std::vector<const Trajectory*> kept;
  for (const auto& t : trajectories)
    if (t.cumulative_reward() >= threshold) kept.push_back(&t);
  if (kept.empty())
    throw PreconditionError("train_rejection_ft: no trajectory reaches the reward threshold");

  ActorReport report;
  Rng rng(derive_seed(opt.seed, "train-rft"));
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    rng.shuffle(kept);
    double epoch_total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < kept.size(); start += opt.batch_size) {
      const std::size_t end = std::min(kept.size(), start + opt.batch_size);
      Gradient grad;
      double nll = 0.0;
      std::size_t tokens = 0;
      for (std::size_t k = start; k < end; ++k) {
        for (const auto& turn : kept[k]->turns()) {
          const auto enc = actor.encode(turn.observation);
          nll -= actor.action_logprob(enc, turn.action).total;
          tokens += turn.action.size();
          actor.accumulate_logprob_grad(enc, turn.action, -1.0, grad);
        }
      }
      grad.scale(1.0 / static_cast<double>(tokens));
      const double objective = nll / static_cast<double>(tokens);
      check_finite(objective, grad, "train_rejection_ft", report.steps);
      actor.apply(grad, -opt.learning_rate);
      report.batch_losses.push_back(objective);
      epoch_total += objective;
      ++batches;
      ++report.steps;
    }
    report.epoch_losses.push_back(epoch_total / static_cast<double>(batches));
  }
  report.preferences = kept.size();
  return report;
}

namespace {

double trajectory_log_ratio(const PolicyModel& actor, const PolicyModel& pi_ref,
                            const Trajectory& traj) {
  double sum = 0.0;
  for (const auto& turn : traj.turns())
    sum += actor.action_logprob(turn.observation, turn.action).total -
           pi_ref.action_logprob(turn.observation, turn.action).total;
  return sum;
}

}  // namespace

double multiturn_dpo_margin(const PolicyModel& actor, const PolicyModel& pi_ref,
                            const TrajectoryPair& pair, double beta_prime) {
  if (!(beta_prime > 0.0)) throw PreconditionError("multi-turn dpo: beta' must be positive");
  return beta_prime * trajectory_log_ratio(actor, pi_ref, pair.chosen()) -
         beta_prime * trajectory_log_ratio(actor, pi_ref, pair.rejected());
}

double multiturn_dpo_loss(const PolicyModel& actor, const PolicyModel& pi_ref,
                          const TrajectoryPair& pair, double beta_prime) {
  return preference_loss(multiturn_dpo_margin(actor, pi_ref, pair, beta_prime));
}

double accumulate_multiturn_dpo_grad(const PolicyModel& actor, const PolicyModel& pi_ref,
                                     const TrajectoryPair& pair, double beta_prime, double scale,
                                     Gradient& out) {
  const double margin = multiturn_dpo_margin(actor, pi_ref, pair, beta_prime);
  const double dm = scale * preference_loss_grad(margin) * beta_prime;
  for (const auto& turn : pair.chosen().turns())
    actor.accumulate_logprob_grad(actor.encode(turn.observation), turn.action, dm, out);
  for (const auto& turn : pair.rejected().turns())
    actor.accumulate_logprob_grad(actor.encode(turn.observation), turn.action, -dm, out);
  return preference_loss(margin);
}

ActorReport train_multiturn_dpo(PolicyModel& actor, const PolicyModel& pi_ref,
                                std::span<const TrajectoryPair> pairs, const ActorOptConfig& opt) {
  if (pairs.empty()) throw PreconditionError("train_multiturn_dpo: no preference pairs");
  if (opt.batch_size == 0) throw PreconditionError("train_multiturn_dpo: batch_size must be >= 1");
  ActorReport report;
  Rng rng(derive_seed(opt.seed, "train-mtdpo"));
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  double margin_total = 0.0;
  std::size_t margin_count = 0;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
      const std::size_t end = std::min(order.size(), start + opt.batch_size);
      const double inv = 1.0 / static_cast<double>(end - start);
      Gradient grad, nll_grad;
      double loss = 0.0, nll = 0.0;
      std::size_t tokens = 0;
      for (std::size_t k = start; k < end; ++k) {
        const auto& pair = pairs[order[k]];
        margin_total += multiturn_dpo_margin(actor, pi_ref, pair, opt.beta);
        ++margin_count;
        loss += accumulate_multiturn_dpo_grad(actor, pi_ref, pair, opt.beta, inv, grad);
        if (opt.nll_coef > 0.0) {
          for (const auto& turn : pair.chosen().turns()) {
            const auto enc = actor.encode(turn.observation);
            nll -= actor.action_logprob(enc, turn.action).total;
            tokens += turn.action.size();
            actor.accumulate_logprob_grad(enc, turn.action, -1.0, nll_grad);
          }
        }
      }
      double objective = loss * inv;
      if (tokens > 0) {
        objective += opt.nll_coef * nll / static_cast<double>(tokens);
        grad.add(nll_grad, opt.nll_coef / static_cast<double>(tokens));
      }
      check_finite(objective, grad, "train_multiturn_dpo", report.steps);
      actor.apply(grad, -opt.learning_rate);
      report.batch_losses.push_back(objective);
      epoch_total += objective;
      ++batches;
      ++report.steps;
    }
    report.epoch_losses.push_back(epoch_total / static_cast<double>(batches));
  }
  report.preferences = pairs.size();
  if (margin_count) report.mean_margin = margin_total / static_cast<double>(margin_count);
  return report;
}

// ---- ValueHead ----

ValueHead::ValueHead(FeatureConfig features) : features_(features) {
  if (features_.width == 0) throw PreconditionError("ValueHead: feature width must be > 0");
  weights_.assign(features_.width, 0.0);
}

SparseFeatures ValueHead::features(std::span<const Token> observation,
                                   std::span<const Token> action,
                                   std::span<const Token> hidden_info) const {
  TokenSeq seq;
  seq.reserve(hidden_info.size() + observation.size() + action.size() + 2);
  seq.insert(seq.end(), hidden_info.begin(), hidden_info.end());
  seq.push_back(kSeparator);
  seq.insert(seq.end(), observation.begin(), observation.end());
  seq.push_back(kSeparator);
  seq.insert(seq.end(), action.begin(), action.end());
  // Unit L2 norm keeps the SGD step independent of history length.
  auto x = hash_prompt_features(seq, features_);
  double sq = 0.0;
  for (const auto& [f, v] : x) sq += v * v;
  if (sq > 0.0)
    for (auto& [f, v] : x) v /= std::sqrt(sq);
  return x;
}

double ValueHead::logit(const SparseFeatures& x) const {
  double z = 0.0;
  for (const auto& [f, v] : x) z += v * weights_[f];
  return z;
}

double ValueHead::predict(std::span<const Token> observation, std::span<const Token> action,
                          std::span<const Token> hidden_info) const {
  return sigmoid(logit(features(observation, action, hidden_info)));
}

void ValueHead::save(const std::filesystem::path& path) const {
  nlohmann::json j;
  j["v"] = 1;
  j["features"] = {{"width", features_.width},
                   {"max_order", features_.max_order},
                   {"hash_seed", features_.hash_seed},
                   {"bias", features_.bias},
                   {"count_features", features_.count_features},
                   {"prefix_features", features_.prefix_features}};
  nlohmann::json entries = nlohmann::json::array();
  for (std::size_t i = 0; i < weights_.size(); ++i)
    if (weights_[i] != 0.0) entries.push_back({i, weights_[i]});
  j["weights"] = std::move(entries);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write value head " + path.string());
  out << j.dump() << '\n';
}

ValueHead ValueHead::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("missing value head " + path.string());
  const auto j = nlohmann::json::parse(in);
  const auto& fj = j.at("features");
  FeatureConfig fc;
  fc.width = fj.at("width").get<std::size_t>();
  fc.max_order = fj.at("max_order").get<int>();
  fc.hash_seed = fj.at("hash_seed").get<std::uint64_t>();
  fc.bias = fj.at("bias").get<bool>();
  fc.count_features = fj.at("count_features").get<bool>();
  fc.prefix_features = fj.at("prefix_features").get<bool>();
  ValueHead head(fc);
  for (const auto& e : j.at("weights"))
    head.weights_.at(e.at(0).get<std::size_t>()) = e.at(1).get<double>();
  return head;
}

namespace {

double success_label(const Trajectory& t) { return t.cumulative_reward() >= 1.0 ? 1.0 : 0.0; }

// BCE(z, y) = softplus(z) − y z
double bce_from_logit(double z, double y) { return softplus(z) - y * z; }

}  // namespace

double value_bce(const ValueHead& head, std::span<const Trajectory> trajectories,
                 const HiddenInfoLookup& hidden_info) {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& traj : trajectories) {
    const auto& c = hidden_info(traj.task_id());
    const double y = success_label(traj);
    for (const auto& turn : traj.turns()) {
      total += bce_from_logit(head.logit(head.features(turn.observation, turn.action, c)), y);
      ++n;
    }
  }
  return n ? total / static_cast<double>(n) : 0.0;
}

std::vector<double> value_bce_grad(const ValueHead& head, std::span<const Trajectory> trajectories,
                                   const HiddenInfoLookup& hidden_info) {
  std::vector<double> g(head.weights().size(), 0.0);
  std::size_t n = 0;
  for (const auto& traj : trajectories) {
    const auto& c = hidden_info(traj.task_id());
    const double y = success_label(traj);
    for (const auto& turn : traj.turns()) {
      const auto x = head.features(turn.observation, turn.action, c);
      const double r = sigmoid(head.logit(x)) - y;
      for (const auto& [f, v] : x) g[f] += r * v;
      ++n;
    }
  }
  if (n)
    for (auto& v : g) v /= static_cast<double>(n);
  return g;
}

ValueReport train_value_head(ValueHead& head, std::span<const Trajectory> trajectories,
                             const HiddenInfoLookup& hidden_info, const OptConfig& opt) {
  if (opt.batch_size == 0) throw PreconditionError("train_value_head: batch_size must be >= 1");
  struct Sample {
    SparseFeatures x;
    double y;
  };
  std::vector<Sample> samples;
  for (const auto& traj : trajectories) {
    const auto& c = hidden_info(traj.task_id());
    for (const auto& turn : traj.turns())
      samples.push_back({head.features(turn.observation, turn.action, c), success_label(traj)});
  }
  auto mean_bce = [&] {
    double total = 0.0;
    for (const auto& s : samples) total += bce_from_logit(head.logit(s.x), s.y);
    return samples.empty() ? 0.0 : total / static_cast<double>(samples.size());
  };

  ValueReport report;
  report.initial_bce = mean_bce();
  Rng rng(derive_seed(opt.seed, "train-value"));
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  auto& w = head.weights();
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
      const std::size_t end = std::min(order.size(), start + opt.batch_size);
      const double inv = 1.0 / static_cast<double>(end - start);
      std::vector<std::pair<std::uint32_t, double>> updates;
      double loss = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        const auto& s = samples[order[k]];
        const double z = head.logit(s.x);
        loss += bce_from_logit(z, s.y);
        const double r = sigmoid(z) - s.y;
        for (const auto& [f, v] : s.x) updates.emplace_back(f, r * v * inv);
      }
      if (!std::isfinite(loss)) throw NonFiniteError("train_value_head: non-finite loss");
      for (const auto& [f, g] : updates) w[f] -= opt.learning_rate * g;
      epoch_total += loss * inv;
      ++batches;
    }
    report.epoch_losses.push_back(batches ? epoch_total / static_cast<double>(batches) : 0.0);
  }
  report.final_bce = mean_bce();
  return report;
}

PolicyModel make_seed_actor(const SlotEnv& env, const SeedActorConfig& config, std::uint64_t seed) {
  PolicyModel actor = PolicyModel::linear(env.action_vocab(), config.features);
  const auto agent = heuristic_agent(env.config(), config.heuristic);
  std::vector<Trajectory> demos;
  demos.reserve(config.pretrain_episodes);
  Rng rng(derive_seed(seed, "seed-actor"));
  for (std::size_t i = 0; i < config.pretrain_episodes; ++i) {
    // Pretraining tasks live in their own seed space.
    const Task task = env.sample_task(derive_seed(seed, "seed-actor-task", i));
    demos.push_back(run_agent(env, task, agent, rng));
  }
  ActorOptConfig opt;
  opt.learning_rate = config.learning_rate;
  opt.epochs = config.epochs;
  opt.batch_size = config.batch_size;
  opt.seed = derive_seed(seed, "seed-actor-opt");
  train_rejection_ft(actor, demos, -std::numeric_limits<double>::infinity(), opt);
  return actor;
}

}  // namespace sweet
