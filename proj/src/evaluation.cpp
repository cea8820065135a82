#include "sweet/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "sweet/parallel.hpp"

namespace sweet {

std::string to_string(ScorerKind k) {
  switch (k) {
    case ScorerKind::kCriticAdvantage: return "critic_advantage";
    case ScorerKind::kCriticNoHiddenInfo: return "critic_no_hidden_info";
    case ScorerKind::kValueHead: return "value_head";
    case ScorerKind::kRandom: return "random";
    case ScorerKind::kOracleExactAdvantage: return "oracle_exact_advantage";
  }
  return "unknown";
}

ScorerKind scorer_kind_from_string(const std::string& s) {
  for (auto k : {ScorerKind::kCriticAdvantage, ScorerKind::kCriticNoHiddenInfo,
                 ScorerKind::kValueHead, ScorerKind::kRandom, ScorerKind::kOracleExactAdvantage})
    if (to_string(k) == s) return k;
  throw PreconditionError("unknown scorer kind '" + s + "'");
}

Scorer Scorer::critic(const CriticModel& critic) {
  const auto kind =
      critic.use_hidden_info() ? ScorerKind::kCriticAdvantage : ScorerKind::kCriticNoHiddenInfo;
  return Scorer(kind, [&critic](std::span<const Token> obs, std::span<const Token> action,
                                std::span<const Token> c, Rng&) {
    return critic.advantage(obs, action, c);
  });
}

Scorer Scorer::value_head(const ValueHead& head) {
  return Scorer(ScorerKind::kValueHead,
                [&head](std::span<const Token> obs, std::span<const Token> action,
                        std::span<const Token> c, Rng&) { return head.predict(obs, action, c); });
}

Scorer Scorer::random() {
  return Scorer(ScorerKind::kRandom,
                [](std::span<const Token>, std::span<const Token>, std::span<const Token>,
                   Rng& rng) { return rng.uniform(); });
}

namespace {

int parse_indexed(std::span<const Token> seq, char prefix, const char* what) {
  if (seq.size() != 1 || seq[0].size() < 2 || seq[0][0] != prefix)
    throw PreconditionError(std::string("oracle scorer: malformed ") + what);
  return std::stoi(seq[0].substr(1));
}

}  // namespace

Scorer Scorer::oracle(const TinyMDP& mdp, const QvaTables& tables) {
  return Scorer(ScorerKind::kOracleExactAdvantage,
                [&mdp, &tables](std::span<const Token> obs, std::span<const Token> action,
                                std::span<const Token> c, Rng&) {
                  const int o = parse_indexed(obs, 'o', "observation");
                  const int a = parse_indexed(action, 'a', "action");
                  const int h = parse_indexed(c, 'c', "hidden info");
                  if (o >= mdp.n_obs() || a >= mdp.n_actions || h >= mdp.n_hidden)
                    throw PreconditionError("oracle scorer: index out of range");
                  return tables.A(o, a, h);
                });
}

bool Scorer::needs_hidden_info() const {
  return kind_ == ScorerKind::kCriticAdvantage || kind_ == ScorerKind::kValueHead ||
         kind_ == ScorerKind::kOracleExactAdvantage;
}

double Scorer::score(std::span<const Token> observation, std::span<const Token> action,
                     std::span<const Token> hidden_info, Rng& rng) const {
  return fn_(observation, action, hidden_info, rng);
}

std::size_t best_of_n_select(const Scorer& scorer, std::span<const TokenSeq> candidates,
                             std::span<const Token> observation,
                             std::span<const Token> hidden_info, Rng& rng) {
  if (candidates.empty()) throw PreconditionError("best_of_n_select: no candidates");
  if (candidates.size() == 1) return 0;
  std::size_t best = 0, ties = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const double s = scorer.score(observation, candidates[i], hidden_info, rng);
    if (s > best_score) {
      best_score = s;
      best = i;
      ties = 1;
    } else if (s == best_score) {
      // Reservoir draw keeps each tied index with probability 1/ties.
      if (rng.below(++ties) == 0) best = i;
    }
  }
  return best;
}

Trajectory run_episode(const PolicyModel& actor, const SlotEnv& env, const Task& task, Rng& rng,
                       const BestOfN* selector) {
  const std::size_t max_len = env.config().action_max_len();
  Episode ep(env, task);
  if (selector && (!selector->scorer || !selector->select_rng || selector->n == 0))
    throw PreconditionError("run_episode: incomplete Best-of-N selector");
  while (!ep.done()) {
    const auto enc = actor.encode(ep.observation());
    if (!selector) {
      ep.step(actor.sample_action(enc, rng, max_len));
      continue;
    }
    Rng paired = selector->paired_seed
                     ? Rng(derive_seed(*selector->paired_seed, "turn",
                                       static_cast<std::uint64_t>(ep.turn())))
                     : Rng();
    Rng& cand_rng = selector->paired_seed ? paired : rng;
    std::vector<TokenSeq> candidates;
    for (std::size_t i = 0; i < selector->n; ++i)
      candidates.push_back(actor.sample_action(enc, cand_rng, max_len));
    std::span<const Token> c;
    if (selector->n > 1 && selector->scorer->needs_hidden_info()) c = task.training_time_info();
    const auto pick =
        best_of_n_select(*selector->scorer, candidates, ep.observation(), c, *selector->select_rng);
    ep.step(std::move(candidates[pick]));
  }
  return ep.finish();
}

EvalResult summarize_episodes(std::span<const Trajectory> episodes) {
  EvalResult r;
  r.episodes = episodes.size();
  if (episodes.empty()) return r;
  double succ = 0.0, reward = 0.0, reward_sq = 0.0, len = 0.0, turns = 0.0;
  for (const auto& t : episodes) {
    const double R = t.cumulative_reward();
    succ += R >= 1.0 ? 1.0 : 0.0;
    reward += R;
    reward_sq += R * R;
    double l = 0.0;
    for (const auto& turn : t.turns()) l += static_cast<double>(turn.action.size());
    len += l / static_cast<double>(t.turns().size());
    turns += static_cast<double>(t.turns().size());
  }
  const double n = static_cast<double>(episodes.size());
  r.success_rate = succ / n;
  r.mean_reward = reward / n;
  r.stderr_success = std::sqrt(r.success_rate * (1.0 - r.success_rate) / n);
  if (episodes.size() > 1) {
    const double var = std::max(0.0, (reward_sq - n * r.mean_reward * r.mean_reward) / (n - 1.0));
    r.stderr_reward = std::sqrt(var / n);
  }
  r.mean_action_length = len / n;
  r.mean_turns = turns / n;
  return r;
}

EvalResult eval_success(const PolicyModel& actor, const SlotEnv& env, std::span<const Task> tasks,
                        std::uint64_t seed, std::size_t episodes, unsigned jobs) {
  if (episodes == 0) throw PreconditionError("eval_success: episodes must be >= 1");
  if (tasks.empty()) throw PreconditionError("eval_success: no tasks");
  std::vector<Trajectory> out(episodes);
  parallel_for(episodes, jobs, [&](std::size_t e) {
    Rng rng(derive_seed(seed, "eval-episode", e));
    out[e] = run_episode(actor, env, tasks[e % tasks.size()], rng);
  });
  return summarize_episodes(out);
}

std::vector<CurvePoint> scaling_curve(const PolicyModel& actor, const SlotEnv& env,
                                      std::span<const Scorer* const> scorers,
                                      std::span<const std::size_t> n_values,
                                      std::span<const Task> tasks, std::uint64_t seed,
                                      std::size_t episodes, unsigned jobs) {
  if (n_values.empty()) throw PreconditionError("scaling_curve: n_values is empty");
  if (tasks.empty() || episodes == 0) throw PreconditionError("scaling_curve: nothing to run");
  std::vector<CurvePoint> points;
  for (const Scorer* scorer : scorers) {
    for (std::size_t n : n_values) {
      std::vector<Trajectory> out(episodes);
      parallel_for(episodes, jobs, [&](std::size_t e) {
        const std::uint64_t cand_seed = derive_seed(derive_seed(seed, "bon-candidates", e), "n", n);
        Rng select(derive_seed(derive_seed(seed, "bon-select-" + scorer->name(), e), "n", n));
        Rng unused(cand_seed);
        BestOfN sel{scorer, n, &select, cand_seed};
        out[e] = run_episode(actor, env, tasks[e % tasks.size()], unused, &sel);
      });
      const auto r = summarize_episodes(out);
      points.push_back({scorer->name(), n, r.success_rate, r.stderr_success, r.episodes});
    }
  }
  return points;
}

void write_curve_csv(const std::filesystem::path& path, std::span<const CurvePoint> points) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "scorer,N,success_rate,stderr,episodes\n";
  char buf[128];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f,%zu", p.n, p.success_rate, p.stderr, p.episodes);
    out << p.scorer << ',' << buf << '\n';
  }
}

std::vector<std::vector<double>> tiny_best_of_n_policy(const TinyMDP& mdp,
                                                       const PolicyModel& policy, std::size_t n) {
  if (n == 0) throw PreconditionError("tiny_best_of_n_policy: n must be >= 1");
  const auto tables = exact_qva(mdp, policy);
  const int A = mdp.n_actions, C = mdp.n_hidden;
  std::vector<std::vector<double>> law(static_cast<std::size_t>(mdp.n_obs()) * C);
  for (int o = 0; o < mdp.n_obs(); ++o) {
    const auto p = action_probs(policy, o);
    for (int c = 0; c < C; ++c) {
      auto& out = law[o * C + c];
      out.assign(A, 0.0);
      // The maximum of n draws lands in a tie group g with probability
      // F(≤ g)^n − F(< g)^n; within g the pick is distributed as π restricted to g.
      for (int a = 0; a < A; ++a) {
        if (p[a] == 0.0) continue;
        const double s = tables.A(o, a, c);
        double le = 0.0, lt = 0.0, group = 0.0;
        for (int b = 0; b < A; ++b) {
          const double sb = tables.A(o, b, c);
          if (sb <= s) le += p[b];
          if (sb < s) lt += p[b];
          if (sb == s) group += p[b];
        }
        const double nd = static_cast<double>(n);
        out[a] = (std::pow(le, nd) - std::pow(lt, nd)) * p[a] / group;
      }
    }
  }
  return law;
}

double tiny_best_of_n_return(const TinyMDP& mdp, const PolicyModel& policy, std::size_t n) {
  const auto law = tiny_best_of_n_policy(mdp, policy, n);
  const int A = mdp.n_actions, C = mdp.n_hidden;
  std::vector<int> order(mdp.n_obs());
  for (int o = 0; o < mdp.n_obs(); ++o) order[o] = o;
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return mdp.obs_layer[a] > mdp.obs_layer[b]; });
  std::vector<double> v(static_cast<std::size_t>(mdp.n_obs()) * C, 0.0);
  for (int o : order) {
    for (int c = 0; c < C; ++c) {
      double acc = 0.0;
      for (int a = 0; a < A; ++a) {
        double q = mdp.reward(o, a, c);
        for (const auto& next : mdp.transition(o, a, c))
          if (next.next_obs >= 0) q += next.prob * v[next.next_obs * C + c];
        acc += law[o * C + c][a] * q;
      }
      v[o * C + c] = acc;
    }
  }
  double j = 0.0;
  for (const auto& s : mdp.initial) j += s.prob * v[s.obs * C + s.hidden];
  return j;
}

}  // namespace sweet
