#include "sweet/tiny_mdp.hpp"

#include <cmath>

namespace sweet {

bool TinyMDP::deterministic() const {
  for (const auto& outs : transitions)
    if (outs.size() > 1) return false;
  return true;
}

void TinyMDP::validate() const {
  if (horizon < 1) throw PreconditionError("TinyMDP: horizon must be >= 1");
  if (n_hidden < 1 || n_actions < 1) throw PreconditionError("TinyMDP: empty hidden/action set");
  const std::size_t n = static_cast<std::size_t>(n_obs()) * n_actions * n_hidden;
  if (transitions.size() != n || rewards.size() != n)
    throw PreconditionError("TinyMDP: table sizes do not match obs x actions x hidden");
  for (int o = 0; o < n_obs(); ++o) {
    for (int a = 0; a < n_actions; ++a) {
      for (int c = 0; c < n_hidden; ++c) {
        const auto& outs = transition(o, a, c);
        const bool last = obs_layer[o] == horizon - 1;
        double total = 0.0;
        for (const auto& out : outs) {
          total += out.prob;
          if (last && out.next_obs != -1)
            throw PreconditionError("TinyMDP: last-layer observation has a successor");
          if (!last && (out.next_obs < 0 || out.next_obs >= n_obs() ||
                        obs_layer[out.next_obs] != obs_layer[o] + 1))
            throw PreconditionError("TinyMDP: successor must lie in the next layer");
        }
        if (std::abs(total - 1.0) > 1e-12)
          throw PreconditionError("TinyMDP: transition probabilities must sum to 1");
      }
    }
  }
  double mass = 0.0;
  for (const auto& s : initial) {
    if (s.hidden < 0 || s.hidden >= n_hidden || s.obs < 0 || s.obs >= n_obs() ||
        obs_layer[s.obs] != 0)
      throw PreconditionError("TinyMDP: invalid initial state");
    mass += s.prob;
  }
  if (std::abs(mass - 1.0) > 1e-12) throw PreconditionError("TinyMDP: initial mass must be 1");
}

Vocab TinyMDP::action_vocab() const {
  std::vector<Token> tokens;
  for (int a = 0; a < n_actions; ++a) tokens.push_back("a" + std::to_string(a));
  return Vocab(std::move(tokens));
}

TokenSeq TinyMDP::prompt(int o) { return {"o" + std::to_string(o)}; }

TinyMDP random_tiny_mdp(std::uint64_t seed, const TinyMdpShape& shape) {
  Rng rng(derive_seed(seed, "tiny-mdp"));
  TinyMDP m;
  m.horizon = shape.horizon;
  m.n_hidden = shape.n_hidden;
  m.n_actions = shape.n_actions;
  for (int t = 0; t < shape.horizon; ++t)
    for (int k = 0; k < shape.obs_per_layer; ++k) m.obs_layer.push_back(t);
  const std::size_t n = static_cast<std::size_t>(m.n_obs()) * m.n_actions * m.n_hidden;
  m.transitions.resize(n);
  m.rewards.resize(n);
  for (int o = 0; o < m.n_obs(); ++o) {
    const int layer = m.obs_layer[o];
    for (int a = 0; a < m.n_actions; ++a) {
      for (int c = 0; c < m.n_hidden; ++c) {
        m.rewards[m.index(o, a, c)] = rng.uniform();
        const int next = layer + 1 < shape.horizon
                             ? (layer + 1) * shape.obs_per_layer +
                                   static_cast<int>(rng.below(shape.obs_per_layer))
                             : -1;
        m.transitions[m.index(o, a, c)] = {{next, 1.0}};
      }
    }
  }
  double total = 0.0;
  for (int c = 0; c < m.n_hidden; ++c) {
    for (int o = 0; o < shape.obs_per_layer; ++o) {
      const double w = 0.5 + rng.uniform();
      m.initial.push_back({c, o, w});
      total += w;
    }
  }
  for (auto& s : m.initial) s.prob /= total;
  m.validate();
  return m;
}

TinyMDP stochastic_counterexample_mdp() {
  // Layer 0: o0. Layer 1: o1 (pays 1) and o2 (pays 0). Action a0 at o0 moves
  // to o1 or o2 with equal probability; a1 goes to o2.
  TinyMDP m;
  m.horizon = 2;
  m.n_hidden = 1;
  m.n_actions = 2;
  m.obs_layer = {0, 1, 1};
  m.transitions.resize(3 * 2);
  m.rewards.assign(3 * 2, 0.0);
  m.transitions[m.index(0, 0, 0)] = {{1, 0.5}, {2, 0.5}};
  m.transitions[m.index(0, 1, 0)] = {{2, 1.0}};
  for (int a = 0; a < 2; ++a) {
    m.transitions[m.index(1, a, 0)] = {{-1, 1.0}};
    m.transitions[m.index(2, a, 0)] = {{-1, 1.0}};
    m.rewards[m.index(1, a, 0)] = 1.0;
  }
  m.initial = {{0, 0, 1.0}};
  m.validate();
  return m;
}

PolicyModel make_tiny_policy(const TinyMDP& mdp) { return PolicyModel::tabular(mdp.action_vocab()); }

PolicyModel random_tiny_policy(const TinyMDP& mdp, std::uint64_t seed, double scale) {
  PolicyModel p = make_tiny_policy(mdp);
  Rng rng(derive_seed(seed, "tiny-policy"));
  for (int o = 0; o < mdp.n_obs(); ++o) {
    const std::string key = p.context_key(TinyMDP::prompt(o));
    for (int a = 0; a < mdp.n_actions; ++a)
      p.mutable_param({key, 0, static_cast<std::size_t>(a)}) = scale * rng.normal();
  }
  return p;
}

std::vector<double> action_probs(const PolicyModel& policy, int obs) {
  std::vector<double> z, p;
  policy.logits(policy.encode(TinyMDP::prompt(obs)), {}, z);
  softmax(z, p);
  return p;
}

std::vector<MdpTrajectory> enumerate_trajectories(const TinyMDP& mdp, const PolicyModel& policy,
                                                  std::size_t cap) {
  mdp.validate();
  if (policy.vocab().size() != static_cast<std::size_t>(mdp.n_actions))
    throw PreconditionError("enumerate_trajectories: policy vocabulary does not match actions");
  std::vector<std::vector<double>> probs(mdp.n_obs());
  for (int o = 0; o < mdp.n_obs(); ++o) probs[o] = action_probs(policy, o);

  std::vector<MdpTrajectory> out;
  MdpTrajectory cur;
  auto recurse = [&](auto&& self, int o, double p) -> void {
    for (int a = 0; a < mdp.n_actions; ++a) {
      const double pa = p * probs[o][a];
      if (pa == 0.0) continue;
      cur.obs.push_back(o);
      cur.actions.push_back(a);
      cur.rewards.push_back(mdp.reward(o, a, cur.hidden));
      for (const auto& next : mdp.transition(o, a, cur.hidden)) {
        const double pn = pa * next.prob;
        if (pn == 0.0) continue;
        if (next.next_obs < 0) {
          if (out.size() >= cap)
            throw EnumerationOverflow("enumerate_trajectories: more than " + std::to_string(cap) +
                                      " trajectories");
          cur.prob = pn;
          out.push_back(cur);
        } else {
          self(self, next.next_obs, pn);
        }
      }
      cur.obs.pop_back();
      cur.actions.pop_back();
      cur.rewards.pop_back();
    }
  };
  for (const auto& s : mdp.initial) {
    if (s.prob == 0.0) continue;
    cur = MdpTrajectory{};
    cur.hidden = s.hidden;
    recurse(recurse, s.obs, s.prob);
  }
  return out;
}

}  // namespace sweet
