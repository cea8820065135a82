#include "sweet/theory.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace sweet {

namespace {

std::vector<std::vector<double>> all_action_probs(const TinyMDP& mdp, const PolicyModel& policy) {
  std::vector<std::vector<double>> probs(mdp.n_obs());
  for (int o = 0; o < mdp.n_obs(); ++o) probs[o] = action_probs(policy, o);
  return probs;
}

// Observations sorted by layer, deepest first.
std::vector<int> obs_by_layer_desc(const TinyMDP& mdp) {
  std::vector<int> order(mdp.n_obs());
  for (int o = 0; o < mdp.n_obs(); ++o) order[o] = o;
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return mdp.obs_layer[a] > mdp.obs_layer[b]; });
  return order;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

QvaTables exact_qva(const TinyMDP& mdp, const PolicyModel& policy) {
  mdp.validate();
  const int O = mdp.n_obs(), A = mdp.n_actions, C = mdp.n_hidden;
  const auto probs = all_action_probs(mdp, policy);
  QvaTables t;
  t.n_obs = O;
  t.n_actions = A;
  t.n_hidden = C;
  t.q.assign(static_cast<std::size_t>(O) * A * C, 0.0);
  t.adv.assign(t.q.size(), 0.0);
  t.v.assign(static_cast<std::size_t>(O) * C, 0.0);

  const auto desc = obs_by_layer_desc(mdp);
  for (int o : desc) {
    for (int c = 0; c < C; ++c) {
      double v = 0.0;
      for (int a = 0; a < A; ++a) {
        double q = mdp.reward(o, a, c);
        for (const auto& next : mdp.transition(o, a, c))
          if (next.next_obs >= 0) q += next.prob * t.V(next.next_obs, c);
        t.q[mdp.index(o, a, c)] = q;
        v += probs[o][a] * q;
      }
      t.v[o * C + c] = v;
      for (int a = 0; a < A; ++a) t.adv[mdp.index(o, a, c)] = t.q[mdp.index(o, a, c)] - v;
    }
  }

  // Forward occupancy d(o, c), then d(o, a, c).
  std::vector<double> state_occ(static_cast<std::size_t>(O) * C, 0.0);
  for (const auto& s : mdp.initial) state_occ[s.obs * C + s.hidden] += s.prob;
  t.occupancy.assign(t.q.size(), 0.0);
  for (auto it = desc.rbegin(); it != desc.rend(); ++it) {
    const int o = *it;
    for (int c = 0; c < C; ++c) {
      const double d = state_occ[o * C + c];
      if (d == 0.0) continue;
      for (int a = 0; a < A; ++a) {
        const double dac = d * probs[o][a];
        t.occupancy[mdp.index(o, a, c)] = dac;
        for (const auto& next : mdp.transition(o, a, c))
          if (next.next_obs >= 0) state_occ[next.next_obs * C + c] += dac * next.prob;
      }
    }
  }

  t.q_marginal.assign(static_cast<std::size_t>(O) * A, 0.0);
  t.adv_marginal.assign(t.q_marginal.size(), 0.0);
  t.v_marginal.assign(O, 0.0);
  for (int o = 0; o < O; ++o) {
    double d_o = 0.0, v_acc = 0.0;
    for (int c = 0; c < C; ++c) {
      d_o += state_occ[o * C + c];
      v_acc += state_occ[o * C + c] * t.V(o, c);
    }
    if (d_o > 0.0) t.v_marginal[o] = v_acc / d_o;
    for (int a = 0; a < A; ++a) {
      double d_oa = 0.0, q_acc = 0.0, a_acc = 0.0;
      for (int c = 0; c < C; ++c) {
        const double w = t.occupancy[mdp.index(o, a, c)];
        d_oa += w;
        q_acc += w * t.Q(o, a, c);
        a_acc += w * t.A(o, a, c);
      }
      if (d_oa > 0.0) {
        t.q_marginal[o * A + a] = q_acc / d_oa;
        t.adv_marginal[o * A + a] = a_acc / d_oa;
      }
    }
  }
  return t;
}

Lemma1Report check_lemma1(const TinyMDP& mdp, const PolicyModel& policy) {
  const auto tables = exact_qva(mdp, policy);
  const auto trajs = enumerate_trajectories(mdp, policy);
  Lemma1Report rep;
  rep.trajectories = trajs.size();
  // Group by (c, o1): the Bradley-Terry identity compares trajectories of one task.
  std::map<std::pair<int, int>, std::pair<double, double>> gap_range;
  for (const auto& tr : trajs) {
    double ret = 0.0, adv = 0.0;
    for (std::size_t t = 0; t < tr.actions.size(); ++t) {
      ret += tr.rewards[t];
      adv += tables.A(tr.obs[t], tr.actions[t], tr.hidden);
    }
    const double gap = ret - adv;
    rep.max_return_gap = std::max(rep.max_return_gap, std::abs(gap));
    rep.max_telescoped_gap =
        std::max(rep.max_telescoped_gap, std::abs(gap - tables.V(tr.obs[0], tr.hidden)));
    auto [it, inserted] = gap_range.try_emplace({tr.hidden, tr.obs[0]}, gap, gap);
    if (!inserted) {
      it->second.first = std::min(it->second.first, gap);
      it->second.second = std::max(it->second.second, gap);
    }
  }
  for (const auto& [key, range] : gap_range)
    rep.max_pair_margin_gap = std::max(rep.max_pair_margin_gap, range.second - range.first);
  return rep;
}

double expected_return(const TinyMDP& mdp, const PolicyModel& policy) {
  double j = 0.0;
  for (const auto& tr : enumerate_trajectories(mdp, policy)) {
    double ret = 0.0;
    for (double r : tr.rewards) ret += r;
    j += tr.prob * ret;
  }
  return j;
}

std::vector<ParamKey> tiny_policy_params(const TinyMDP& mdp, const PolicyModel& policy) {
  std::vector<ParamKey> keys;
  for (int o = 0; o < mdp.n_obs(); ++o) {
    const auto key = policy.context_key(TinyMDP::prompt(o));
    for (int a = 0; a < mdp.n_actions; ++a) keys.push_back({key, 0, static_cast<std::size_t>(a)});
  }
  return keys;
}

Lemma2Report check_lemma2(const TinyMDP& mdp, const PolicyModel& policy) {
  const int O = mdp.n_obs(), A = mdp.n_actions, C = mdp.n_hidden;
  const std::size_t P = static_cast<std::size_t>(O) * A;
  const auto probs = all_action_probs(mdp, policy);
  const auto tables = exact_qva(mdp, policy);

  // ∇ log π(a|o) w.r.t. θ[o, b] is 1{a=b} − π(b|o); zero for other observations.
  auto add_score = [&](std::vector<double>& g, int o, int a, double w) {
    for (int b = 0; b < A; ++b) g[o * A + b] += w * ((a == b ? 1.0 : 0.0) - probs[o][b]);
  };

  Lemma2Report rep;

  // (i) Forward-mode derivative of the value recursion.
  std::vector<std::vector<double>> dv(static_cast<std::size_t>(O) * C, std::vector<double>(P, 0.0));
  for (int o : obs_by_layer_desc(mdp)) {
    for (int c = 0; c < C; ++c) {
      auto& dvo = dv[o * C + c];
      for (int a = 0; a < A; ++a) {
        // dπ(a|o) Q(o,a,c)
        for (int b = 0; b < A; ++b)
          dvo[o * A + b] +=
              probs[o][a] * ((a == b ? 1.0 : 0.0) - probs[o][b]) * tables.Q(o, a, c);
        // π(a|o) dQ(o,a,c)
        for (const auto& next : mdp.transition(o, a, c)) {
          if (next.next_obs < 0) continue;
          const auto& dnext = dv[next.next_obs * C + c];
          for (std::size_t k = 0; k < P; ++k) dvo[k] += probs[o][a] * next.prob * dnext[k];
        }
      }
    }
  }
  rep.grad_return.assign(P, 0.0);
  for (const auto& s : mdp.initial)
    for (std::size_t k = 0; k < P; ++k) rep.grad_return[k] += s.prob * dv[s.obs * C + s.hidden][k];

  // (ii), (iii) from occupancy tables.
  rep.grad_adv_marginal.assign(P, 0.0);
  rep.grad_adv_hidden.assign(P, 0.0);
  for (int o = 0; o < O; ++o) {
    for (int a = 0; a < A; ++a) {
      double d_oa = 0.0;
      for (int c = 0; c < C; ++c) {
        const double d = tables.occupancy[mdp.index(o, a, c)];
        d_oa += d;
        add_score(rep.grad_adv_hidden, o, a, d * tables.A(o, a, c));
      }
      add_score(rep.grad_adv_marginal, o, a, d_oa * tables.A(o, a));
    }
  }

  // Same estimators, summed over enumerated trajectories.
  rep.grad_adv_marginal_traj.assign(P, 0.0);
  rep.grad_adv_hidden_traj.assign(P, 0.0);
  for (const auto& tr : enumerate_trajectories(mdp, policy)) {
    for (std::size_t t = 0; t < tr.actions.size(); ++t) {
      const int o = tr.obs[t], a = tr.actions[t];
      add_score(rep.grad_adv_marginal_traj, o, a, tr.prob * tables.A(o, a));
      add_score(rep.grad_adv_hidden_traj, o, a, tr.prob * tables.A(o, a, tr.hidden));
    }
  }

  rep.max_deviation = std::max({max_abs_diff(rep.grad_return, rep.grad_adv_marginal),
                                max_abs_diff(rep.grad_return, rep.grad_adv_hidden),
                                max_abs_diff(rep.grad_adv_marginal, rep.grad_adv_hidden)});
  rep.max_form_deviation =
      std::max(max_abs_diff(rep.grad_adv_marginal, rep.grad_adv_marginal_traj),
               max_abs_diff(rep.grad_adv_hidden, rep.grad_adv_hidden_traj));
  return rep;
}

double finite_diff_audit(const std::function<double()>& loss, std::span<double* const> coords,
                         std::span<const double> analytic, Rng& rng,
                         const FiniteDiffOptions& options) {
  if (coords.size() != analytic.size())
    throw PreconditionError("finite_diff_audit: coords and analytic differ in length");
  const double base = loss();
  if (!std::isfinite(base)) throw NonFiniteError("finite_diff_audit: loss not finite at params");
  std::vector<std::size_t> idx(coords.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  if (idx.size() > options.n_coords) {
    rng.shuffle(idx);
    idx.resize(options.n_coords);
  }
  double worst = 0.0;
  for (auto i : idx) {
    double& x = *coords[i];
    const double saved = x;
    x = saved + options.eps;
    const double up = loss();
    x = saved - options.eps;
    const double down = loss();
    x = saved;
    if (!std::isfinite(up) || !std::isfinite(down))
      throw NonFiniteError("finite_diff_audit: loss not finite near params");
    const double fd = (up - down) / (2.0 * options.eps);
    const double denom = std::max({std::abs(fd), std::abs(analytic[i]), options.abs_floor});
    worst = std::max(worst, std::abs(fd - analytic[i]) / denom);
  }
  return worst;
}

}  // namespace sweet
