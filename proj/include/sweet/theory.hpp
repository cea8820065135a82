#pragma once

#include <functional>
#include <string>
#include <vector>

#include "sweet/tiny_mdp.hpp"

namespace sweet {

/// Exact value tables of a policy on a TinyMDP.
struct QvaTables {
  int n_obs = 0, n_actions = 0, n_hidden = 0;
  std::vector<double> q;         // [(o * A + a) * C + c]
  std::vector<double> v;         // [o * C + c]
  std::vector<double> adv;       // [(o * A + a) * C + c]
  std::vector<double> occupancy; // d^π(o, a, c), summed over turns (layers are disjoint)
  std::vector<double> q_marginal;   // [o * A + a], E_{c ~ d(c|o,a)} Q(o,a,c)
  std::vector<double> v_marginal;   // [o], E_{c ~ d(c|o)} V(o,c)
  std::vector<double> adv_marginal; // [o * A + a], E_{c ~ d(c|o,a)} A(o,a,c)

  double Q(int o, int a, int c) const { return q[(o * n_actions + a) * n_hidden + c]; }
  double V(int o, int c) const { return v[o * n_hidden + c]; }
  double A(int o, int a, int c) const { return adv[(o * n_actions + a) * n_hidden + c]; }
  double A(int o, int a) const { return adv_marginal[o * n_actions + a]; }
};

/// Backward induction for Q/V/A given c, forward occupancy for the c-marginals.
/// Observations never reached get zero marginals.
QvaTables exact_qva(const TinyMDP& mdp, const PolicyModel& policy);

struct Lemma1Report {
  /// max over trajectories of |Σ_t r − Σ_t A(o_t, a_t, c)|.
  double max_return_gap = 0.0;
  /// max over trajectory pairs sharing (c, o1) of the difference between the
  /// reward margin and the advantage margin, i.e. the deviation between the two
  /// Bradley-Terry logits.
  double max_pair_margin_gap = 0.0;
  /// max over trajectories of |Σ_t r − Σ_t A − V(o1, c)|.
  double max_telescoped_gap = 0.0;
  std::size_t trajectories = 0;
};

Lemma1Report check_lemma1(const TinyMDP& mdp, const PolicyModel& policy);

struct Lemma2Report {
  /// Gradients over the tabular logits, indexed [o * A + a].
  std::vector<double> grad_return;          // ∇ E[Σ r] by differentiating the recursion
  std::vector<double> grad_adv_marginal;    // Σ_t E[A(o,a) ∇log π(a|o)]
  std::vector<double> grad_adv_hidden;      // Σ_t E[A(o,a,c) ∇log π(a|o)]
  /// The two estimators evaluated by trajectory enumeration instead of occupancy tables.
  std::vector<double> grad_adv_marginal_traj;
  std::vector<double> grad_adv_hidden_traj;
  double max_deviation = 0.0;       // among grad_return, grad_adv_marginal, grad_adv_hidden
  double max_form_deviation = 0.0;  // occupancy form vs trajectory form
};

Lemma2Report check_lemma2(const TinyMDP& mdp, const PolicyModel& policy);

/// Expected return Σ_τ P(τ) Σ_t r_t under `policy`.
double expected_return(const TinyMDP& mdp, const PolicyModel& policy);

/// Parameter addresses of the tabular logits, matching the [o * A + a] layout.
std::vector<ParamKey> tiny_policy_params(const TinyMDP& mdp, const PolicyModel& policy);

/// Central finite differences at `eps` on up to `n_coords` coordinates drawn
/// from `coords`, compared against `analytic`. Relative error uses
/// |fd − an| / max(|fd|, |an|, abs_floor).
struct FiniteDiffOptions {
  double eps = 1e-5;
  std::size_t n_coords = 64;
  double abs_floor = 1e-8;
};

double finite_diff_audit(const std::function<double()>& loss, std::span<double* const> coords,
                         std::span<const double> analytic, Rng& rng,
                         const FiniteDiffOptions& options = {});

}  // namespace sweet
