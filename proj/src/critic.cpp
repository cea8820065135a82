#include "sweet/critic.hpp"

#include <cmath>
#include <sstream>

namespace sweet {

CriticModel::CriticModel(PolicyModel pi_theta, double beta, bool normalize_by_length,
                         bool use_hidden_info)
    : pi_theta_(std::move(pi_theta)),
      pi_ref_(pi_theta_.freeze_reference()),
      beta_(beta),
      normalize_by_length_(normalize_by_length),
      use_hidden_info_(use_hidden_info) {
  if (!(beta_ > 0.0)) throw PreconditionError("CriticModel: beta must be positive");
}

CriticModel::CriticModel(PolicyModel pi_theta, FrozenPolicy pi_ref, double beta,
                         bool normalize_by_length, bool use_hidden_info)
    : pi_theta_(std::move(pi_theta)),
      pi_ref_(std::move(pi_ref)),
      beta_(beta),
      normalize_by_length_(normalize_by_length),
      use_hidden_info_(use_hidden_info) {
  if (!(beta_ > 0.0)) throw PreconditionError("CriticModel: beta must be positive");
  if (!pi_ref_ || !(pi_ref_->vocab() == pi_theta_.vocab()) || pi_ref_->mode() != pi_theta_.mode())
    throw PreconditionError("CriticModel: reference must share vocab and mode with pi_theta");
}

TokenSeq CriticModel::prompt(std::span<const Token> observation,
                             std::span<const Token> hidden_info) const {
  TokenSeq p;
  p.reserve(hidden_info.size() + observation.size() + 1);
  if (use_hidden_info_)
    p.insert(p.end(), hidden_info.begin(), hidden_info.end());
  else
    p.push_back(kBlankHiddenToken);
  p.push_back(kSeparator);
  p.insert(p.end(), observation.begin(), observation.end());
  return p;
}

double CriticModel::advantage(std::span<const Token> observation, std::span<const Token> action,
                              std::span<const Token> hidden_info) const {
  return advantage_for_prompt(prompt(observation, hidden_info), action);
}

double CriticModel::advantage_for_prompt(std::span<const Token> prompt,
                                         std::span<const Token> action) const {
  const auto lp = pi_theta_.action_logprob(prompt, action);
  const auto lr = pi_ref_->action_logprob(prompt, action);
  double sum = 0.0;
  for (std::size_t l = 0; l < action.size(); ++l) sum += lp.per_token[l] - lr.per_token[l];
  return normalize_by_length_ ? sum / static_cast<double>(action.size()) : sum;
}

void CriticModel::accumulate_advantage_grad(std::span<const Token> prompt,
                                            std::span<const Token> action, double scale,
                                            Gradient& out) const {
  const double s = normalize_by_length_ ? scale / static_cast<double>(action.size()) : scale;
  pi_theta_.accumulate_logprob_grad(pi_theta_.encode(prompt), action, s, out);
}

void CriticModel::save(const std::filesystem::path& theta_path) const { pi_theta_.save(theta_path); }

namespace {

double trajectory_advantage(const CriticModel& critic, const Trajectory& traj,
                            std::span<const Token> hidden_info) {
  double sum = 0.0;
  for (const auto& turn : traj.turns())
    sum += critic.advantage(turn.observation, turn.action, hidden_info);
  return sum;
}

void accumulate_trajectory_grad(const CriticModel& critic, const Trajectory& traj,
                                std::span<const Token> hidden_info, double scale, Gradient& out) {
  for (const auto& turn : traj.turns())
    critic.accumulate_advantage_grad(critic.prompt(turn.observation, hidden_info), turn.action,
                                     scale, out);
}

}  // namespace

double bt_margin(const CriticModel& critic, const TrajectoryPair& pair,
                 std::span<const Token> hidden_info) {
  return critic.beta() * trajectory_advantage(critic, pair.chosen(), hidden_info) -
         critic.beta() * trajectory_advantage(critic, pair.rejected(), hidden_info);
}

double bt_loss(const CriticModel& critic, const TrajectoryPair& pair,
               std::span<const Token> hidden_info) {
  return preference_loss(bt_margin(critic, pair, hidden_info));
}

double accumulate_bt_grad(const CriticModel& critic, const TrajectoryPair& pair,
                          std::span<const Token> hidden_info, double scale, Gradient& out) {
  const double margin = bt_margin(critic, pair, hidden_info);
  const double dm = scale * preference_loss_grad(margin) * critic.beta();
  accumulate_trajectory_grad(critic, pair.chosen(), hidden_info, dm, out);
  accumulate_trajectory_grad(critic, pair.rejected(), hidden_info, -dm, out);
  return preference_loss(margin);
}

CriticReport train_critic(CriticModel& critic, std::span<const TrajectoryPair> pairs,
                          const HiddenInfoLookup& hidden_info, const OptConfig& opt) {
  if (pairs.empty()) throw PreconditionError("train_critic: no preference pairs");
  if (opt.batch_size == 0) throw PreconditionError("train_critic: batch_size must be >= 1");

  auto mean_loss = [&] {
    double total = 0.0;
    for (const auto& p : pairs) total += bt_loss(critic, p, hidden_info(p.task_id()));
    return total / static_cast<double>(pairs.size());
  };

  CriticReport report;
  report.initial_loss = mean_loss();
  Rng rng(derive_seed(opt.seed, "train-critic"));
  std::vector<std::size_t> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
      const std::size_t end = std::min(order.size(), start + opt.batch_size);
      const double inv = 1.0 / static_cast<double>(end - start);
      Gradient grad;
      double batch_bt = 0.0;
      Gradient nll_grad;
      double nll = 0.0;
      std::size_t nll_tokens = 0;
      for (std::size_t k = start; k < end; ++k) {
        const auto& pair = pairs[order[k]];
        const auto& c = hidden_info(pair.task_id());
        batch_bt += accumulate_bt_grad(critic, pair, c, inv, grad);
        if (opt.nll_coef > 0.0) {
          for (const auto& turn : pair.chosen().turns()) {
            const auto prompt = critic.prompt(turn.observation, c);
            const auto enc = critic.pi_theta().encode(prompt);
            nll -= critic.pi_theta().action_logprob(enc, turn.action).total;
            nll_tokens += turn.action.size();
            // ∇NLL = −∇log π
            critic.pi_theta().accumulate_logprob_grad(enc, turn.action, -1.0, nll_grad);
          }
        }
      }
      double objective = batch_bt * inv;
      if (nll_tokens > 0) {
        objective += opt.nll_coef * nll / static_cast<double>(nll_tokens);
        grad.add(nll_grad, opt.nll_coef / static_cast<double>(nll_tokens));
      }
      if (!std::isfinite(objective) || !std::isfinite(grad.squared_norm())) {
        std::ostringstream msg;
        msg << "train_critic: non-finite loss at epoch " << epoch << ", batch " << batches
            << " (bt=" << batch_bt * inv << ", nll=" << nll << ")";
        throw NonFiniteError(msg.str());
      }
      critic.pi_theta().apply(grad, -opt.learning_rate);
      epoch_total += objective;
      ++batches;
      ++report.steps;
    }
    report.epoch_losses.push_back(epoch_total / static_cast<double>(batches));
  }

  double total = 0.0;
  std::size_t correct = 0;
  for (const auto& p : pairs) {
    const double m = bt_margin(critic, p, hidden_info(p.task_id()));
    total += preference_loss(m);
    correct += (m > 0.0);
  }
  report.final_loss = total / static_cast<double>(pairs.size());
  report.pair_accuracy = static_cast<double>(correct) / static_cast<double>(pairs.size());
  return report;
}

}  // namespace sweet
