#include "sweet/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "json.hpp"
#include "sweet/audit.hpp"
#include "sweet/parallel.hpp"
#include "sweet/theory.hpp"
#include "sweet/tiny_mdp.hpp"

namespace sweet {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kManifest = "manifest.json";

std::string hex64(std::uint64_t x) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string f6(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", x);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

/// Runs `body`, converting any failure into a StageError for `stage`.
template <class F>
auto guarded(const std::string& stage, F&& body) {
  try {
    return body();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

class HiddenTable {
 public:
  explicit HiddenTable(std::span<const Task> tasks) {
    for (const auto& t : tasks) table_.emplace(t.task_id(), t.training_time_info());
  }
  HiddenInfoLookup lookup() const {
    return [this](const std::string& id) -> const TokenSeq& {
      const auto it = table_.find(id);
      if (it == table_.end()) throw std::runtime_error("no hidden info for task " + id);
      return it->second;
    };
  }

 private:
  std::unordered_map<std::string, TokenSeq> table_;
};

std::vector<Trajectory> collect_rollouts(const PolicyModel& actor, const SlotEnv& env,
                                         std::span<const Task> tasks, std::size_t total,
                                         std::size_t per_task, std::uint64_t seed, unsigned jobs) {
  std::vector<Trajectory> out(total);
  parallel_for(total, jobs, [&](std::size_t i) {
    Rng rng(derive_seed(seed, "rollout", i));
    out[i] = run_episode(actor, env, tasks[i / per_task], rng);
  });
  return out;
}

void write_training_csv(const fs::path& path, const std::vector<double>& epoch_losses,
                        double initial_loss, double final_loss, double margin, double accuracy,
                        bool has_initial, bool has_accuracy) {
  std::string s = "epoch,loss,margin,accuracy\n";
  if (has_initial) s += "0," + f6(initial_loss) + ",,\n";
  for (std::size_t e = 0; e < epoch_losses.size(); ++e)
    s += std::to_string(e + 1) + "," + f6(epoch_losses[e]) + ",,\n";
  s += "final," + f6(final_loss) + "," + f6(margin) + "," + (has_accuracy ? f6(accuracy) : "") +
       "\n";
  write_file(path, s);
}

CriticModel fresh_critic(const PolicyModel& init, const RunConfig& cfg,
                         const std::string& variant) {
  const bool normalize = variant == "no_norm" ? false : cfg.critic_normalize;
  const bool hidden = variant != "no_hidden";
  return CriticModel(init, cfg.critic_beta, normalize, hidden);
}

ActorOptConfig with_seed(ActorOptConfig opt, const RunContext& ctx, const std::string& label) {
  opt.seed = derive_seed(ctx.seed(), label);
  opt.max_action_len = ctx.config().env.action_max_len();
  return opt;
}

}  // namespace

std::string file_checksum(const fs::path& path) { return hex64(hash_bytes(read_file(path))); }

RunContext::RunContext(RunConfig config, std::uint64_t seed, fs::path out_root, unsigned jobs)
    : config_(std::move(config)),
      seed_(seed),
      dir_(std::move(out_root) / ("seed-" + std::to_string(seed))),
      jobs_(std::max(1U, jobs)) {
  config_.validate();
}

fs::path RunContext::require(const std::string& stage, const std::string& artifact) const {
  const auto p = path(artifact);
  if (!fs::exists(p)) throw StageError(stage, "missing artifact " + p.string());
  return p;
}

void RunContext::record(const std::vector<std::string>& artifacts) const {
  json m;
  const auto mp = path(kManifest);
  if (fs::exists(mp)) {
    try {
      m = json::parse(read_file(mp));
    } catch (const std::exception&) {
      m = json::object();
    }
  }
  const auto hash = config_hash(config_);
  if (!m.contains("config_hash") || m["config_hash"] != hash) m["artifacts"] = json::object();
  m["config_hash"] = hash;
  m["seed"] = seed_;
  for (const auto& a : artifacts) m["artifacts"][a] = file_checksum(path(a));
  write_file(mp, m.dump(2) + "\n");
  write_file(path("config.txt"), canonical_config(config_));
}

bool RunContext::up_to_date(const std::vector<std::string>& artifacts) const {
  const auto mp = path(kManifest);
  if (!fs::exists(mp)) return false;
  json m;
  try {
    m = json::parse(read_file(mp));
  } catch (const std::exception&) {
    return false;
  }
  if (!m.contains("config_hash") || m["config_hash"] != config_hash(config_)) return false;
  for (const auto& a : artifacts) {
    if (!fs::exists(path(a)) || !m["artifacts"].contains(a)) return false;
    if (m["artifacts"][a] != file_checksum(path(a))) return false;
  }
  return true;
}

std::vector<std::string> stage_outputs(const std::string& stage) {
  if (stage == "gen-tasks") return {"tasks_train.jsonl", "tasks_eval.jsonl"};
  if (stage == "rollout") return {"zero_shot.json", "offline.jsonl", "pairs.jsonl"};
  if (stage == "train-critic") {
    std::vector<std::string> out;
    for (const auto& v : kCriticVariants) {
      out.push_back("critic_" + v + ".json");
      out.push_back("critic_" + v + ".meta.json");
      out.push_back("train_critic_" + v + ".csv");
    }
    return out;
  }
  if (stage == "train-actor") {
    std::vector<std::string> out;
    for (const auto& a : kActorAlgos) {
      out.push_back(a == "value" ? "value_head.json" : "actor_" + a + ".json");
      out.push_back("train_actor_" + a + ".csv");
    }
    return out;
  }
  if (stage == "eval") return {"results.csv"};
  if (stage == "best-of-n") return {"bon.csv"};
  if (stage == "verify-theory") return {"theory.csv"};
  throw PreconditionError("unknown stage '" + stage + "'");
}

void save_critic(const CriticModel& critic, const fs::path& theta_path,
                 const fs::path& reference_path) {
  critic.save(theta_path);
  json meta;
  meta["v"] = 1;
  meta["beta"] = critic.beta();
  meta["normalize_by_length"] = critic.normalize_by_length();
  meta["use_hidden_info"] = critic.use_hidden_info();
  meta["reference"] = reference_path.filename().string();
  meta["reference_fingerprint"] = hex64(critic.pi_ref().fingerprint());
  auto meta_path = theta_path;
  meta_path.replace_extension(".meta.json");
  write_file(meta_path, meta.dump(2) + "\n");
}

CriticModel load_critic(const fs::path& theta_path, const fs::path& reference_path) {
  auto meta_path = theta_path;
  meta_path.replace_extension(".meta.json");
  if (!fs::exists(theta_path)) throw std::runtime_error("missing artifact " + theta_path.string());
  if (!fs::exists(meta_path)) throw std::runtime_error("missing artifact " + meta_path.string());
  const auto meta = json::parse(read_file(meta_path));
  auto ref = std::make_shared<const PolicyModel>(PolicyModel::load(reference_path));
  if (hex64(ref->fingerprint()) != meta.at("reference_fingerprint").get<std::string>())
    throw std::runtime_error("critic reference mismatch: " + reference_path.string() +
                             " is not the reference of " + theta_path.string());
  return CriticModel(PolicyModel::load(theta_path), std::move(ref), meta.at("beta").get<double>(),
                     meta.at("normalize_by_length").get<bool>(),
                     meta.at("use_hidden_info").get<bool>());
}

// ---- stages ----

void stage_gen_tasks(const RunContext& ctx) {
  guarded("gen-tasks", [&] {
    fs::create_directories(ctx.dir());
    const SlotEnv env(ctx.config().env);
    std::vector<Task> train, eval;
    for (std::size_t i = 0; i < ctx.config().train_tasks(); ++i)
      train.push_back(env.sample_task(derive_seed(ctx.seed(), "train-task", i)));
    for (std::size_t i = 0; i < ctx.config().eval_tasks; ++i)
      eval.push_back(env.sample_task(derive_seed(ctx.seed(), "eval-task", i)));
    save_jsonl(ctx.path("tasks_train.jsonl"), train);
    save_jsonl(ctx.path("tasks_eval.jsonl"), eval);
    ctx.record(stage_outputs("gen-tasks"));
  });
}

void stage_rollout(const RunContext& ctx) {
  const std::string stage = "rollout";
  guarded(stage, [&] {
    const auto& cfg = ctx.config();
    const auto tasks = load_jsonl<Task>(ctx.require(stage, "tasks_train.jsonl"));
    if (tasks.size() != cfg.train_tasks())
      throw StageError(stage, "tasks_train.jsonl does not match the configured dataset size");
    const SlotEnv env(cfg.env);
    auto seed_cfg = cfg.seed_actor;
    seed_cfg.features = cfg.features;
    const auto zero_shot = make_seed_actor(env, seed_cfg, ctx.seed());
    zero_shot.save(ctx.path("zero_shot.json"));
    const auto offline = collect_rollouts(zero_shot, env, tasks, cfg.trajectories,
                                          cfg.rollouts_per_task, ctx.seed(), ctx.jobs());
    save_jsonl(ctx.path("offline.jsonl"), offline);
    const auto pairs = make_trajectory_pairs(
        offline, PairingOptions{cfg.pair_min_gap, cfg.pair_cap, derive_seed(ctx.seed(), "pairs")});
    save_jsonl(ctx.path("pairs.jsonl"), pairs);
    ctx.record(stage_outputs(stage));
  });
}

void stage_train_critic(const RunContext& ctx, const std::string& variant) {
  const std::string stage = "train-critic";
  if (variant == "all") {
    for (const auto& v : kCriticVariants) stage_train_critic(ctx, v);
    return;
  }
  if (std::find(kCriticVariants.begin(), kCriticVariants.end(), variant) == kCriticVariants.end())
    throw PreconditionError("unknown critic variant '" + variant + "'");
  guarded(stage, [&] {
    const auto& cfg = ctx.config();
    const auto ref_path = ctx.require(stage, "zero_shot.json");
    const auto pairs = load_jsonl<TrajectoryPair>(ctx.require(stage, "pairs.jsonl"));
    const auto tasks = load_jsonl<Task>(ctx.require(stage, "tasks_train.jsonl"));
    const HiddenTable hidden(tasks);
    auto critic = fresh_critic(PolicyModel::load(ref_path), cfg, variant);
    auto opt = cfg.critic;
    opt.seed = derive_seed(ctx.seed(), "critic");
    const auto rep = train_critic(critic, pairs, hidden.lookup(), opt);
    double margin = 0.0;
    for (const auto& p : pairs) margin += bt_margin(critic, p, hidden.lookup()(p.task_id()));
    margin /= static_cast<double>(pairs.size());
    const std::string name = "critic_" + variant;
    save_critic(critic, ctx.path(name + ".json"), ref_path);
    write_training_csv(ctx.path("train_" + name + ".csv"), rep.epoch_losses, rep.initial_loss,
                       rep.final_loss, margin, rep.pair_accuracy, true, true);
    ctx.record({name + ".json", name + ".meta.json", "train_" + name + ".csv"});
  });
}

void stage_train_actor(const RunContext& ctx, const std::string& algo) {
  const std::string stage = "train-actor";
  if (algo == "all") {
    for (const auto& a : kActorAlgos) stage_train_actor(ctx, a);
    return;
  }
  if (std::find(kActorAlgos.begin(), kActorAlgos.end(), algo) == kActorAlgos.end())
    throw PreconditionError("unknown actor algorithm '" + algo + "'");
  guarded(stage, [&] {
    const auto& cfg = ctx.config();
    const auto ref_path = ctx.require(stage, "zero_shot.json");
    const auto zero_shot = PolicyModel::load(ref_path);
    const auto report_path = ctx.path("train_actor_" + algo + ".csv");

    if (algo == "value") {
      const auto offline = load_jsonl<Trajectory>(ctx.require(stage, "offline.jsonl"));
      const auto tasks = load_jsonl<Task>(ctx.require(stage, "tasks_train.jsonl"));
      const HiddenTable hidden(tasks);
      ValueHead head(cfg.features);
      auto opt = cfg.value;
      opt.seed = derive_seed(ctx.seed(), "value");
      const auto rep = train_value_head(head, offline, hidden.lookup(), opt);
      head.save(ctx.path("value_head.json"));
      write_training_csv(report_path, rep.epoch_losses, rep.initial_bce, rep.final_bce, 0.0, 0.0,
                         true, false);
      ctx.record({"value_head.json", "train_actor_value.csv"});
      return;
    }

    auto actor = zero_shot;
    ActorReport rep;
    if (algo == "sweet" || algo == "sweet_no_norm") {
      const std::string variant = algo == "sweet" ? "main" : "no_norm";
      const auto critic_path = ctx.require(stage, "critic_" + variant + ".json");
      ctx.require(stage, "critic_" + variant + ".meta.json");
      const auto tasks = load_jsonl<Task>(ctx.require(stage, "tasks_train.jsonl"));
      const HiddenTable hidden(tasks);
      auto offline = load_jsonl<Trajectory>(ctx.require(stage, "offline.jsonl"));
      auto critic = load_critic(critic_path, ref_path);
      PolicyModel ref = zero_shot;
      const SlotEnv env(cfg.env);
      for (int round = 0; round < cfg.actor_rounds; ++round) {
        const std::string tag = "actor-" + algo + "-" + std::to_string(round);
        if (round > 0) {
          // Later rounds refit the critic on fresh rollouts of the improved actor.
          ref = actor;
          offline = collect_rollouts(actor, env, tasks, cfg.trajectories, cfg.rollouts_per_task,
                                     derive_seed(ctx.seed(), tag), ctx.jobs());
          const auto pairs = make_trajectory_pairs(
              offline, PairingOptions{cfg.pair_min_gap, cfg.pair_cap, derive_seed(ctx.seed(), tag)});
          critic = fresh_critic(actor, cfg, variant);
          auto opt = cfg.critic;
          opt.seed = derive_seed(ctx.seed(), tag + "-critic");
          train_critic(critic, pairs, hidden.lookup(), opt);
        }
        rep = train_actor_sweet(actor, ref, critic_scorer(critic, hidden.lookup()), offline,
                                with_seed(cfg.actor, ctx, tag));
      }
    } else if (algo == "rft") {
      const auto offline = load_jsonl<Trajectory>(ctx.require(stage, "offline.jsonl"));
      rep = train_rejection_ft(actor, offline, cfg.rft_threshold, with_seed(cfg.rft, ctx, "rft"));
    } else {
      const auto pairs = load_jsonl<TrajectoryPair>(ctx.require(stage, "pairs.jsonl"));
      rep = train_multiturn_dpo(actor, zero_shot, pairs, with_seed(cfg.mtdpo, ctx, "mtdpo"));
    }
    const double last = rep.epoch_losses.empty() ? 0.0 : rep.epoch_losses.back();
    write_training_csv(report_path, rep.epoch_losses, 0.0, last, rep.mean_margin, 0.0, false,
                       false);
    actor.save(ctx.path("actor_" + algo + ".json"));
    ctx.record({"actor_" + algo + ".json", "train_actor_" + algo + ".csv"});
  });
}

void stage_eval(const RunContext& ctx) {
  const std::string stage = "eval";
  guarded(stage, [&] {
    const auto& cfg = ctx.config();
    const SlotEnv env(cfg.env);
    const auto tasks = load_jsonl<Task>(ctx.require(stage, "tasks_eval.jsonl"));
    std::vector<ResultRow> rows;
    auto evaluate = [&](const std::string& name, const PolicyModel& actor) {
      const auto r = eval_success(actor, env, tasks, derive_seed(ctx.seed(), "eval"),
                                  cfg.eval_episodes, ctx.jobs());
      rows.push_back({name, r.success_rate, r.stderr_success, r.mean_reward,
                      r.mean_action_length, r.episodes});
    };
    evaluate("zero_shot", PolicyModel::load(ctx.require(stage, "zero_shot.json")));
    for (const auto& algo : kActorAlgos) {
      if (algo == "value") continue;
      const auto p = ctx.path("actor_" + algo + ".json");
      if (fs::exists(p)) evaluate(algo, PolicyModel::load(p));
    }
    write_results_csv(ctx.path("results.csv"), rows);
    ctx.record({"results.csv"});
  });
}

void stage_best_of_n(const RunContext& ctx) {
  const std::string stage = "best-of-n";
  guarded(stage, [&] {
    const auto& cfg = ctx.config();
    const SlotEnv env(cfg.env);
    const auto ref_path = ctx.require(stage, "zero_shot.json");
    const auto actor = PolicyModel::load(ref_path);
    const auto tasks = load_jsonl<Task>(ctx.require(stage, "tasks_eval.jsonl"));
    const auto critic = load_critic(ctx.require(stage, "critic_main.json"), ref_path);
    const auto critic_nh = load_critic(ctx.require(stage, "critic_no_hidden.json"), ref_path);
    const auto head = ValueHead::load(ctx.require(stage, "value_head.json"));
    const auto s_critic = Scorer::critic(critic);
    const auto s_nh = Scorer::critic(critic_nh);
    const auto s_value = Scorer::value_head(head);
    const auto s_random = Scorer::random();
    const std::vector<const Scorer*> scorers{&s_critic, &s_nh, &s_value, &s_random};
    const auto points = scaling_curve(actor, env, scorers, cfg.bon_n, tasks,
                                      derive_seed(ctx.seed(), "bon"), cfg.bon_episodes, ctx.jobs());
    write_curve_csv(ctx.path("bon.csv"), points);
    ctx.record({"bon.csv"});
  });
}

bool stage_verify_theory(const RunContext& ctx) {
  return guarded("verify-theory", [&] {
    fs::create_directories(ctx.dir());
    const auto& cfg = ctx.config();
    struct Row {
      std::string check;
      double value;
      double tolerance;
      std::string status;
    };
    std::vector<Row> rows;
    auto bound = [&](const std::string& name, double v, double tol) {
      rows.push_back({name, v, tol, v <= tol ? "pass" : "fail"});
    };
    double pair_gap = 0.0, telescoped = 0.0, literal = 0.0, centering = 0.0;
    for (int m = 0; m < cfg.lemma1_mdps; ++m) {
      const auto mdp = random_tiny_mdp(derive_seed(ctx.seed(), "lemma1-mdp", m));
      for (int k = 0; k < cfg.lemma1_policies; ++k) {
        const auto pol = random_tiny_policy(mdp, derive_seed(ctx.seed(), "lemma1-policy", m * 100 + k));
        const auto r = check_lemma1(mdp, pol);
        pair_gap = std::max(pair_gap, r.max_pair_margin_gap);
        telescoped = std::max(telescoped, r.max_telescoped_gap);
        literal = std::max(literal, r.max_return_gap);
        const auto t = exact_qva(mdp, pol);
        for (int o = 0; o < mdp.n_obs(); ++o) {
          const auto p = action_probs(pol, o);
          for (int c = 0; c < mdp.n_hidden; ++c) {
            double s = 0.0;
            for (int a = 0; a < mdp.n_actions; ++a) s += p[a] * t.A(o, a, c);
            centering = std::max(centering, std::abs(s));
          }
        }
      }
    }
    bound("lemma1_pair_margin_gap", pair_gap, 1e-9);
    bound("lemma1_telescoped_gap", telescoped, 1e-9);
    // The bare return/advantage sums differ by V(o1, c); reported, not asserted.
    rows.push_back({"lemma1_return_minus_advantage", literal, 1e-9, "info"});
    bound("advantage_centering", centering, 1e-12);
    {
      const auto mdp = stochastic_counterexample_mdp();
      const auto r = check_lemma1(mdp, make_tiny_policy(mdp));
      rows.push_back({"lemma1_stochastic_counterexample", r.max_pair_margin_gap, 0.01,
                      r.max_pair_margin_gap > 0.01 ? "pass" : "fail"});
    }
    double dev = 0.0, form_dev = 0.0, fd_err = 0.0;
    for (int m = 0; m < cfg.lemma2_mdps; ++m) {
      const auto mdp = random_tiny_mdp(derive_seed(ctx.seed(), "lemma2-mdp", m));
      auto pol = random_tiny_policy(mdp, derive_seed(ctx.seed(), "lemma2-policy", m));
      const auto r = check_lemma2(mdp, pol);
      dev = std::max(dev, r.max_deviation);
      form_dev = std::max(form_dev, r.max_form_deviation);
      const auto keys = tiny_policy_params(mdp, pol);
      std::vector<double*> coords;
      for (const auto& k : keys) coords.push_back(&pol.mutable_param(k));
      Rng rng(derive_seed(ctx.seed(), "lemma2-fd", m));
      fd_err = std::max(fd_err, finite_diff_audit([&] { return expected_return(mdp, pol); }, coords,
                                                  r.grad_return, rng));
    }
    bound("lemma2_three_way_deviation", dev, 1e-8);
    bound("lemma2_occupancy_vs_trajectory", form_dev, 1e-8);
    bound("lemma2_return_gradient_fd", fd_err, 1e-6);
    for (const auto& a : run_gradient_audits(derive_seed(ctx.seed(), "audits")))
      bound("grad_audit_" + a.name, a.max_rel_error, 1e-4);

    std::string s = "check,max_violation,tolerance,status\n";
    bool ok = true;
    for (const auto& r : rows) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.3e,%.0e", r.value, r.tolerance);
      s += r.check + "," + buf + "," + r.status + "\n";
      ok = ok && r.status != "fail";
    }
    write_file(ctx.path("theory.csv"), s);
    ctx.record({"theory.csv"});
    return ok;
  });
}

bool run_pipeline(const RunContext& ctx, bool resume) {
  bool theory_ok = true;
  for (const auto& stage : kStages) {
    if (resume && ctx.up_to_date(stage_outputs(stage))) continue;
    if (stage == "gen-tasks") stage_gen_tasks(ctx);
    else if (stage == "rollout") stage_rollout(ctx);
    else if (stage == "train-critic") stage_train_critic(ctx);
    else if (stage == "train-actor") stage_train_actor(ctx);
    else if (stage == "eval") stage_eval(ctx);
    else if (stage == "best-of-n") stage_best_of_n(ctx);
    else if (stage == "verify-theory") theory_ok = stage_verify_theory(ctx);
  }
  if (resume && ctx.up_to_date(stage_outputs("verify-theory"))) {
    const auto text = read_file(ctx.path("theory.csv"));
    theory_ok = text.find(",fail\n") == std::string::npos;
  }
  return theory_ok;
}

// ---- result tables ----

void write_results_csv(const fs::path& path, std::span<const ResultRow> rows) {
  std::string s = "algorithm,success_rate,stderr,mean_reward,mean_action_length,episodes\n";
  for (const auto& r : rows)
    s += r.algorithm + "," + f6(r.success_rate) + "," + f6(r.stderr_success) + "," +
         f6(r.mean_reward) + "," + f6(r.mean_action_length) + "," + std::to_string(r.episodes) +
         "\n";
  write_file(path, s);
}

std::vector<ResultRow> read_results_csv(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  std::getline(in, line);
  std::vector<ResultRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c = split_csv(line);
    if (c.size() != 6) throw std::runtime_error("malformed results row in " + path.string());
    rows.push_back({c[0], std::stod(c[1]), std::stod(c[2]), std::stod(c[3]), std::stod(c[4]),
                    static_cast<std::size_t>(std::stoull(c[5]))});
  }
  return rows;
}

std::vector<CurvePoint> read_curve_csv(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  std::getline(in, line);
  std::vector<CurvePoint> pts;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c = split_csv(line);
    if (c.size() != 5) throw std::runtime_error("malformed curve row in " + path.string());
    pts.push_back({c[0], static_cast<std::size_t>(std::stoull(c[1])), std::stod(c[2]),
                   std::stod(c[3]), static_cast<std::size_t>(std::stoull(c[4]))});
  }
  return pts;
}

namespace {

std::pair<double, double> mean_stderr(const std::vector<double>& xs) {
  const double n = static_cast<double>(xs.size());
  double m = 0.0;
  for (double x : xs) m += x;
  m /= n;
  if (xs.size() < 2) return {m, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / (n - 1.0) / n)};
}

}  // namespace

std::vector<SummaryRow> build_report(const fs::path& root) {
  const std::string stage = "report";
  if (!fs::is_directory(root)) throw StageError(stage, "no results directory " + root.string());
  std::vector<fs::path> runs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && e.path().filename().string().rfind("seed-", 0) == 0 &&
        fs::exists(e.path() / "results.csv"))
      runs.push_back(e.path());
  std::sort(runs.begin(), runs.end());
  if (runs.empty()) throw StageError(stage, "no results.csv under " + root.string());

  std::vector<std::string> order;
  std::map<std::string, std::array<std::vector<double>, 3>> by_algo;
  std::vector<std::string> curve_order;
  std::map<std::pair<std::string, std::size_t>, std::vector<CurvePoint>> by_point;
  for (const auto& run : runs) {
    for (const auto& r : read_results_csv(run / "results.csv")) {
      if (!by_algo.count(r.algorithm)) order.push_back(r.algorithm);
      auto& v = by_algo[r.algorithm];
      v[0].push_back(r.success_rate);
      v[1].push_back(r.mean_reward);
      v[2].push_back(r.mean_action_length);
    }
    if (fs::exists(run / "bon.csv"))
      for (const auto& p : read_curve_csv(run / "bon.csv")) {
        const auto key = std::make_pair(p.scorer, p.n);
        if (!by_point.count(key)) curve_order.push_back(p.scorer + "\n" + std::to_string(p.n));
        by_point[key].push_back(p);
      }
  }

  std::vector<SummaryRow> summary;
  std::string s =
      "algorithm,seeds,success_mean,success_stderr,reward_mean,reward_stderr,"
      "action_length_mean,action_length_stderr\n";
  for (const auto& algo : order) {
    const auto& v = by_algo[algo];
    SummaryRow row;
    row.algorithm = algo;
    row.seeds = v[0].size();
    std::tie(row.success_mean, row.success_stderr) = mean_stderr(v[0]);
    std::tie(row.reward_mean, row.reward_stderr) = mean_stderr(v[1]);
    std::tie(row.length_mean, row.length_stderr) = mean_stderr(v[2]);
    summary.push_back(row);
    s += algo + "," + std::to_string(row.seeds) + "," + f6(row.success_mean) + "," +
         f6(row.success_stderr) + "," + f6(row.reward_mean) + "," + f6(row.reward_stderr) + "," +
         f6(row.length_mean) + "," + f6(row.length_stderr) + "\n";
  }
  write_file(root / "summary.csv", s);

  if (!by_point.empty()) {
    std::string c = "scorer,N,success_rate,stderr\n";
    for (const auto& k : curve_order) {
      const auto nl = k.find('\n');
      const auto key = std::make_pair(k.substr(0, nl), std::stoull(k.substr(nl + 1)));
      const auto& pts = by_point[key];
      std::vector<double> xs;
      for (const auto& p : pts) xs.push_back(p.success_rate);
      auto [m, se] = mean_stderr(xs);
      if (pts.size() == 1) se = pts.front().stderr;
      c += key.first + "," + std::to_string(key.second) + "," + f6(m) + "," + f6(se) + "\n";
    }
    write_file(root / "curve.csv", c);
  }
  return summary;
}

}  // namespace sweet
