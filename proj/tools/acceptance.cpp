// Acceptance run: prints one PASS/FAIL line per criterion and exits 0 once
// every line is printed. Tolerances and thresholds are fixed below.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "CLI11.hpp"
#include "sweet/audit.hpp"
#include "sweet/pipeline.hpp"
#include "sweet/theory.hpp"
#include "sweet/tiny_mdp.hpp"

namespace fs = std::filesystem;
using namespace sweet;

namespace {

constexpr double kReturnIdentityTol = 1e-9;
constexpr double kReturnIdentitySeconds = 10.0;
constexpr double kGradientIdentityTol = 1e-8;
constexpr double kGradientIdentitySeconds = 60.0;
constexpr double kAuditTol = 1e-4;
constexpr double kZeroInitTol = 1e-12;
constexpr double kOrderingMargin = 0.03;
constexpr double kOrderingAlpha = 0.05;
constexpr double kPipelineSeconds = 30.0 * 60.0;
constexpr std::size_t kBonN = 8;
constexpr double kBonHiddenGap = 0.05;
constexpr double kRandomFlatSigmas = 2.0;
constexpr double kNoNormSuccessDrop = 0.10;
constexpr double kScalingSigmas = 1.0;
const std::vector<std::size_t> kScalingSizes{250, 1000, 4000};
const std::vector<std::uint64_t> kSeeds{1, 2, 3, 4, 5};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Stat {
  double mean = 0.0;
  double stderr = 0.0;  // of the mean, across seeds
};

Stat stat_of(const std::vector<double>& xs) {
  Stat s;
  const double n = static_cast<double>(xs.size());
  for (double x : xs) s.mean += x;
  s.mean /= n;
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.stderr = std::sqrt(ss / (n - 1.0) / n);
  }
  return s;
}

/// One-sided paired t-test of mean(a − b) > 0; returns the p-value.
double paired_one_sided_p(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i) d.push_back(a[i] - b[i]);
  const auto s = stat_of(d);
  if (s.stderr == 0.0) return s.mean > 0.0 ? 0.0 : 1.0;
  const boost::math::students_t dist(static_cast<double>(d.size() - 1));
  return boost::math::cdf(boost::math::complement(dist, s.mean / s.stderr));
}

// Mirror of stdout under <out>, since ctest hides the output of passing tests.
std::FILE* g_log = nullptr;

void emit(const std::string& line) {
  std::printf("%s\n", line.c_str());
  std::fflush(stdout);
  if (g_log != nullptr) {
    std::fprintf(g_log, "%s\n", line.c_str());
    std::fflush(g_log);
  }
}

void report(int id, bool pass, const std::string& text) {
  emit("criterion " + std::to_string(id) + (pass ? " PASS: " : " FAIL: ") + text);
}

void info(const std::string& text) { emit("  info: " + text); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---- theory ----

void criterion_return_identity() {
  const auto t0 = Clock::now();
  double literal = 0.0, pair_gap = 0.0, telescoped = 0.0;
  std::size_t trajectories = 0;
  for (int m = 0; m < 20; ++m) {
    const auto mdp = random_tiny_mdp(derive_seed(1, "lemma1-mdp", m));
    for (int k = 0; k < 5; ++k) {
      const auto pol = random_tiny_policy(mdp, derive_seed(1, "lemma1-policy", m * 100 + k));
      const auto r = check_lemma1(mdp, pol);
      literal = std::max(literal, r.max_return_gap);
      pair_gap = std::max(pair_gap, r.max_pair_margin_gap);
      telescoped = std::max(telescoped, r.max_telescoped_gap);
      trajectories += r.trajectories;
    }
  }
  const double secs = seconds_since(t0);
  report(1, literal <= kReturnIdentityTol && secs < kReturnIdentitySeconds,
         fmt("max |sum r - sum A| = %.3e (tol %.0e) over %zu trajectories, %.2f s", literal,
             kReturnIdentityTol, trajectories, secs));
  info(fmt("sum r - sum A = V(o1, c), not 0; |sum r - sum A - V(o1,c)| max %.3e, "
           "pair margin (reward vs advantage) gap max %.3e",
           telescoped, pair_gap));
}

void criterion_gradient_identity() {
  const auto t0 = Clock::now();
  double dev = 0.0, form = 0.0;
  for (int m = 0; m < 10; ++m) {
    const auto mdp = random_tiny_mdp(derive_seed(1, "lemma2-mdp", m));
    const auto pol = random_tiny_policy(mdp, derive_seed(1, "lemma2-policy", m));
    const auto r = check_lemma2(mdp, pol);
    dev = std::max(dev, r.max_deviation);
    form = std::max(form, r.max_form_deviation);
  }
  const double secs = seconds_since(t0);
  report(2, dev <= kGradientIdentityTol && secs < kGradientIdentitySeconds,
         fmt("max three-way gradient deviation %.3e (tol %.0e) on 10 MDPs, |C| = 2, %.2f s", dev,
             kGradientIdentityTol, secs));
  info(fmt("occupancy form vs trajectory form deviation %.3e", form));
}

void criterion_audits() {
  bool ok = true;
  std::string text;
  for (const auto& a : run_gradient_audits(derive_seed(1, "audits"))) {
    ok = ok && a.max_rel_error < kAuditTol && a.coords > 0;
    text += fmt("%s %.2e (%zu coords) ", a.name.c_str(), a.max_rel_error, a.coords);
  }
  report(3, ok, text + fmt("tol %.0e", kAuditTol));
}

void criterion_zero_init() {
  const SlotEnv env{EnvConfig{}};
  const auto agent = heuristic_agent(env.config());
  Rng rng(derive_seed(1, "zero-init"));
  std::vector<Trajectory> data;
  std::unordered_map<std::string, TokenSeq> hidden;
  for (std::size_t i = 0; i < 40; ++i) {
    const auto task = env.sample_task(derive_seed(1, "zero-init-task", i));
    hidden[task.task_id()] = task.training_time_info();
    for (int k = 0; k < 4; ++k) data.push_back(run_agent(env, task, agent, rng));
  }
  const auto pairs = make_trajectory_pairs(data, PairingOptions{0.0, 0, 1});
  double adv_max = 0.0, bt_dev = 0.0, dpo_dev = 0.0;
  std::size_t prefs = 0;
  for (auto mode : {ModelMode::kLinearHashed, ModelMode::kTabularExact}) {
    const auto fresh = mode == ModelMode::kLinearHashed ? PolicyModel::linear(env.action_vocab())
                                                        : PolicyModel::tabular(env.action_vocab());
    const CriticModel critic(fresh);
    for (const auto& t : data)
      for (const auto& turn : t.turns())
        adv_max = std::max(
            adv_max, std::abs(critic.advantage(turn.observation, turn.action, hidden[t.task_id()])));
    for (const auto& p : pairs)
      bt_dev = std::max(bt_dev, std::abs(bt_loss(critic, p, hidden[p.task_id()]) - std::log(2.0)));
    for (const auto& t : data)
      for (const auto& turn : t.turns()) {
        const auto cands = generate_candidates(fresh, turn.observation, 16,
                                               env.config().action_max_len(), rng);
        std::vector<double> scores(cands.size(), 0.0);
        const auto pref = rank_and_pair(cands, scores, turn.observation, rng);
        if (!pref) continue;
        ++prefs;
        dpo_dev = std::max(dpo_dev, std::abs(dpo_loss(fresh, fresh, *pref, 0.1) - std::log(2.0)));
      }
  }
  report(4, adv_max == 0.0 && bt_dev <= kZeroInitTol && dpo_dev <= kZeroInitTol && prefs > 0,
         fmt("fresh critic max |A| = %.1e, max |bt_loss - ln 2| = %.1e over %zu pairs; fresh actor "
             "max |dpo_loss - ln 2| = %.1e over %zu preferences (tol %.0e)",
             adv_max, bt_dev, pairs.size() * 2, dpo_dev, prefs, kZeroInitTol));
}

// ---- end-to-end runs ----

struct SeedResults {
  std::map<std::string, ResultRow> rows;
  std::vector<CurvePoint> curve;
};

SeedResults load_seed(const fs::path& dir) {
  SeedResults r;
  for (const auto& row : read_results_csv(dir / "results.csv")) r.rows[row.algorithm] = row;
  if (fs::exists(dir / "bon.csv")) r.curve = read_curve_csv(dir / "bon.csv");
  return r;
}

std::vector<double> column(const std::vector<SeedResults>& runs, const std::string& algo,
                           bool length = false) {
  std::vector<double> xs;
  for (const auto& r : runs) {
    const auto& row = r.rows.at(algo);
    xs.push_back(length ? row.mean_action_length : row.success_rate);
  }
  return xs;
}

std::vector<double> curve_at(const std::vector<SeedResults>& runs, const std::string& scorer,
                             std::size_t n) {
  std::vector<double> xs;
  for (const auto& r : runs)
    for (const auto& p : r.curve)
      if (p.scorer == scorer && p.n == n) xs.push_back(p.success_rate);
  return xs;
}

/// Binomial stderr of a success rate pooled over every seed's episodes at (scorer, n).
double pooled_stderr(const std::vector<SeedResults>& runs, const std::string& scorer,
                     std::size_t n) {
  double hits = 0.0, total = 0.0;
  for (const auto& r : runs)
    for (const auto& p : r.curve)
      if (p.scorer == scorer && p.n == n) {
        hits += p.success_rate * static_cast<double>(p.episodes);
        total += static_cast<double>(p.episodes);
      }
  const double q = hits / total;
  return std::sqrt(q * (1.0 - q) / total);
}

void criterion_ordering(const std::vector<SeedResults>& runs, double secs) {
  const auto sweet = column(runs, "sweet"), mtdpo = column(runs, "mtdpo"),
             rft = column(runs, "rft"), zs = column(runs, "zero_shot");
  const auto s = stat_of(sweet), m = stat_of(mtdpo), r = stat_of(rft), z = stat_of(zs);
  const double p = paired_one_sided_p(sweet, mtdpo);
  const bool order = s.mean > m.mean && m.mean > r.mean && r.mean > z.mean;
  report(5,
         order && s.mean - m.mean >= kOrderingMargin && p < kOrderingAlpha &&
             secs < kPipelineSeconds,
         fmt("success sweet %.3f, mtdpo %.3f, rft %.3f, zero_shot %.3f (need strictly decreasing); "
             "sweet - mtdpo = %+.3f (need >= %.2f), paired one-sided p = %.3g (need < %.2f); "
             "5-seed run %.0f s",
             s.mean, m.mean, r.mean, z.mean, s.mean - m.mean, kOrderingMargin, p, kOrderingAlpha,
             secs));
}

void criterion_best_of_n(const std::vector<SeedResults>& runs) {
  const auto crit = stat_of(curve_at(runs, "critic_advantage", kBonN));
  const auto nh = stat_of(curve_at(runs, "critic_no_hidden_info", kBonN));
  const auto val = stat_of(curve_at(runs, "value_head", kBonN));
  std::vector<std::size_t> ns;
  for (const auto& p : runs.front().curve)
    if (p.scorer == "random") ns.push_back(p.n);
  const double r1 = stat_of(curve_at(runs, "random", ns.front())).mean;
  const double se1 = pooled_stderr(runs, "random", ns.front());
  double worst = 0.0;
  bool flat = true;
  for (auto n : ns) {
    const double rn = stat_of(curve_at(runs, "random", n)).mean;
    const double se = std::hypot(se1, pooled_stderr(runs, "random", n));
    worst = std::max(worst, std::abs(rn - r1) / se);
    flat = flat && std::abs(rn - r1) <= kRandomFlatSigmas * se;
  }
  report(6, crit.mean - nh.mean >= kBonHiddenGap && crit.mean > val.mean && flat,
         fmt("N=%zu: critic %.3f vs no-hidden critic %.3f (gap %+.3f, need >= %.2f), value head "
             "%.3f; random scorer max |rate(N) - rate(1)| = %.2f stderr (need <= %.0f)",
             kBonN, crit.mean, nh.mean, crit.mean - nh.mean, kBonHiddenGap, val.mean, worst,
             kRandomFlatSigmas));
  std::string curve = "success by N:";
  for (const std::string sc : {"critic_advantage", "critic_no_hidden_info", "value_head", "random"}) {
    curve += " " + sc;
    for (auto n : ns) curve += fmt(" %.3f", stat_of(curve_at(runs, sc, n)).mean);
    curve += ";";
  }
  info(curve);
}

void criterion_no_norm(const std::vector<SeedResults>& runs) {
  const auto sl = stat_of(column(runs, "sweet", true)), nl = stat_of(column(runs, "sweet_no_norm", true));
  const auto ss = stat_of(column(runs, "sweet")), ns = stat_of(column(runs, "sweet_no_norm"));
  report(7, nl.mean < sl.mean && ss.mean - ns.mean >= kNoNormSuccessDrop,
         fmt("mean action length without normalization %.3f vs %.3f (need lower); success %.3f vs "
             "%.3f (need >= %.2f lower)",
             nl.mean, sl.mean, ns.mean, ss.mean, kNoNormSuccessDrop));
}

RunConfig sized(std::size_t trajectories) {
  auto cfg = parse_config_text("", "<defaults>");
  set_config_value(cfg, "data.trajectories", std::to_string(trajectories));
  return cfg;
}

void criterion_scaling(const fs::path& root, unsigned jobs) {
  std::vector<Stat> sweet, mtdpo;
  for (auto size : kScalingSizes) {
    const auto dir = root / ("scale-" + std::to_string(size));
    std::vector<SeedResults> runs;
    for (auto seed : kSeeds) {
      const RunContext ctx(sized(size), seed, dir, jobs);
      for (const auto& st : std::vector<std::string>{"gen-tasks", "rollout"})
        if (!ctx.up_to_date(stage_outputs(st))) st == "gen-tasks" ? stage_gen_tasks(ctx) : stage_rollout(ctx);
      if (!ctx.up_to_date({"critic_main.json", "critic_main.meta.json"})) stage_train_critic(ctx, "main");
      for (const std::string algo : {"sweet", "mtdpo"})
        if (!ctx.up_to_date({"actor_" + algo + ".json"})) stage_train_actor(ctx, algo);
      if (!ctx.up_to_date({"results.csv"})) stage_eval(ctx);
      runs.push_back(load_seed(ctx.dir()));
    }
    sweet.push_back(stat_of(column(runs, "sweet")));
    mtdpo.push_back(stat_of(column(runs, "mtdpo")));
  }
  bool monotone = true;
  std::string text = "sweet success";
  for (std::size_t i = 0; i < kScalingSizes.size(); ++i) {
    text += fmt(" %zu: %.3f +- %.3f", kScalingSizes[i], sweet[i].mean, sweet[i].stderr);
    if (i > 0)
      monotone = monotone && sweet[i].mean >= sweet[i - 1].mean -
                                                  kScalingSigmas * std::hypot(sweet[i].stderr,
                                                                              sweet[i - 1].stderr);
  }
  const auto& sl = sweet.back();
  const auto& ml = mtdpo.back();
  report(8, monotone && sl.mean >= ml.mean,
         text + fmt("; non-decreasing within %.0f combined stderr: %s; at %zu sweet %.3f vs mtdpo "
                    "%.3f (need >=)",
                    kScalingSigmas, monotone ? "yes" : "no", kScalingSizes.back(), sl.mean, ml.mean));
  std::string m = "mtdpo success";
  for (std::size_t i = 0; i < kScalingSizes.size(); ++i)
    m += fmt(" %zu: %.3f", kScalingSizes[i], mtdpo[i].mean);
  info(m);
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    files[fs::relative(e.path(), root).string()] = ss.str();
  }
  return files;
}

void criterion_determinism(const fs::path& root, unsigned jobs) {
  const std::string text =
      "data.trajectories = 240\n"
      "data.eval_tasks = 50\n"
      "eval.episodes = 200\n"
      "bon.episodes = 60\n"
      "seed_actor.episodes = 600\n"
      "theory.lemma1_mdps = 4\n"
      "theory.lemma2_mdps = 2\n";
  const auto cfg = parse_config_text(text, "<determinism>");
  const auto a = root / "det-a", b = root / "det-b";
  fs::remove_all(a);
  fs::remove_all(b);
  // The second run uses a different worker count; results must not depend on it.
  for (auto seed : std::vector<std::uint64_t>{1, 2}) {
    run_pipeline(RunContext(cfg, seed, a, 1), false);
    run_pipeline(RunContext(cfg, seed, b, std::max(2U, jobs)), false);
  }
  build_report(a);
  build_report(b);
  const auto fa = snapshot(a), fb = snapshot(b);
  std::size_t csvs = 0, differing = 0;
  std::string first;
  for (const auto& [name, bytes] : fa) {
    if (name.ends_with(".csv")) ++csvs;
    const auto it = fb.find(name);
    if (it == fb.end() || it->second != bytes) {
      ++differing;
      if (first.empty()) first = name;
    }
  }
  differing += fb.size() > fa.size() ? fb.size() - fa.size() : 0;
  report(9, differing == 0 && csvs > 0,
         fmt("two runs of 2 seeds: %zu files (%zu CSVs) compared, %zu differ%s", fa.size(), csvs,
             differing, first.empty() ? "" : (" (first: " + first + ")").c_str()));
}

// Control: SWEET driven by a scorer that ignores action quality.
void random_scorer_control(const fs::path& main_root, const std::vector<SeedResults>& runs) {
  std::vector<double> control, zs;
  for (std::size_t i = 0; i < kSeeds.size(); ++i) {
    const auto seed = kSeeds[i];
    const RunContext ctx(parse_config_text("", "<defaults>"), seed, main_root, 1);
    const auto& cfg = ctx.config();
    const auto zero_shot = PolicyModel::load(ctx.path("zero_shot.json"));
    const auto offline = load_jsonl<Trajectory>(ctx.path("offline.jsonl"));
    const auto tasks = load_jsonl<Task>(ctx.path("tasks_eval.jsonl"));
    const std::uint64_t salt = derive_seed(seed, "random-scorer");
    CandidateScorer scorer = [salt](std::span<const Token> obs, std::span<const Token> action,
                                    const std::string&) {
      Fnv1a h(salt);
      for (const auto& t : obs) h.token(t);
      h.u64(0);
      for (const auto& t : action) h.token(t);
      return static_cast<double>(mix64(h.value()) >> 11) * 0x1.0p-53;
    };
    auto actor = zero_shot;
    auto opt = cfg.actor;
    opt.seed = derive_seed(seed, "actor-random-control");
    opt.max_action_len = cfg.env.action_max_len();
    train_actor_sweet(actor, zero_shot, scorer, offline, opt);
    const SlotEnv env(cfg.env);
    control.push_back(
        eval_success(actor, env, tasks, derive_seed(seed, "eval"), cfg.eval_episodes).success_rate);
    zs.push_back(runs[i].rows.at("zero_shot").success_rate);
  }
  const auto c = stat_of(control), z = stat_of(zs);
  info(fmt("random-scorer control: success %.3f vs zero_shot %.3f, paired one-sided p = %.3g",
           c.mean, z.mean, paired_one_sided_p(control, zs)));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria run"};
  std::string out = "acceptance_out";
  unsigned jobs = 1;
  bool resume = false;
  app.add_option("--out", out, "working directory for pipeline runs");
  app.add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);
  app.add_flag("--resume", resume, "reuse up-to-date artifacts from an earlier run");
  CLI11_PARSE(app, argc, argv);

  try {
    const fs::path root(out);
    if (!resume) fs::remove_all(root);
    fs::create_directories(root);
    g_log = std::fopen((root / "acceptance.txt").c_str(), "w");

    criterion_return_identity();
    criterion_gradient_identity();
    criterion_audits();
    criterion_zero_init();

    const auto main_root = root / "main";
    const auto t0 = Clock::now();
    std::vector<SeedResults> runs;
    for (auto seed : kSeeds) {
      const RunContext ctx(parse_config_text("", "<defaults>"), seed, main_root, jobs);
      run_pipeline(ctx, resume);
      runs.push_back(load_seed(ctx.dir()));
    }
    const double secs = seconds_since(t0);
    build_report(main_root);
    criterion_ordering(runs, secs);
    {
      const auto s = stat_of(column(runs, "sweet")), z = stat_of(column(runs, "zero_shot"));
      info(fmt("sweet vs zero_shot: %+.3f (target >= +0.10)", s.mean - z.mean));
    }
    random_scorer_control(main_root, runs);
    criterion_best_of_n(runs);
    criterion_no_norm(runs);
    criterion_scaling(root, jobs);
    criterion_determinism(root, jobs);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "acceptance run aborted: %s\n", e.what());
    return 2;
  }
  return 0;
}
