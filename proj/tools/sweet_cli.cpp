// Command-line front end for the training and evaluation pipeline.
//
// Exit codes: 0 success, 1 invalid input, 2 stage failure, 3 theory check failure.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "sweet/pipeline.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kValidation = 1;
constexpr int kStageFailure = 2;
constexpr int kTheoryFailure = 3;

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  unsigned jobs = 1;
  std::string algo = "all";
  std::string variant = "all";
  bool fresh = false;
};

sweet::RunConfig load_config(const Options& o) {
  return o.config_path.empty() ? sweet::parse_config_text("", "<defaults>")
                               : sweet::parse_config_file(o.config_path);
}

std::vector<std::uint64_t> seeds_of(const Options& o, const sweet::RunConfig& cfg) {
  return o.seed ? std::vector<std::uint64_t>{*o.seed} : cfg.seeds;
}

void print_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  std::cout << in.rdbuf();
}

void add_common(CLI::App* cmd, Options& o, bool with_seed = true) {
  cmd->add_option("--config", o.config_path, "key = value config file (defaults when omitted)")
      ->check(CLI::ExistingFile);
  if (with_seed) cmd->add_option("--seed", o.seed, "run a single seed instead of run.seeds");
  cmd->add_option("--out", o.out, "results root; runs live in <out>/seed-<s>/");
  cmd->add_option("--jobs", o.jobs, "worker threads for rollouts and evaluation")
      ->check(CLI::PositiveNumber);
}

int run(const std::string& name, const Options& o) {
  const auto cfg = load_config(o);
  if (name == "report") {
    const auto rows = sweet::build_report(o.out);
    std::printf("%-16s %5s %18s %18s\n", "algorithm", "seeds", "success", "action_len");
    for (const auto& r : rows)
      std::printf("%-16s %5zu %9.3f ± %6.3f %9.3f ± %6.3f\n", r.algorithm.c_str(), r.seeds,
                  r.success_mean, r.success_stderr, r.length_mean, r.length_stderr);
    return kOk;
  }
  bool theory_ok = true;
  for (auto seed : seeds_of(o, cfg)) {
    const sweet::RunContext ctx(cfg, seed, o.out, o.jobs);
    std::fprintf(stderr, "[seed %llu] %s\n", static_cast<unsigned long long>(seed), name.c_str());
    if (name == "gen-tasks") sweet::stage_gen_tasks(ctx);
    else if (name == "rollout") sweet::stage_rollout(ctx);
    else if (name == "train-critic") sweet::stage_train_critic(ctx, o.variant);
    else if (name == "train-actor") sweet::stage_train_actor(ctx, o.algo);
    else if (name == "eval") {
      sweet::stage_eval(ctx);
      print_table(ctx.path("results.csv"));
    } else if (name == "best-of-n") {
      sweet::stage_best_of_n(ctx);
      print_table(ctx.path("bon.csv"));
    } else if (name == "verify-theory") {
      theory_ok = sweet::stage_verify_theory(ctx) && theory_ok;
      print_table(ctx.path("theory.csv"));
    } else if (name == "pipeline") {
      theory_ok = sweet::run_pipeline(ctx, !o.fresh) && theory_ok;
    }
  }
  if (name == "pipeline") sweet::build_report(o.out);
  return theory_ok ? kOk : kTheoryFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Turn-level credit assignment for collaborative agents: data, training, evaluation"};
  app.require_subcommand(1);
  Options o;
  const std::vector<std::pair<std::string, std::string>> commands{
      {"gen-tasks", "sample training and evaluation tasks"},
      {"rollout", "pretrain the zero-shot actor and collect offline trajectories"},
      {"train-critic", "fit the turn-wise advantage critic (and its ablations)"},
      {"train-actor", "optimize the actor with the selected algorithm"},
      {"eval", "success rates of every trained actor"},
      {"best-of-n", "Best-of-N scaling curves per scorer"},
      {"verify-theory", "exact checks of the return/advantage identities and gradient audits"},
      {"report", "aggregate results across seeds"},
      {"pipeline", "run every stage in order, resuming from up-to-date artifacts"},
  };
  for (const auto& [name, help] : commands) {
    auto* cmd = app.add_subcommand(name, help);
    add_common(cmd, o, name != "report");
    if (name == "train-actor")
      cmd->add_option("--algo", o.algo, "sweet|sweet_no_norm|rft|mtdpo|value|all")
          ->check(CLI::IsMember({"sweet", "sweet_no_norm", "rft", "mtdpo", "value", "all"}));
    if (name == "train-critic")
      cmd->add_option("--variant", o.variant, "main|no_hidden|no_norm|all")
          ->check(CLI::IsMember({"main", "no_hidden", "no_norm", "all"}));
    if (name == "pipeline") cmd->add_flag("--fresh", o.fresh, "rerun every stage");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }
  const std::string name = app.get_subcommands().front()->get_name();
  try {
    return run(name, o);
  } catch (const sweet::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kValidation;
  } catch (const sweet::PreconditionError& e) {
    std::fprintf(stderr, "invalid input: %s\n", e.what());
    return kValidation;
  } catch (const sweet::StageError& e) {
    std::fprintf(stderr, "stage failed: %s\n", e.what());
    return kStageFailure;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "%s failed: %s\n", name.c_str(), e.what());
    return kStageFailure;
  }
}
