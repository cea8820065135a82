#include "sweet/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace sweet {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

long long to_int(const std::string& v) {
  long long x = 0;
  const auto* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, x);
  if (ec != std::errc() || p != end) throw ConfigError("expected an integer, got '" + v + "'");
  return x;
}

std::size_t to_count(const std::string& v) {
  const long long x = to_int(v);
  if (x < 0) throw ConfigError("expected a non-negative integer, got '" + v + "'");
  return static_cast<std::size_t>(x);
}

double to_real(const std::string& v) {
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    throw ConfigError("expected a number, got '" + v + "'");
  }
  if (used != v.size()) throw ConfigError("expected a number, got '" + v + "'");
  return x;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("expected true or false, got '" + v + "'");
}

template <class T>
std::vector<T> to_list(const std::string& v) {
  std::vector<T> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(static_cast<T>(to_count(trim(item))));
  if (out.empty()) throw ConfigError("expected a comma-separated list");
  return out;
}

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}
std::string fmt(bool x) { return x ? "true" : "false"; }
template <class T>
std::string fmt_list(const std::vector<T>& xs) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? "," : "") + std::to_string(xs[i]);
  return s;
}

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define SWEET_INT(key, member)                                                                   \
  {key,                                                                                          \
   {[](RunConfig& c, const std::string& v) { c.member = static_cast<decltype(c.member)>(to_int(v)); }, \
    [](const RunConfig& c) { return std::to_string(c.member); }}}
#define SWEET_COUNT(key, member)                                                                 \
  {key,                                                                                          \
   {[](RunConfig& c, const std::string& v) { c.member = static_cast<decltype(c.member)>(to_count(v)); }, \
    [](const RunConfig& c) { return std::to_string(c.member); }}}
#define SWEET_REAL(key, member)                                                  \
  {key,                                                                          \
   {[](RunConfig& c, const std::string& v) { c.member = to_real(v); },           \
    [](const RunConfig& c) { return fmt(static_cast<double>(c.member)); }}}
#define SWEET_BOOL(key, member)                                                  \
  {key,                                                                          \
   {[](RunConfig& c, const std::string& v) { c.member = to_bool(v); },           \
    [](const RunConfig& c) { return fmt(static_cast<bool>(c.member)); }}}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = {
      SWEET_INT("env.attributes", env.n_attributes),
      SWEET_INT("env.values", env.n_values),
      SWEET_INT("env.horizon", env.horizon),
      SWEET_INT("env.tests", env.n_tests),
      SWEET_INT("env.max_action_len", env.max_action_len),
      SWEET_REAL("env.responder_noise", env.responder_noise),
      {"env.reward_mode",
       {[](RunConfig& c, const std::string& v) {
          try {
            c.env.reward_mode = reward_mode_from_string(v);
          } catch (const std::exception& e) {
            throw ConfigError(e.what());
          }
        },
        [](const RunConfig& c) { return to_string(c.env.reward_mode); }}},

      SWEET_COUNT("model.width", features.width),
      SWEET_INT("model.max_order", features.max_order),
      SWEET_COUNT("model.hash_seed", features.hash_seed),
      SWEET_BOOL("model.bias", features.bias),
      SWEET_BOOL("model.count_features", features.count_features),
      SWEET_BOOL("model.prefix_features", features.prefix_features),
      SWEET_BOOL("model.position_conjoined", features.position_conjoined),

      SWEET_COUNT("seed_actor.episodes", seed_actor.pretrain_episodes),
      SWEET_INT("seed_actor.epochs", seed_actor.epochs),
      SWEET_REAL("seed_actor.lr", seed_actor.learning_rate),
      SWEET_COUNT("seed_actor.batch", seed_actor.batch_size),
      SWEET_REAL("heuristic.answer_base", seed_actor.heuristic.answer_prob_base),
      SWEET_REAL("heuristic.answer_per_known", seed_actor.heuristic.answer_prob_per_known),
      SWEET_REAL("heuristic.repeat_query", seed_actor.heuristic.repeat_query_prob),
      SWEET_REAL("heuristic.copy_error", seed_actor.heuristic.copy_error_prob),
      SWEET_REAL("heuristic.malformed", seed_actor.heuristic.malformed_prob),

      SWEET_COUNT("data.trajectories", trajectories),
      SWEET_COUNT("data.rollouts_per_task", rollouts_per_task),
      SWEET_COUNT("data.eval_tasks", eval_tasks),
      SWEET_COUNT("data.pair_cap", pair_cap),
      SWEET_REAL("data.pair_min_gap", pair_min_gap),

      SWEET_REAL("critic.lr", critic.learning_rate),
      SWEET_REAL("critic.beta", critic_beta),
      SWEET_REAL("critic.nll_coef", critic.nll_coef),
      SWEET_COUNT("critic.batch", critic.batch_size),
      SWEET_INT("critic.epochs", critic.epochs),
      SWEET_BOOL("critic.normalize", critic_normalize),

      SWEET_REAL("actor.lr", actor.learning_rate),
      SWEET_REAL("actor.beta", actor.beta),
      SWEET_REAL("actor.nll_coef", actor.nll_coef),
      SWEET_COUNT("actor.batch", actor.batch_size),
      SWEET_INT("actor.epochs", actor.epochs),
      SWEET_COUNT("actor.candidates", actor.n_candidates),
      SWEET_INT("actor.rounds", actor_rounds),

      SWEET_REAL("rft.lr", rft.learning_rate),
      SWEET_COUNT("rft.batch", rft.batch_size),
      SWEET_INT("rft.epochs", rft.epochs),
      SWEET_REAL("rft.threshold", rft_threshold),

      SWEET_REAL("mtdpo.lr", mtdpo.learning_rate),
      SWEET_REAL("mtdpo.beta", mtdpo.beta),
      SWEET_REAL("mtdpo.nll_coef", mtdpo.nll_coef),
      SWEET_COUNT("mtdpo.batch", mtdpo.batch_size),
      SWEET_INT("mtdpo.epochs", mtdpo.epochs),

      SWEET_REAL("value.lr", value.learning_rate),
      SWEET_COUNT("value.batch", value.batch_size),
      SWEET_INT("value.epochs", value.epochs),

      SWEET_COUNT("eval.episodes", eval_episodes),
      {"bon.n_values",
       {[](RunConfig& c, const std::string& v) { c.bon_n = to_list<std::size_t>(v); },
        [](const RunConfig& c) { return fmt_list(c.bon_n); }}},
      SWEET_COUNT("bon.episodes", bon_episodes),

      {"run.seeds",
       {[](RunConfig& c, const std::string& v) { c.seeds = to_list<std::uint64_t>(v); },
        [](const RunConfig& c) { return fmt_list(c.seeds); }}},

      SWEET_INT("theory.lemma1_mdps", lemma1_mdps),
      SWEET_INT("theory.lemma1_policies", lemma1_policies),
      SWEET_INT("theory.lemma2_mdps", lemma2_mdps),
  };
  return table;
}

#undef SWEET_INT
#undef SWEET_COUNT
#undef SWEET_REAL
#undef SWEET_BOOL

}  // namespace

std::size_t RunConfig::train_tasks() const {
  return rollouts_per_task == 0 ? 0 : (trajectories + rollouts_per_task - 1) / rollouts_per_task;
}

void RunConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  try {
    env.validate();
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  require(features.width > 0, "model.width must be positive");
  require(features.max_order >= 1, "model.max_order must be >= 1");
  require(seed_actor.pretrain_episodes > 0, "seed_actor.episodes must be positive");
  require(seed_actor.epochs >= 0, "seed_actor.epochs must be >= 0");
  require(seed_actor.batch_size > 0, "seed_actor.batch must be positive");
  require(trajectories > 0, "data.trajectories must be positive");
  require(rollouts_per_task >= 2, "data.rollouts_per_task must be >= 2 to form pairs");
  require(eval_tasks > 0, "data.eval_tasks must be positive");
  require(pair_min_gap >= 0.0, "data.pair_min_gap must be >= 0");
  require(critic.learning_rate > 0.0, "critic.lr must be positive");
  require(critic_beta > 0.0, "critic.beta must be positive");
  require(critic.nll_coef >= 0.0, "critic.nll_coef must be >= 0");
  require(critic.batch_size > 0, "critic.batch must be positive");
  require(critic.epochs >= 0, "critic.epochs must be >= 0");
  for (const auto* a : {&actor, &rft, &mtdpo}) {
    require(a->learning_rate > 0.0, "actor learning rates must be positive");
    require(a->batch_size > 0, "actor batch sizes must be positive");
    require(a->epochs >= 0, "actor epochs must be >= 0");
    require(a->beta > 0.0, "actor beta must be positive");
    require(a->nll_coef >= 0.0, "actor nll_coef must be >= 0");
  }
  require(actor.n_candidates >= 2, "actor.candidates must be >= 2");
  require(actor_rounds >= 1, "actor.rounds must be >= 1");
  require(value.learning_rate > 0.0 && value.batch_size > 0 && value.epochs >= 0,
          "value.lr and value.batch must be positive, value.epochs >= 0");
  require(eval_episodes > 0, "eval.episodes must be positive");
  require(bon_episodes > 0, "bon.episodes must be positive");
  for (auto n : bon_n) require(n >= 1, "bon.n_values entries must be >= 1");
  require(!seeds.empty(), "run.seeds must be nonempty");
  require(lemma1_mdps >= 1 && lemma1_policies >= 1 && lemma2_mdps >= 1,
          "theory counts must be >= 1");
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto& table = fields();
  const auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown key '" + key + "'");
  try {
    it->second.set(cfg, value);
  } catch (const ConfigError& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

RunConfig parse_config_text(const std::string& text, const std::string& source) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  std::map<std::string, std::size_t> seen;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto where = source + ":" + std::to_string(line_no) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (auto [it, fresh] = seen.emplace(key, line_no); !fresh)
      throw ConfigError(where + "duplicate key '" + key + "' (first set on line " +
                        std::to_string(it->second) + ")");
    try {
      set_config_value(cfg, key, value);
      cfg.validate();
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return cfg;
}

RunConfig parse_config_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path.string() + ": cannot open config file");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path.string());
}

std::string canonical_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& [key, field] : fields()) out += key + " = " + field.get(cfg) + "\n";
  return out;
}

std::string config_hash(const RunConfig& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(hash_bytes(canonical_config(cfg))));
  return buf;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [key, field] : fields()) keys.push_back(key);
  return keys;
}

}  // namespace sweet
