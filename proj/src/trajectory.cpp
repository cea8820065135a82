#include "sweet/trajectory.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

namespace sweet {

namespace {
std::atomic<std::uint64_t> g_hidden_reads{0};
constexpr int kSchemaVersion = 1;
}  // namespace

std::uint64_t hidden_info_reads() { return g_hidden_reads.load(); }

Task::Task(std::string task_id, TokenSeq initial_observation, TokenSeq hidden_info, int horizon,
           std::string evaluator_id)
    : task_id_(std::move(task_id)),
      initial_observation_(std::move(initial_observation)),
      hidden_info_(std::move(hidden_info)),
      horizon_(horizon),
      evaluator_id_(std::move(evaluator_id)) {
  if (horizon_ < 1) throw PreconditionError("Task: horizon must be >= 1");
}

const TokenSeq& Task::training_time_info() const {
  g_hidden_reads.fetch_add(1, std::memory_order_relaxed);
  return hidden_info_;
}

std::string to_string(Termination t) {
  return t == Termination::kAnswerToken ? "answer_token" : "horizon_exhausted";
}

Termination termination_from_string(const std::string& s) {
  if (s == "answer_token") return Termination::kAnswerToken;
  if (s == "horizon_exhausted") return Termination::kHorizonExhausted;
  throw std::invalid_argument("unknown termination '" + s + "'");
}

double cumulative_reward(std::span<const TurnRecord> turns) {
  if (turns.empty()) throw PreconditionError("cumulative_reward: empty trajectory");
  double total = 0.0;
  for (const auto& t : turns) total += t.reward;
  return total;
}

double cumulative_reward(const Trajectory& traj) { return cumulative_reward(traj.turns()); }

Trajectory::Trajectory(std::string task_id, std::vector<TurnRecord> turns,
                       Termination terminated_by)
    : task_id_(std::move(task_id)), turns_(std::move(turns)), terminated_by_(terminated_by) {
  for (std::size_t i = 0; i < turns_.size(); ++i) {
    const auto& t = turns_[i];
    if (t.turn_index != static_cast<int>(i) + 1)
      throw PreconditionError("Trajectory: turn indices must be consecutive from 1");
    if (t.action.empty()) throw PreconditionError("Trajectory: empty action");
    if (i + 1 < turns_.size()) {
      TokenSeq expected = t.observation;
      expected.insert(expected.end(), t.action.begin(), t.action.end());
      expected.insert(expected.end(), t.simulator_response.begin(), t.simulator_response.end());
      if (turns_[i + 1].observation != expected)
        throw PreconditionError("Trajectory: observation at turn " + std::to_string(i + 2) +
                                " is not the appended history");
    }
  }
  cumulative_reward_ = sweet::cumulative_reward(turns_);
}

TrajectoryPair::TrajectoryPair(Trajectory chosen, Trajectory rejected)
    : chosen_(std::move(chosen)), rejected_(std::move(rejected)) {
  if (chosen_.task_id() != rejected_.task_id())
    throw PreconditionError("TrajectoryPair: trajectories belong to different tasks");
  if (!(chosen_.cumulative_reward() > rejected_.cumulative_reward()))
    throw PreconditionError("TrajectoryPair: chosen must strictly dominate rejected");
}

std::vector<TrajectoryPair> make_trajectory_pairs(std::span<const Trajectory> dataset,
                                                  const PairingOptions& options) {
  if (options.min_gap < 0) throw PreconditionError("make_trajectory_pairs: min_gap < 0");
  std::vector<std::string> order;
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    auto [it, inserted] = groups.try_emplace(dataset[i].task_id());
    if (inserted) order.push_back(dataset[i].task_id());
    it->second.push_back(i);
  }

  Rng rng(options.seed);
  std::vector<TrajectoryPair> pairs;
  for (const auto& id : order) {
    const auto& members = groups[id];
    std::vector<std::pair<std::size_t, std::size_t>> candidates;
    for (std::size_t a = 0; a < members.size(); ++a) {
      for (std::size_t b = a + 1; b < members.size(); ++b) {
        const auto& ta = dataset[members[a]];
        const auto& tb = dataset[members[b]];
        const double gap = ta.cumulative_reward() - tb.cumulative_reward();
        if (std::abs(gap) <= options.min_gap) continue;
        if (gap > 0)
          candidates.emplace_back(members[a], members[b]);
        else
          candidates.emplace_back(members[b], members[a]);
      }
    }
    if (options.max_pairs_per_task > 0 && candidates.size() > options.max_pairs_per_task) {
      std::vector<std::size_t> idx(candidates.size());
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      rng.shuffle(idx);
      idx.resize(options.max_pairs_per_task);
      std::sort(idx.begin(), idx.end());
      std::vector<std::pair<std::size_t, std::size_t>> kept;
      for (auto i : idx) kept.push_back(candidates[i]);
      candidates = std::move(kept);
    }
    for (auto [c, r] : candidates) pairs.emplace_back(dataset[c], dataset[r]);
  }
  return pairs;
}

// ---- JSON ----

void to_json(nlohmann::json& j, const Task& t) {
  j = nlohmann::json{{"v", kSchemaVersion},
                     {"task_id", t.task_id()},
                     {"obs", t.initial_observation()},
                     {"hidden", t.training_time_info()},
                     {"horizon", t.horizon()},
                     {"evaluator", t.evaluator_id()}};
}

void from_json(const nlohmann::json& j, Task& t) {
  t = Task(j.at("task_id").get<std::string>(), j.at("obs").get<TokenSeq>(),
           j.at("hidden").get<TokenSeq>(), j.at("horizon").get<int>(),
           j.at("evaluator").get<std::string>());
}

void to_json(nlohmann::json& j, const TurnRecord& r) {
  j = nlohmann::json{{"t", r.turn_index},
                     {"obs", r.observation},
                     {"act", r.action},
                     {"resp", r.simulator_response},
                     {"r", r.reward}};
}

void from_json(const nlohmann::json& j, TurnRecord& r) {
  r.turn_index = j.at("t").get<int>();
  r.observation = j.at("obs").get<TokenSeq>();
  r.action = j.at("act").get<TokenSeq>();
  r.simulator_response = j.at("resp").get<TokenSeq>();
  r.reward = j.at("r").get<double>();
}

void to_json(nlohmann::json& j, const Trajectory& t) {
  j = nlohmann::json{{"v", kSchemaVersion},
                     {"task_id", t.task_id()},
                     {"terminated_by", to_string(t.terminated_by())},
                     {"turns", t.turns()}};
}

void from_json(const nlohmann::json& j, Trajectory& t) {
  t = Trajectory(j.at("task_id").get<std::string>(), j.at("turns").get<std::vector<TurnRecord>>(),
                 termination_from_string(j.at("terminated_by").get<std::string>()));
}

void to_json(nlohmann::json& j, const TrajectoryPair& p) {
  j = nlohmann::json{{"v", kSchemaVersion},
                     {"task_id", p.task_id()},
                     {"chosen", p.chosen()},
                     {"rejected", p.rejected()}};
}

TrajectoryPair pair_from_json(const nlohmann::json& j) {
  TrajectoryPair p(j.at("chosen").get<Trajectory>(), j.at("rejected").get<Trajectory>());
  if (p.task_id() != j.at("task_id").get<std::string>())
    throw PreconditionError("pair task_id does not match its trajectories");
  return p;
}

JsonlError::JsonlError(const std::string& path, std::size_t line, const std::string& what)
    : std::runtime_error(path + ":" + std::to_string(line) + ": " + what), line_(line) {}

namespace {

template <class T>
T decode(const nlohmann::json& j) {
  if constexpr (std::is_same_v<T, TrajectoryPair>)
    return pair_from_json(j);
  else
    return j.get<T>();
}

}  // namespace

template <class T>
void save_jsonl(const std::filesystem::path& path, std::span<const T> items) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  for (const auto& item : items) out << nlohmann::json(item).dump() << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

template <class T>
std::vector<T> load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<T> items;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      items.push_back(decode<T>(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw JsonlError(path.string(), lineno, e.what());
    }
  }
  return items;
}

template void save_jsonl<Task>(const std::filesystem::path&, std::span<const Task>);
template void save_jsonl<Trajectory>(const std::filesystem::path&, std::span<const Trajectory>);
template void save_jsonl<TrajectoryPair>(const std::filesystem::path&,
                                         std::span<const TrajectoryPair>);
template std::vector<Task> load_jsonl<Task>(const std::filesystem::path&);
template std::vector<Trajectory> load_jsonl<Trajectory>(const std::filesystem::path&);
template std::vector<TrajectoryPair> load_jsonl<TrajectoryPair>(const std::filesystem::path&);

}  // namespace sweet
