#include "sweet/policy.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace sweet {

namespace {

constexpr char kTokenSep = '\x1f';
constexpr char kPrefixSep = '\x1e';
constexpr int kMaxCount = 7;
constexpr std::size_t kMaxPrefixLen = 15;
constexpr int kCheckpointVersion = 1;

std::uint32_t bucket(std::uint64_t h, std::size_t width) {
  return static_cast<std::uint32_t>(h % width);
}

// Sorts and merges duplicate buckets (collisions add up).
void canonicalize(SparseFeatures& f) {
  std::sort(f.begin(), f.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  SparseFeatures merged;
  for (const auto& [idx, v] : f) {
    if (!merged.empty() && merged.back().first == idx)
      merged.back().second += v;
    else
      merged.emplace_back(idx, v);
  }
  f = std::move(merged);
}

}  // namespace

Vocab::Vocab(std::vector<Token> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.empty()) throw PreconditionError("Vocab: empty vocabulary");
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], i).second)
      throw PreconditionError("Vocab: duplicate token '" + tokens_[i] + "'");
    if (tokens_[i] == kEndToken) end_ = i;
  }
}

std::size_t Vocab::index_of(const Token& t) const {
  auto it = index_.find(t);
  if (it == index_.end()) throw PreconditionError("unknown token '" + t + "'");
  return it->second;
}

std::string to_string(ModelMode m) {
  return m == ModelMode::kTabularExact ? "tabular_exact" : "linear_hashed";
}

ModelMode model_mode_from_string(const std::string& s) {
  if (s == "tabular_exact") return ModelMode::kTabularExact;
  if (s == "linear_hashed") return ModelMode::kLinearHashed;
  throw std::invalid_argument("unknown model mode '" + s + "'");
}

SparseFeatures hash_prompt_features(std::span<const Token> prompt, const FeatureConfig& cfg) {
  SparseFeatures out;
  if (cfg.bias) out.emplace_back(bucket(Fnv1a(cfg.hash_seed).bytes("bias").value(), cfg.width), 1.0);

  std::vector<std::span<const Token>> segments;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= prompt.size(); ++i) {
    if (i == prompt.size() || prompt[i] == kSeparator) {
      segments.push_back(prompt.subspan(start, i - start));
      start = i + 1;
    }
  }

  std::vector<std::uint32_t> present;
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const auto seg = segments[s];
    const std::uint64_t tag = segments.size() - 1 - s;
    present.clear();
    for (int n = 1; n <= cfg.max_order; ++n) {
      for (std::size_t i = 0; i + n <= seg.size(); ++i) {
        Fnv1a h(cfg.hash_seed);
        h.bytes("g").u64(tag).u64(static_cast<std::uint64_t>(n));
        for (int k = 0; k < n; ++k) h.token(seg[i + k]);
        present.push_back(bucket(h.value(), cfg.width));
      }
    }
    std::sort(present.begin(), present.end());
    present.erase(std::unique(present.begin(), present.end()), present.end());
    for (auto idx : present) out.emplace_back(idx, 1.0);

    if (cfg.count_features) {
      std::map<Token, int> counts;
      for (const auto& t : seg) ++counts[t];
      for (const auto& [tok, c] : counts) {
        const auto h = Fnv1a(cfg.hash_seed)
                           .bytes("cnt")
                           .u64(tag)
                           .token(tok)
                           .u64(static_cast<std::uint64_t>(std::min(c, kMaxCount)))
                           .value();
        out.emplace_back(bucket(h, cfg.width), 1.0);
      }
    }
  }
  canonicalize(out);
  return out;
}

// ---- Gradient ----

void Gradient::add(const Gradient& other, double s) {
  for (const auto& [k, row] : other.tabular) {
    auto& dst = tabular[k];
    if (dst.empty()) dst.assign(row.size(), 0.0);
    for (std::size_t i = 0; i < row.size(); ++i) dst[i] += s * row[i];
  }
  for (const auto& [k, row] : other.linear) {
    auto& dst = linear[k];
    if (dst.empty()) dst.assign(row.size(), 0.0);
    for (std::size_t i = 0; i < row.size(); ++i) dst[i] += s * row[i];
  }
}

void Gradient::scale(double s) {
  for (auto& [k, row] : tabular)
    for (auto& v : row) v *= s;
  for (auto& [k, row] : linear)
    for (auto& v : row) v *= s;
}

double Gradient::squared_norm() const {
  double acc = 0.0;
  for (const auto& [k, row] : tabular)
    for (double v : row) acc += v * v;
  for (const auto& [k, row] : linear)
    for (double v : row) acc += v * v;
  return acc;
}

double Gradient::at(const ParamKey& key) const {
  if (!tabular.empty()) {
    auto it = tabular.find(key.context);
    return it == tabular.end() ? 0.0 : it->second.at(key.token);
  }
  auto it = linear.find(key.feature);
  return it == linear.end() ? 0.0 : it->second.at(key.token);
}

std::vector<ParamKey> Gradient::support() const {
  std::vector<ParamKey> keys;
  for (const auto& [k, row] : tabular)
    for (std::size_t i = 0; i < row.size(); ++i) keys.push_back({k, 0, i});
  for (const auto& [k, row] : linear)
    for (std::size_t i = 0; i < row.size(); ++i) keys.push_back({"", k, i});
  return keys;
}

// ---- PolicyModel ----

PolicyModel::PolicyModel(ModelMode mode, Vocab vocab, FeatureConfig features)
    : mode_(mode), vocab_(std::move(vocab)), features_(features) {
  if (mode_ == ModelMode::kLinearHashed) {
    if (features_.width == 0) throw PreconditionError("linear model: feature width must be > 0");
    weights_.assign(features_.width * vocab_.size(), 0.0);
  }
}

PolicyModel PolicyModel::tabular(Vocab vocab) {
  return PolicyModel(ModelMode::kTabularExact, std::move(vocab), FeatureConfig{});
}

PolicyModel PolicyModel::linear(Vocab vocab, FeatureConfig features) {
  return PolicyModel(ModelMode::kLinearHashed, std::move(vocab), features);
}

EncodedPrompt PolicyModel::encode(std::span<const Token> prompt) const {
  EncodedPrompt e;
  if (mode_ == ModelMode::kTabularExact) {
    for (const auto& t : prompt) {
      e.key += t;
      e.key += kTokenSep;
    }
  } else {
    e.features = hash_prompt_features(prompt, features_);
  }
  return e;
}

SparseFeatures PolicyModel::prefix_features(std::span<const Token> prefix) const {
  SparseFeatures out;
  if (!features_.prefix_features) return out;
  const auto seed = features_.hash_seed;
  out.emplace_back(
      bucket(Fnv1a(seed).bytes("plen").u64(std::min(prefix.size(), kMaxPrefixLen)).value(),
             features_.width),
      1.0);
  // "^" anchors the start so short prefixes also encode their position.
  std::vector<Token> anchored;
  anchored.reserve(prefix.size() + 1);
  anchored.push_back("^");
  anchored.insert(anchored.end(), prefix.begin(), prefix.end());
  for (int n = 1; n <= features_.max_order && n <= static_cast<int>(anchored.size()); ++n) {
    Fnv1a h(seed);
    h.bytes("sfx").u64(static_cast<std::uint64_t>(n));
    for (std::size_t k = anchored.size() - n; k < anchored.size(); ++k) h.token(anchored[k]);
    out.emplace_back(bucket(h.value(), features_.width), 1.0);
  }
  std::vector<std::uint32_t> bag;
  for (const auto& t : prefix)
    bag.push_back(bucket(Fnv1a(seed).bytes("pbag").token(t).value(), features_.width));
  std::sort(bag.begin(), bag.end());
  bag.erase(std::unique(bag.begin(), bag.end()), bag.end());
  for (auto b : bag) out.emplace_back(b, 1.0);
  return out;
}

std::uint32_t PolicyModel::prompt_row(std::uint32_t feature, std::size_t position) const {
  if (!features_.position_conjoined) return feature;
  return bucket(Fnv1a(features_.hash_seed)
                    .bytes("pos")
                    .u64(feature)
                    .u64(std::min(position, kMaxPrefixLen))
                    .value(),
                features_.width);
}

std::string PolicyModel::tabular_key(const EncodedPrompt& prompt,
                                     std::span<const Token> prefix) const {
  std::string key = prompt.key;
  key += kPrefixSep;
  for (const auto& t : prefix) {
    key += t;
    key += kTokenSep;
  }
  return key;
}

void PolicyModel::logits(const EncodedPrompt& prompt, std::span<const Token> prefix,
                         std::vector<double>& out) const {
  const std::size_t v = vocab_.size();
  out.assign(v, 0.0);
  if (mode_ == ModelMode::kTabularExact) {
    auto it = table_.find(tabular_key(prompt, prefix));
    if (it != table_.end()) out = it->second;
    return;
  }
  auto add_row = [&](std::uint32_t f, double x) {
    const double* w = weights_.data() + static_cast<std::size_t>(f) * v;
    for (std::size_t i = 0; i < v; ++i) out[i] += x * w[i];
  };
  for (const auto& [f, x] : prompt.features) add_row(prompt_row(f, prefix.size()), x);
  for (const auto& [f, x] : prefix_features(prefix)) add_row(f, x);
}

double PolicyModel::token_logprob(std::span<const Token> prompt, std::span<const Token> prefix,
                                  const Token& token) const {
  const std::size_t idx = vocab_.index_of(token);
  std::vector<double> z;
  logits(encode(prompt), prefix, z);
  return z[idx] - logsumexp(z);
}

ActionLogProb PolicyModel::action_logprob(std::span<const Token> prompt,
                                          std::span<const Token> action) const {
  return action_logprob(encode(prompt), action);
}

ActionLogProb PolicyModel::action_logprob(const EncodedPrompt& prompt,
                                          std::span<const Token> action) const {
  if (action.empty()) throw PreconditionError("action_logprob: empty action");
  ActionLogProb out;
  out.per_token.reserve(action.size());
  std::vector<double> z;
  for (std::size_t l = 0; l < action.size(); ++l) {
    const std::size_t idx = vocab_.index_of(action[l]);
    logits(prompt, action.first(l), z);
    const double lp = z[idx] - logsumexp(z);
    out.per_token.push_back(lp);
    out.total += lp;
  }
  return out;
}

TokenSeq PolicyModel::sample_action(std::span<const Token> prompt, Rng& rng,
                                    std::size_t max_len) const {
  return sample_action(encode(prompt), rng, max_len);
}

TokenSeq PolicyModel::sample_action(const EncodedPrompt& prompt, Rng& rng,
                                    std::size_t max_len) const {
  if (max_len == 0) throw PreconditionError("sample_action: max_len must be >= 1");
  TokenSeq action;
  std::vector<double> z, p;
  const auto end = vocab_.end_index();
  while (action.size() < max_len) {
    logits(prompt, action, z);
    softmax(z, p);
    const std::size_t idx = rng.categorical(p);
    action.push_back(vocab_.token(idx));
    if (end && idx == *end) break;
  }
  return action;
}

Gradient PolicyModel::logprob_grad(std::span<const Token> prompt,
                                   std::span<const Token> action) const {
  Gradient g;
  accumulate_logprob_grad(encode(prompt), action, 1.0, g);
  return g;
}

void PolicyModel::accumulate_logprob_grad(const EncodedPrompt& prompt,
                                          std::span<const Token> action, double scale,
                                          Gradient& out,
                                          std::span<const double> per_token_weights) const {
  if (action.empty()) throw PreconditionError("logprob_grad: empty action");
  const std::size_t v = vocab_.size();
  std::vector<double> z, p, delta(v);
  for (std::size_t l = 0; l < action.size(); ++l) {
    const double w = scale * (per_token_weights.empty() ? 1.0 : per_token_weights[l]);
    if (w == 0.0) continue;
    const std::size_t idx = vocab_.index_of(action[l]);
    const auto prefix = action.first(l);
    logits(prompt, prefix, z);
    softmax(z, p);
    for (std::size_t i = 0; i < v; ++i) delta[i] = w * ((i == idx ? 1.0 : 0.0) - p[i]);
    auto add_to = [&](std::vector<double>& row, double x) {
      if (row.empty()) row.assign(v, 0.0);
      for (std::size_t i = 0; i < v; ++i) row[i] += x * delta[i];
    };
    if (mode_ == ModelMode::kTabularExact) {
      add_to(out.tabular[tabular_key(prompt, prefix)], 1.0);
    } else {
      for (const auto& [f, x] : prompt.features) add_to(out.linear[prompt_row(f, l)], x);
      for (const auto& [f, x] : prefix_features(prefix)) add_to(out.linear[f], x);
    }
  }
}

void PolicyModel::apply(const Gradient& grad, double step) {
  const std::size_t v = vocab_.size();
  if (mode_ == ModelMode::kTabularExact) {
    if (!grad.linear.empty()) throw PreconditionError("apply: linear gradient on tabular model");
    for (const auto& [k, row] : grad.tabular) {
      auto& dst = table_[k];
      if (dst.empty()) dst.assign(v, 0.0);
      for (std::size_t i = 0; i < v; ++i) dst[i] += step * row[i];
    }
  } else {
    if (!grad.tabular.empty()) throw PreconditionError("apply: tabular gradient on linear model");
    for (const auto& [f, row] : grad.linear) {
      double* w = weights_.data() + static_cast<std::size_t>(f) * v;
      for (std::size_t i = 0; i < v; ++i) w[i] += step * row[i];
    }
  }
}

double PolicyModel::param(const ParamKey& key) const {
  if (mode_ == ModelMode::kTabularExact) {
    auto it = table_.find(key.context);
    return it == table_.end() ? 0.0 : it->second.at(key.token);
  }
  return weights_.at(static_cast<std::size_t>(key.feature) * vocab_.size() + key.token);
}

double& PolicyModel::mutable_param(const ParamKey& key) {
  if (key.token >= vocab_.size()) throw PreconditionError("mutable_param: token out of range");
  if (mode_ == ModelMode::kTabularExact) {
    auto& row = table_[key.context];
    if (row.empty()) row.assign(vocab_.size(), 0.0);
    return row[key.token];
  }
  return weights_.at(static_cast<std::size_t>(key.feature) * vocab_.size() + key.token);
}

std::size_t PolicyModel::nonzero_count() const {
  std::size_t n = 0;
  for (const auto& [k, row] : table_)
    for (double x : row) n += (x != 0.0);
  for (double x : weights_) n += (x != 0.0);
  return n;
}

std::shared_ptr<const PolicyModel> PolicyModel::freeze_reference() const {
  return std::make_shared<const PolicyModel>(*this);
}

std::uint64_t PolicyModel::fingerprint() const {
  Fnv1a h(0);
  h.bytes(to_string(mode_));
  for (const auto& t : vocab_.tokens()) h.token(t);
  h.u64(features_.width).u64(static_cast<std::uint64_t>(features_.max_order));
  h.u64(features_.hash_seed).u64(features_.bias).u64(features_.count_features);
  h.u64(features_.prefix_features).u64(features_.position_conjoined);
  std::vector<const std::string*> keys;
  for (const auto& [k, row] : table_) keys.push_back(&k);
  std::sort(keys.begin(), keys.end(), [](auto* a, auto* b) { return *a < *b; });
  for (const auto* k : keys) {
    const auto& row = table_.at(*k);
    bool any = false;
    for (double x : row) any |= (x != 0.0);
    if (!any) continue;
    h.token(*k);
    for (double x : row) h.u64(std::bit_cast<std::uint64_t>(x + 0.0));
  }
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    if (weights_[i] == 0.0) continue;
    h.u64(i).u64(std::bit_cast<std::uint64_t>(weights_[i]));
  }
  return h.value();
}

bool PolicyModel::operator==(const PolicyModel& other) const {
  return mode_ == other.mode_ && vocab_ == other.vocab_ && features_ == other.features_ &&
         fingerprint() == other.fingerprint();
}

void PolicyModel::save(const std::filesystem::path& path) const {
  nlohmann::json j;
  j["v"] = kCheckpointVersion;
  j["mode"] = to_string(mode_);
  j["vocab"] = vocab_.tokens();
  j["features"] = {{"width", features_.width},
                   {"max_order", features_.max_order},
                   {"hash_seed", features_.hash_seed},
                   {"bias", features_.bias},
                   {"count_features", features_.count_features},
                   {"prefix_features", features_.prefix_features},
                   {"position_conjoined", features_.position_conjoined}};
  if (mode_ == ModelMode::kTabularExact) {
    std::map<std::string, std::vector<double>> sorted(table_.begin(), table_.end());
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& [k, row] : sorted) {
      bool any = false;
      for (double x : row) any |= (x != 0.0);
      if (any) rows.push_back({{"ctx", k}, {"logits", row}});
    }
    j["table"] = std::move(rows);
  } else {
    nlohmann::json entries = nlohmann::json::array();
    const std::size_t v = vocab_.size();
    for (std::size_t i = 0; i < weights_.size(); ++i)
      if (weights_[i] != 0.0) entries.push_back({i / v, i % v, weights_[i]});
    j["weights"] = std::move(entries);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << j.dump() << '\n';
}

PolicyModel PolicyModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("missing checkpoint " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const std::exception& e) {
    throw std::runtime_error("corrupt checkpoint " + path.string() + ": " + e.what());
  }
  if (j.at("v").get<int>() != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version in " + path.string());
  const auto& fj = j.at("features");
  FeatureConfig fc;
  fc.width = fj.at("width").get<std::size_t>();
  fc.max_order = fj.at("max_order").get<int>();
  fc.hash_seed = fj.at("hash_seed").get<std::uint64_t>();
  fc.bias = fj.at("bias").get<bool>();
  fc.count_features = fj.at("count_features").get<bool>();
  fc.prefix_features = fj.at("prefix_features").get<bool>();
  fc.position_conjoined = fj.at("position_conjoined").get<bool>();
  const auto mode = model_mode_from_string(j.at("mode").get<std::string>());
  PolicyModel m(mode, Vocab(j.at("vocab").get<std::vector<Token>>()), fc);
  if (mode == ModelMode::kTabularExact) {
    for (const auto& row : j.at("table"))
      m.table_[row.at("ctx").get<std::string>()] = row.at("logits").get<std::vector<double>>();
  } else {
    const std::size_t v = m.vocab_.size();
    for (const auto& e : j.at("weights"))
      m.weights_.at(e.at(0).get<std::size_t>() * v + e.at(1).get<std::size_t>()) =
          e.at(2).get<double>();
  }
  return m;
}

}  // namespace sweet
