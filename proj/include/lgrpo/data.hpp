#pragma once

// Pairwise preference datasets: JSONL ingestion, vote-agreement filters and
// a seeded synthetic task generator.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "lgrpo/error.hpp"
#include "lgrpo/util.hpp"

namespace lgrpo {

enum class Winner { first, second, unknown };
enum class Split { train, val, test };

inline const char* to_string(Winner w) {
  switch (w) {
    case Winner::first: return "first";
    case Winner::second: return "second";
    case Winner::unknown: return "unknown";
  }
  return "unknown";
}

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

inline std::optional<Split> parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  return std::nullopt;
}

struct PreferencePair {
  std::string id;
  std::string prompt;
  std::string item_a;
  std::string item_b;
  std::int64_t votes_a = 0;
  std::int64_t votes_b = 0;
  Winner winner = Winner::unknown;
  Split split = Split::train;

  std::int64_t total_votes() const { return votes_a + votes_b; }

  friend bool operator==(const PreferencePair&, const PreferencePair&) = default;
};

// Side holding the strict vote majority, or unknown on a tie / no votes.
inline Winner majority_side(std::int64_t votes_a, std::int64_t votes_b) {
  if (votes_a > votes_b) return Winner::first;
  if (votes_b > votes_a) return Winner::second;
  return Winner::unknown;
}

class PreferenceDataset {
 public:
  PreferenceDataset() = default;

  // Throws Error on duplicate ids or a pair that breaks its invariants.
  explicit PreferenceDataset(std::vector<PreferencePair> pairs,
                             std::string source_tag = {})
      : pairs_(std::move(pairs)), source_tag_(std::move(source_tag)) {
    std::unordered_set<std::string> seen;
    for (const auto& p : pairs_) {
      validate(p);
      if (!seen.insert(p.id).second) throw Error("duplicate id: " + p.id);
    }
  }

  static void validate(const PreferencePair& p) {
    if (p.votes_a < 0 || p.votes_b < 0)
      throw Error("negative vote count in pair " + p.id);
    if (p.item_a == p.item_b) throw Error("identical items in pair " + p.id);
    if (p.winner != Winner::unknown && p.total_votes() > 0 &&
        p.winner != majority_side(p.votes_a, p.votes_b))
      throw Error("winner disagrees with vote majority in pair " + p.id);
  }

  const std::vector<PreferencePair>& pairs() const { return pairs_; }
  const std::string& source_tag() const { return source_tag_; }
  std::size_t size() const { return pairs_.size(); }
  bool empty() const { return pairs_.empty(); }
  const PreferencePair& operator[](std::size_t i) const { return pairs_[i]; }

  std::vector<std::string> ids() const {
    std::vector<std::string> out;
    out.reserve(pairs_.size());
    for (const auto& p : pairs_) out.push_back(p.id);
    return out;
  }

 private:
  std::vector<PreferencePair> pairs_;
  std::string source_tag_;
};

// ---------------------------------------------------------------------------
// JSONL

inline nlohmann::ordered_json to_json(const PreferencePair& p) {
  nlohmann::ordered_json j;
  j["id"] = p.id;
  j["prompt"] = p.prompt;
  j["item_a"] = p.item_a;
  j["item_b"] = p.item_b;
  j["votes_a"] = p.votes_a;
  j["votes_b"] = p.votes_b;
  if (p.winner == Winner::unknown)
    j["winner"] = nullptr;
  else
    j["winner"] = to_string(p.winner);
  j["split"] = to_string(p.split);
  return j;
}

inline std::string to_jsonl_line(const PreferencePair& p) {
  return to_json(p).dump();
}

namespace detail {

inline const nlohmann::json& require(const nlohmann::json& j, const char* key,
                                     std::size_t line) {
  auto it = j.find(key);
  if (it == j.end()) throw ParseError(line, std::string("missing field \"") + key + "\"");
  return *it;
}

inline std::string require_string(const nlohmann::json& j, const char* key,
                                  std::size_t line) {
  const auto& v = require(j, key, line);
  if (!v.is_string())
    throw ParseError(line, std::string("field \"") + key + "\" must be a string");
  return v.get<std::string>();
}

inline std::int64_t optional_votes(const nlohmann::json& j, const char* key,
                                   std::size_t line) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return 0;
  if (!it->is_number_integer() || it->get<std::int64_t>() < 0)
    throw ParseError(line, std::string("field \"") + key +
                               "\" must be a non-negative integer");
  return it->get<std::int64_t>();
}

}  // namespace detail

inline PreferencePair parse_pair_line(std::string_view text, std::size_t line) {
  auto j = nlohmann::json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded() || !j.is_object()) throw ParseError(line, "not a JSON object");
  PreferencePair p;
  p.id = detail::require_string(j, "id", line);
  p.prompt = detail::require_string(j, "prompt", line);
  p.item_a = detail::require_string(j, "item_a", line);
  p.item_b = detail::require_string(j, "item_b", line);
  p.votes_a = detail::optional_votes(j, "votes_a", line);
  p.votes_b = detail::optional_votes(j, "votes_b", line);

  auto w = j.find("winner");
  if (w == j.end() || w->is_null()) {
    p.winner = majority_side(p.votes_a, p.votes_b);
  } else if (*w == "first") {
    p.winner = Winner::first;
  } else if (*w == "second") {
    p.winner = Winner::second;
  } else {
    throw ParseError(line, "field \"winner\" must be \"first\", \"second\" or null");
  }

  auto s = j.find("split");
  if (s != j.end() && !s->is_null()) {
    if (!s->is_string()) throw ParseError(line, "field \"split\" must be a string");
    auto split = parse_split(s->get<std::string>());
    if (!split) throw ParseError(line, "unknown split \"" + s->get<std::string>() + "\"");
    p.split = *split;
  }

  try {
    PreferenceDataset::validate(p);
  } catch (const Error& e) {
    throw ParseError(line, e.what());
  }
  return p;
}

inline PreferenceDataset read_dataset(std::istream& in, std::string source_tag = {},
                                      std::optional<Split> split_filter = {}) {
  std::vector<PreferencePair> pairs;
  std::unordered_set<std::string> seen;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (trim(text).empty()) continue;
    auto p = parse_pair_line(text, line);
    if (!seen.insert(p.id).second) throw ParseError(line, "duplicate id \"" + p.id + "\"");
    if (split_filter && p.split != *split_filter) continue;
    pairs.push_back(std::move(p));
  }
  return PreferenceDataset(std::move(pairs), std::move(source_tag));
}

inline PreferenceDataset load_dataset(const std::string& path,
                                      std::optional<Split> split_filter = {}) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open dataset: " + path);
  return read_dataset(in, path, split_filter);
}

inline void write_dataset(std::ostream& out, const PreferenceDataset& ds) {
  for (const auto& p : ds.pairs()) out << to_jsonl_line(p) << '\n';
}

inline void save_dataset(const std::string& path, const PreferenceDataset& ds) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write dataset: " + path);
  write_dataset(out, ds);
  if (!out) throw Error("write failed: " + path);
}

// ---------------------------------------------------------------------------
// Agreement statistics and filters

inline double vote_share(const PreferencePair& p) {
  const auto total = p.total_votes();
  if (total <= 0) throw Error("no votes");
  return static_cast<double>(std::max(p.votes_a, p.votes_b)) /
         static_cast<double>(total);
}

inline PreferenceDataset filter_by_agreement(const PreferenceDataset& ds,
                                             double threshold) {
  if (!(threshold >= 0.5 && threshold <= 1.0))
    throw Error("agreement threshold must lie in [0.5, 1.0]");
  std::vector<PreferencePair> kept;
  for (const auto& p : ds.pairs())
    if (p.total_votes() > 0 && vote_share(p) >= threshold) kept.push_back(p);
  return PreferenceDataset(std::move(kept), ds.source_tag());
}

inline PreferenceDataset binarize(const PreferenceDataset& ds, double min_share = 0.8,
                                  std::int64_t min_total_votes = 16) {
  std::vector<PreferencePair> kept;
  for (auto p : ds.pairs()) {
    if (p.total_votes() <= 0 || p.total_votes() < min_total_votes) continue;
    if (vote_share(p) < min_share) continue;
    p.winner = majority_side(p.votes_a, p.votes_b);
    // A 0.5 share can only pass with min_share <= 0.5 and has no majority.
    if (p.winner == Winner::unknown) continue;
    kept.push_back(std::move(p));
  }
  return PreferenceDataset(std::move(kept), ds.source_tag());
}

inline PreferenceDataset top_confident(const PreferenceDataset& ds, std::size_t k,
                                       std::int64_t min_votes = 20) {
  std::vector<PreferencePair> kept;
  for (const auto& p : ds.pairs())
    if (p.total_votes() > 0 && p.total_votes() >= min_votes) kept.push_back(p);
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    const double sa = vote_share(a), sb = vote_share(b);
    if (sa != sb) return sa > sb;
    return a.id < b.id;
  });
  if (kept.size() > k) kept.resize(k);
  return PreferenceDataset(std::move(kept), ds.source_tag());
}

// ---------------------------------------------------------------------------
// Synthetic item payloads: "synth:" followed by 16 hex digits per IEEE-754
// double, so the feature vector round-trips exactly through JSON.

inline constexpr std::string_view kSynthPrefix = "synth:";

inline std::string encode_synth_item(std::span<const double> features) {
  std::string out(kSynthPrefix);
  char buf[17];
  for (double f : features) {
    std::uint64_t bits;
    std::memcpy(&bits, &f, sizeof bits);
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(bits));
    out += buf;
  }
  return out;
}

// nullopt for items that are not synthetic payloads.
inline std::optional<std::vector<double>> decode_synth_item(std::string_view item) {
  if (!item.starts_with(kSynthPrefix)) return std::nullopt;
  item.remove_prefix(kSynthPrefix.size());
  if (item.size() % 16 != 0) throw Error("synthetic payload length not a multiple of 16");
  std::vector<double> out;
  out.reserve(item.size() / 16);
  for (std::size_t i = 0; i < item.size(); i += 16) {
    std::uint64_t bits = 0;
    for (std::size_t j = 0; j < 16; ++j) {
      const char c = item[i + j];
      int v;
      if (c >= '0' && c <= '9') v = c - '0';
      else if (c >= 'a' && c <= 'f') v = c - 'a' + 10;
      else if (c >= 'A' && c <= 'F') v = c - 'A' + 10;
      else throw Error("bad hex digit in synthetic payload");
      bits = (bits << 4) | static_cast<std::uint64_t>(v);
    }
    double f;
    std::memcpy(&f, &bits, sizeof f);
    out.push_back(f);
  }
  return out;
}

struct SynthTaskConfig {
  int vocab_size = 16;
  int context_dim = 4;
  int num_pairs = 32;
  // Extra pairs drawn from the same rule and tagged split=test.
  int heldout_pairs = 0;
  double listener_feature_weight = 0.0;
  std::int64_t votes_per_pair = 20;
  std::uint64_t seed = 0;
};

// Minimum toy vocabulary: four tags, two answers, the no-thinking filler and
// the two listener cue tokens.
inline constexpr int kMinToyVocab = 9;

// The hidden linear rule deciding synthetic winners. Items carry
// context_dim rule features followed by one listener-salient marker.
struct HiddenRule {
  std::vector<double> weights;

  double score(std::span<const double> item) const {
    double s = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) s += weights[i] * item[i];
    return s;
  }

  Winner decide(std::span<const double> a, std::span<const double> b) const {
    return score(a) > score(b) ? Winner::first : Winner::second;
  }
};

struct SynthTask {
  PreferenceDataset dataset;
  HiddenRule rule;
  int payload_dim = 0;  // context_dim + 1
};

// Index of the listener-salient marker inside a synthetic payload.
inline int salient_index(const SynthTaskConfig& c) { return c.context_dim; }

inline SynthTask synth_generate(const SynthTaskConfig& c) {
  if (c.vocab_size < kMinToyVocab)
    throw Error("vocab_size must be at least " + std::to_string(kMinToyVocab));
  if (c.context_dim < 1) throw Error("context_dim must be positive");
  if (c.num_pairs < 2) throw Error("num_pairs must be at least 2");
  if (c.heldout_pairs < 0) throw Error("heldout_pairs must be non-negative");
  if (!(c.listener_feature_weight >= 0.0 && c.listener_feature_weight <= 1.0))
    throw Error("listener_feature_weight must lie in [0, 1]");
  if (c.votes_per_pair < 1) throw Error("votes_per_pair must be positive");

  Rng rng(derive_seed(c.seed, 0x5e7));
  std::normal_distribution<double> normal(0.0, 1.0);

  HiddenRule rule;
  rule.weights.resize(c.context_dim);
  double norm = 0.0;
  for (auto& w : rule.weights) {
    w = normal(rng);
    norm += w * w;
  }
  norm = std::sqrt(norm);
  for (auto& w : rule.weights) w /= norm;

  const int dim = c.context_dim + 1;
  const int total = c.num_pairs + c.heldout_pairs;
  std::vector<PreferencePair> pairs;
  pairs.reserve(total);
  for (int i = 0; i < total; ++i) {
    std::vector<double> a(dim, 0.0), b(dim, 0.0);
    for (int d = 0; d < c.context_dim; ++d) a[d] = normal(rng);
    for (int d = 0; d < c.context_dim; ++d) b[d] = normal(rng);
    const double margin = rule.score(a) - rule.score(b);
    const Winner winner = margin > 0 ? Winner::first : Winner::second;

    // The salient marker lands on the winner with probability w, otherwise
    // on a uniformly random side.
    const bool aligned = uniform01(rng) < c.listener_feature_weight;
    const bool coin = uniform01(rng) < 0.5;
    const bool salient_first = aligned ? winner == Winner::first : coin;
    (salient_first ? a : b)[c.context_dim] = 1.0;

    const double share = sigmoid(2.0 * std::abs(margin));
    const std::int64_t n = c.votes_per_pair;
    std::int64_t win_votes = std::llround(share * static_cast<double>(n));
    win_votes = std::clamp<std::int64_t>(win_votes, n / 2 + 1, n);

    PreferencePair p;
    char id[32];
    std::snprintf(id, sizeof id, "synth-%05d", i);
    p.id = id;
    p.prompt = "synthetic prompt " + std::to_string(i);
    p.item_a = encode_synth_item(a);
    p.item_b = encode_synth_item(b);
    p.votes_a = winner == Winner::first ? win_votes : n - win_votes;
    p.votes_b = n - p.votes_a;
    p.winner = winner;
    p.split = i < c.num_pairs ? Split::train : Split::test;
    pairs.push_back(std::move(p));
  }
  return {PreferenceDataset(std::move(pairs), "synth"), std::move(rule), dim};
}

inline PreferenceDataset select_split(const PreferenceDataset& ds, Split split) {
  std::vector<PreferencePair> out;
  for (const auto& p : ds.pairs())
    if (p.split == split) out.push_back(p);
  return PreferenceDataset(std::move(out), ds.source_tag());
}

}  // namespace lgrpo
