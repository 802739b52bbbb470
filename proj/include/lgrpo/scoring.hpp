#pragma once

// Scalar scoring on top of a policy: soft expected ratings, sigmoid
// pairwise preference, multi-rollout aggregation and anchor ranking.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "lgrpo/data.hpp"
#include "lgrpo/error.hpp"
#include "lgrpo/policy.hpp"
#include "lgrpo/util.hpp"

namespace lgrpo {

class RatingVocabulary {
 public:
  struct Entry {
    TokenId token;
    double value;
  };

  explicit RatingVocabulary(std::vector<Entry> entries) : entries_(std::move(entries)) {
    if (entries_.size() < 2) throw Error("rating vocabulary needs at least 2 entries");
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (!(entries_[i].value >= 0.0 && entries_[i].value <= 1.0))
        throw Error("rating values must lie in [0, 1]");
      if (i && !(entries_[i].value > entries_[i - 1].value))
        throw Error("rating values must be strictly increasing");
    }
  }

  // Values 0, 1/(n-1), ..., 1 over the given tokens.
  static RatingVocabulary equally_spaced(std::span<const TokenId> tokens) {
    std::vector<Entry> e;
    const double n = static_cast<double>(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i)
      e.push_back({tokens[i], n > 1 ? static_cast<double>(i) / (n - 1) : 0.0});
    return RatingVocabulary(std::move(e));
  }

  // The last `n` filler tokens of a toy vocabulary.
  static RatingVocabulary toy_default(const Vocabulary& v, int n = 5) {
    std::vector<TokenId> tokens;
    for (TokenId t = 0; t < v.size(); ++t)
      if (v.name(t).starts_with("w")) tokens.push_back(t);
    if (static_cast<int>(tokens.size()) < 2)
      throw Error("vocabulary has too few filler tokens for ratings");
    if (static_cast<int>(tokens.size()) > n) tokens.erase(tokens.begin(), tokens.end() - n);
    return equally_spaced(tokens);
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::vector<TokenId> tokens() const {
    std::vector<TokenId> t;
    for (const auto& e : entries_) t.push_back(e.token);
    return t;
  }

 private:
  std::vector<Entry> entries_;
};

struct SoftScore {
  double value = 0.5;
  int rollout_count = 1;
};

inline SoftScore soft_score(std::span<const double> logits, const RatingVocabulary& vocab) {
  if (logits.size() != vocab.size())
    throw Error("rating logits misaligned with rating vocabulary");
  const auto p = softmax(logits);
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += p[i] * vocab.entries()[i].value;
  const double lo = vocab.entries().front().value, hi = vocab.entries().back().value;
  return {std::clamp(s, lo, hi), 1};
}

inline SoftScore soft_score(const AnswerLogits& logits, const RatingVocabulary& vocab) {
  if (logits.candidates != vocab.tokens())
    throw Error("answer logits candidates do not match the rating vocabulary");
  return soft_score(logits.logits, vocab);
}

inline double pairwise_prob(double logit_one, double logit_zero) {
  return sigmoid(logit_one - logit_zero);
}

inline double mean_at_k(std::span<const double> values) {
  if (values.empty()) throw Error("mean over zero rollouts");
  return std::accumulate(values.begin(), values.end(), 0.0) /
         static_cast<double>(values.size());
}

struct VoteResult {
  Winner choice = Winner::first;
  bool tie = false;
};

inline VoteResult majority_vote(std::span<const Winner> choices) {
  if (choices.empty()) throw Error("majority vote over zero choices");
  const auto first = std::count(choices.begin(), choices.end(), Winner::first);
  const auto second = std::count(choices.begin(), choices.end(), Winner::second);
  if (first == second) return {Winner::first, true};
  return {first > second ? Winner::first : Winner::second, false};
}

// How per-rollout verdicts are combined in predict_pair.
enum class Aggregation { probability, logit, vote };

struct PredictOptions {
  int k = 1;
  double temperature = 1.1;
  int max_len = 64;
  Aggregation aggregation = Aggregation::probability;
  std::uint64_t seed = 0;
};

struct PairPrediction {
  Winner choice = Winner::first;
  bool tie = false;
  bool failed = false;  // every rollout broke the output grammar
  double p_first = 0.5;
  std::vector<double> per_rollout_p;                // parsed rollouts only
  std::vector<std::optional<double>> rollout_p;     // aligned with rollouts
  std::vector<Rollout> rollouts;
};

// Context positioned at the answer slot of a parsed rollout: the reasoning
// through </think> followed by <answer>. nullopt if the rollout has no
// closed think block.
inline std::optional<Context> answer_slot_context(const Rollout& r, const Vocabulary& v) {
  if (!r.parsed) return std::nullopt;
  auto close = std::find(r.tokens.begin(), r.tokens.end(), v.think_close());
  if (close == r.tokens.end()) return std::nullopt;
  Context c = r.context;
  c.reasoning_tokens.insert(c.reasoning_tokens.end(), r.tokens.begin(), close + 1);
  c.partial_answer = {v.answer_open()};
  return c;
}

// p(first) at the answer slot of a context.
inline double answer_prob_first(const Policy& policy, const Context& slot) {
  const auto& v = policy.vocab();
  const auto cand = v.answer_candidates();
  auto logits = answer_logits(policy, slot, cand);
  return pairwise_prob(logits.logits[0], logits.logits[1]);
}

inline PairPrediction predict_pair(const Policy& policy, const std::string& prompt,
                                   const std::string& item_a, const std::string& item_b,
                                   const PredictOptions& opt) {
  if (opt.k < 1) throw Error("k must be at least 1");
  const Context ctx{{item_a, item_b}, prompt, {}, {}};
  const auto& v = policy.vocab();
  PairPrediction out;
  std::vector<double> margins;
  std::vector<Winner> votes;
  for (int j = 0; j < opt.k; ++j) {
    auto r = sample_rollout(policy, ctx, opt.temperature, opt.max_len,
                            derive_seed(opt.seed, 0x70, static_cast<std::uint64_t>(j)));
    auto slot = answer_slot_context(r, v);
    out.rollout_p.emplace_back();
    if (slot && parse_answer(r.text)) {
      const auto cand = v.answer_candidates();
      auto logits = answer_logits(policy, *slot, cand);
      const double p = pairwise_prob(logits.logits[0], logits.logits[1]);
      out.per_rollout_p.push_back(p);
      out.rollout_p.back() = p;
      margins.push_back(logits.logits[0] - logits.logits[1]);
      votes.push_back(p > 0.5 ? Winner::first : Winner::second);
    }
    out.rollouts.push_back(std::move(r));
  }
  if (out.per_rollout_p.empty()) {
    out.failed = true;
    return out;
  }
  switch (opt.aggregation) {
    case Aggregation::probability:
      out.p_first = mean_at_k(out.per_rollout_p);
      break;
    case Aggregation::logit:
      out.p_first = sigmoid(mean_at_k(margins));
      break;
    case Aggregation::vote:
      out.p_first = static_cast<double>(std::count(votes.begin(), votes.end(), Winner::first)) /
                    static_cast<double>(votes.size());
      break;
  }
  if (out.p_first > 0.5) {
    out.choice = Winner::first;
  } else if (out.p_first < 0.5) {
    out.choice = Winner::second;
  } else {
    out.choice = Winner::first;
    out.tie = true;
  }
  return out;
}

inline PairPrediction predict_pair(const Policy& policy, const PreferencePair& pair,
                                   const PredictOptions& opt) {
  return predict_pair(policy, pair.prompt, pair.item_a, pair.item_b, opt);
}

struct RankingResult {
  std::size_t anchor_index = 0;
  std::vector<SoftScore> scores;
  std::vector<std::size_t> order;
  std::vector<std::size_t> ties;  // items whose comparison tied or failed
  std::size_t comparisons = 0;
};

// Scores every item against one anchor fixed at 0.5: n - 1 comparisons.
// The anchor is drawn uniformly from the seed unless given explicitly.
inline RankingResult anchor_rank(const Policy& policy, const std::string& prompt,
                                 const std::vector<std::string>& items,
                                 const PredictOptions& opt,
                                 std::optional<std::size_t> anchor = {},
                                 std::size_t workers = 1) {
  const std::size_t n = items.size();
  if (n < 2) throw Error("ranking needs at least 2 items");
  RankingResult res;
  if (anchor) {
    if (*anchor >= n) throw Error("anchor index out of range");
    res.anchor_index = *anchor;
  } else {
    Rng rng(derive_seed(opt.seed, 0xa7c));
    res.anchor_index = static_cast<std::size_t>(rng() % n);
  }
  res.scores.assign(n, SoftScore{0.5, opt.k});
  std::vector<char> tied(n, 0);
  parallel_for(n, workers, [&](std::size_t i) {
    if (i == res.anchor_index) return;
    PredictOptions o = opt;
    o.seed = derive_seed(opt.seed, 0x17e, i);
    auto pred = predict_pair(policy, prompt, items[i], items[res.anchor_index], o);
    res.scores[i] = {pred.failed ? 0.5 : pred.p_first, opt.k};
    tied[i] = pred.tie || pred.failed;
  });
  res.comparisons = n - 1;
  res.order.resize(n);
  std::iota(res.order.begin(), res.order.end(), 0);
  std::stable_sort(res.order.begin(), res.order.end(), [&](std::size_t a, std::size_t b) {
    return res.scores[a].value > res.scores[b].value;
  });
  for (std::size_t i = 0; i < n; ++i)
    if (tied[i]) res.ties.push_back(i);
  return res;
}

}  // namespace lgrpo
