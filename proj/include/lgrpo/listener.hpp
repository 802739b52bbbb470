#pragma once

// Listener re-evaluation of a reasoner's chain-of-thought and the
// listener/reasoner disagreement analytics.

#include <algorithm>
#include <cmath>
#include <optional>
#include <utility>
#include <vector>

#include "lgrpo/data.hpp"
#include "lgrpo/error.hpp"
#include "lgrpo/policy.hpp"
#include "lgrpo/reward.hpp"
#include "lgrpo/scoring.hpp"

namespace lgrpo {

enum class StripMode {
  answer_block,  // drop the whole <answer>...</answer> block
  answer_token,  // drop only the chosen answer token and what follows it
};

struct ListenerContext {
  std::vector<std::string> visual;
  std::string prompt;
  std::vector<TokenId> reasoning_tokens;
};

struct ListenerVerdict {
  double p_corr = 0.5;
  double r_list = 0.0;
  std::pair<double, double> listener_scores{0.5, 0.5};
};

inline ListenerContext strip_answer(const Rollout& r, const Vocabulary& v,
                                    StripMode mode = StripMode::answer_block) {
  if (!r.parsed) throw Error("cannot strip an unparsed rollout");
  auto close = std::find(r.tokens.begin(), r.tokens.end(), v.think_close());
  if (close == r.tokens.end()) throw Error("rollout has no </think> token");
  ListenerContext c{r.context.visual, r.context.prompt, r.context.reasoning_tokens};
  auto end = close + 1;
  if (mode == StripMode::answer_token) {
    auto choice = std::find_if(end, r.tokens.end(), [&](TokenId t) { return v.is_answer(t); });
    end = choice;
  }
  c.reasoning_tokens.insert(c.reasoning_tokens.end(), r.tokens.begin(), end);
  return c;
}

// Queries the listener at the answer slot following the stripped reasoning.
inline ListenerVerdict listener_confidence(const Policy& listener, const ListenerContext& lc,
                                           Winner correct) {
  if (correct == Winner::unknown) throw Error("listener needs a known correct answer");
  const auto& v = listener.vocab();
  Context c{lc.visual, lc.prompt, lc.reasoning_tokens, {}};
  if (c.reasoning_tokens.empty() || c.reasoning_tokens.back() != v.answer_open())
    c.partial_answer = {v.answer_open()};
  const double p_first = answer_prob_first(listener, c);
  ListenerVerdict out;
  out.p_corr = correct == Winner::first ? p_first : 1.0 - p_first;
  out.r_list = listener_reward(out.p_corr);
  out.listener_scores = {p_first, 1.0 - p_first};
  return out;
}

// Per-item soft scores over the rating vocabulary at the answer slot after `reasoning`.
inline std::pair<double, double> item_soft_scores(const Policy& policy,
                                                  const std::vector<std::string>& items,
                                                  const std::string& prompt,
                                                  const std::vector<TokenId>& reasoning,
                                                  const RatingVocabulary& ratings) {
  if (items.size() != 2) throw Error("soft scores need exactly two items");
  const auto& v = policy.vocab();
  const auto tokens = ratings.tokens();
  double s[2];
  for (int i = 0; i < 2; ++i) {
    Context c{{items[i]}, prompt, reasoning, {v.answer_open()}};
    if (c.reasoning_tokens.empty()) c.reasoning_tokens = {v.think_open(), v.think_close()};
    s[i] = soft_score(answer_logits(policy, c, tokens), ratings).value;
  }
  return {s[0], s[1]};
}

struct DisagreementRecord {
  std::pair<double, double> instruct_scores;
  std::pair<double, double> reasoner_scores;
  double distance = 0.0;
  bool reasoner_correct = false;
};

inline double disagreement(std::pair<double, double> a, std::pair<double, double> b) {
  for (double x : {a.first, a.second, b.first, b.second})
    if (!(x >= 0.0 && x <= 1.0)) throw Error("score outside [0, 1]");
  return std::hypot(a.first - b.first, a.second - b.second);
}

inline DisagreementRecord make_disagreement_record(std::pair<double, double> instruct,
                                                   std::pair<double, double> reasoner,
                                                   bool correct) {
  return {instruct, reasoner, disagreement(instruct, reasoner), correct};
}

struct BinStat {
  double low = 0.0;
  double high = 0.0;
  std::size_t count = 0;
  std::optional<double> accuracy;  // nullopt for an empty bin
};

inline std::vector<double> default_bin_edges(int bins = 8) {
  std::vector<double> e(bins + 1);
  for (int i = 0; i <= bins; ++i) e[i] = std::sqrt(2.0) * i / bins;
  e.back() = std::sqrt(2.0);
  return e;
}

// Half-open bins [e_j, e_{j+1}); the last bin is closed.
inline std::vector<BinStat> bin_accuracy_by_disagreement(
    const std::vector<DisagreementRecord>& records, const std::vector<double>& edges) {
  if (edges.size() < 2) throw Error("need at least two bin edges");
  for (std::size_t i = 1; i < edges.size(); ++i)
    if (!(edges[i] > edges[i - 1])) throw Error("bin edges must be strictly increasing");
  if (edges.front() > 0.0 || edges.back() < std::sqrt(2.0))
    throw Error("bin edges must cover [0, sqrt(2)]");

  const std::size_t nb = edges.size() - 1;
  std::vector<BinStat> bins(nb);
  std::vector<std::size_t> correct(nb, 0);
  for (std::size_t j = 0; j < nb; ++j) bins[j] = {edges[j], edges[j + 1], 0, std::nullopt};
  for (const auto& r : records) {
    if (!(r.distance >= edges.front() && r.distance <= edges.back()))
      throw Error("record distance outside bin range");
    auto it = std::upper_bound(edges.begin(), edges.end(), r.distance);
    std::size_t j = static_cast<std::size_t>(it - edges.begin());
    j = j == 0 ? 0 : j - 1;
    if (j >= nb) j = nb - 1;
    ++bins[j].count;
    correct[j] += r.reasoner_correct ? 1 : 0;
  }
  for (std::size_t j = 0; j < nb; ++j)
    if (bins[j].count)
      bins[j].accuracy = static_cast<double>(correct[j]) / static_cast<double>(bins[j].count);
  return bins;
}

}  // namespace lgrpo
