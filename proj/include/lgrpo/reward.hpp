#pragma once

// Reward components for preference reasoning: formatting, exact match,
// distance-based approximate match and the listener term, plus their
// combinations.

#include <cmath>
#include <cstdlib>
#include <string_view>
#include <vector>

#include "lgrpo/data.hpp"
#include "lgrpo/error.hpp"
#include "lgrpo/format.hpp"

namespace lgrpo {

struct RewardWeights {
  double fmt = 1.0;
  double acc = 0.5;
  double list = 0.5;
};

enum class ListenerShaping {
  off,            // r_list forced to 0; no listener queries
  eq5,            // r_fmt + 0.5 r_acc + 0.5 r_list
  setup_variant,  // alternative shaping from the training-setup description
};

// Approximate-match reward by |predicted - ground truth|; distances past the
// end of the table score 0.
struct ApproxTable {
  std::vector<double> by_distance{1.0, 0.75, 0.5};

  double at(long distance) const {
    if (distance < 0) distance = -distance;
    return distance < static_cast<long>(by_distance.size()) ? by_distance[distance] : 0.0;
  }
};

struct AbsoluteWeights {
  double fmt = 1.0;
  double exact = 1.0;
  double approx = 1.0;
};

struct RewardConfig {
  RewardWeights weights;
  ListenerShaping shaping = ListenerShaping::eq5;
  ApproxTable approx;
  AbsoluteWeights absolute;
  long scale_max = 10;
};

struct RewardBreakdown {
  int r_fmt = 0;
  int r_acc = 0;
  double r_list = 0.0;
  double total = 0.0;
};

struct AbsoluteScorePrediction {
  long predicted = 1;
  long ground_truth = 1;
  long scale_max = 1;
};

inline int format_reward(std::string_view text) { return parse_answer(text) ? 1 : 0; }

inline int exact_match_reward(const ParsedAnswer& parsed, Winner winner) {
  if (winner == Winner::unknown) throw Error("exact match needs a known winner");
  return parsed.choice == winner ? 1 : 0;
}

// Convenience for callers holding a raw parse result: failures score 0.
inline int exact_match_reward(const FormatResult<ParsedAnswer>& parsed, Winner winner) {
  return parsed ? exact_match_reward(*parsed, winner) : 0;
}

inline double approx_score_reward(const AbsoluteScorePrediction& p,
                                  const ApproxTable& table = {}) {
  if (p.scale_max < 1 || p.predicted < 1 || p.predicted > p.scale_max ||
      p.ground_truth < 1 || p.ground_truth > p.scale_max)
    throw Error("rating outside [1, scale_max]");
  return table.at(std::labs(p.predicted - p.ground_truth));
}

inline double listener_reward(double p_corr) {
  if (!(p_corr >= 0.0 && p_corr <= 1.0)) throw Error("p_corr outside [0, 1]");
  return std::max(0.0, p_corr - 0.5);
}

inline RewardBreakdown combined_reward(int r_fmt, int r_acc, double r_list,
                                       const RewardWeights& w = {}) {
  if ((r_fmt != 0 && r_fmt != 1) || (r_acc != 0 && r_acc != 1))
    throw Error("r_fmt and r_acc must be 0 or 1");
  if (!(r_list >= 0.0 && r_list <= 0.5)) throw Error("r_list outside [0, 0.5]");
  return {r_fmt, r_acc, r_list, w.fmt * r_fmt + w.acc * r_acc + w.list * r_list};
}

// Training-setup variant: the listener's soft score s for the winner gates
// the reward. s < 0.5 zeroes the reward; otherwise the reward is
// (1 - s) + 0.5 * r_acc. r_list keeps its usual definition for reporting.
inline RewardBreakdown setup_variant_reward(int r_fmt, int r_acc, double p_corr) {
  const double r_list = listener_reward(p_corr);
  RewardBreakdown b{r_fmt, r_acc, r_list, 0.0};
  if (r_fmt == 0 || p_corr < 0.5) return b;
  b.total = (1.0 - p_corr) + 0.5 * r_acc;
  return b;
}

// Absolute-score reward: format + exact + approximate match. A parse
// failure zeroes every term.
inline double absolute_reward(std::string_view text, long ground_truth, long scale_max,
                              const RewardConfig& cfg = {}) {
  auto parsed = parse_score(text, scale_max);
  if (!parsed) return 0.0;
  AbsoluteScorePrediction pred{parsed->rating, ground_truth, scale_max};
  const double approx = approx_score_reward(pred, cfg.approx);
  const double exact = parsed->rating == ground_truth ? 1.0 : 0.0;
  return cfg.absolute.fmt + cfg.absolute.exact * exact + cfg.absolute.approx * approx;
}

}  // namespace lgrpo
