#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "lgrpo/listener.hpp"
#include "lgrpo/scoring.hpp"
#include "support.hpp"

using namespace lgrpo;

namespace {

const Vocabulary kVocab = Vocabulary::toy(16);

TokenId w(int i) { return *kVocab.find("w" + std::to_string(i)); }

Rollout make_rollout(std::vector<TokenId> tokens) {
  Rollout r;
  r.context = {{"a", "b"}, "p", {}, {}};
  r.tokens = std::move(tokens);
  r.logprobs_old.assign(r.tokens.size(), 0.0);
  finish_rollout(r, kVocab);
  return r;
}

// Reference listener whose answer slot prefers "first" by ln(odds).
ToyPolicy biased_listener(double odds) {
  auto p = ToyPolicy::reference(kVocab, 2);
  p.weights()(kVocab.first(), p.phase_col(Phase::answer)) += std::log(odds);
  return p;
}

}  // namespace

TEST(StripAnswer, BlockModeKeepsReasoningThroughThinkClose) {
  const auto& v = kVocab;
  auto r = make_rollout({v.think_open(), w(0), v.second(), w(1), v.think_close(), v.answer_open(),
                         v.first(), v.answer_close()});
  ASSERT_TRUE(r.parsed);
  auto lc = strip_answer(r, v);
  const std::vector<TokenId> expect = {v.think_open(), w(0), v.second(), w(1), v.think_close()};
  EXPECT_EQ(lc.reasoning_tokens, expect);
  EXPECT_EQ(lc.prompt, "p");
  EXPECT_EQ(lc.visual, r.context.visual);
}

TEST(StripAnswer, TokenModeStopsBeforeTheChoice) {
  const auto& v = kVocab;
  auto r = make_rollout({v.think_open(), w(2), v.think_close(), v.answer_open(), v.second(),
                         v.answer_close()});
  auto lc = strip_answer(r, v, StripMode::answer_token);
  const std::vector<TokenId> expect = {v.think_open(), w(2), v.think_close(), v.answer_open()};
  EXPECT_EQ(lc.reasoning_tokens, expect);
}

TEST(StripAnswer, EmptyThinkAndUnparsed) {
  const auto& v = kVocab;
  auto r = make_rollout({v.think_open(), v.think_close(), v.answer_open(), v.first(),
                         v.answer_close()});
  auto lc = strip_answer(r, v);
  EXPECT_EQ(lc.reasoning_tokens, (std::vector<TokenId>{v.think_open(), v.think_close()}));
  auto bad = make_rollout({v.think_open(), w(0)});
  EXPECT_FALSE(bad.parsed);
  EXPECT_THROW(strip_answer(bad, v), Error);
}

TEST(StripAnswer, BothModesGiveTheSameListenerQuery) {
  const auto& v = kVocab;
  auto listener = biased_listener(2.0);
  auto r = make_rollout({v.think_open(), w(1), v.think_close(), v.answer_open(), v.first(),
                         v.answer_close()});
  auto a = listener_confidence(listener, strip_answer(r, v), Winner::first);
  auto b = listener_confidence(listener, strip_answer(r, v, StripMode::answer_token), Winner::first);
  EXPECT_EQ(a.p_corr, b.p_corr);
}

TEST(ListenerConfidence, OddsThreeGiveThreeQuarters) {
  const auto& v = kVocab;
  auto listener = biased_listener(3.0);
  auto r = make_rollout({v.think_open(), w(0), v.think_close(), v.answer_open(), v.first(),
                         v.answer_close()});
  auto verdict = listener_confidence(listener, strip_answer(r, v), Winner::first);
  EXPECT_NEAR(verdict.p_corr, 0.75, 1e-12);
  EXPECT_NEAR(verdict.r_list, 0.25, 1e-12);
  EXPECT_NEAR(verdict.listener_scores.first, 0.75, 1e-12);

  auto wrong = listener_confidence(listener, strip_answer(r, v), Winner::second);
  EXPECT_NEAR(wrong.p_corr, 0.25, 1e-12);
  EXPECT_EQ(wrong.r_list, 0.0);
  EXPECT_THROW(listener_confidence(listener, strip_answer(r, v), Winner::unknown), Error);
}

TEST(ListenerConfidence, IndifferentListenerGivesHalf) {
  const auto& v = kVocab;
  auto listener = ToyPolicy::reference(v, 2);
  Rng rng(5);
  for (int i = 0; i < 20; ++i) {
    auto c = lgrpo_test::random_pair_context(2, rng);
    auto r = listener.sample(c, 1.0, 32, rng());
    if (!r.parsed) continue;
    auto verdict = listener_confidence(listener, strip_answer(r, v), Winner::second);
    EXPECT_NEAR(verdict.p_corr, 0.5, 1e-12);
    EXPECT_EQ(verdict.r_list, 0.0);
  }
}

TEST(ListenerConfidence, SyntheticListenerFollowsCues) {
  const auto& v = kVocab;
  auto listener = make_synthetic_listener(v, 2, -1, 6.0, 0.0);
  auto r = make_rollout({v.think_open(), *v.cue_second(), w(0), v.think_close(), v.answer_open(),
                         v.second(), v.answer_close()});
  auto verdict = listener_confidence(listener, strip_answer(r, v), Winner::second);
  EXPECT_GT(verdict.p_corr, 0.5);
  EXPECT_GT(verdict.r_list, 0.0);
}

TEST(ItemSoftScores, ReadRatingTokensPerItem) {
  const auto& v = kVocab;
  auto ratings = RatingVocabulary::toy_default(v);
  auto p = ToyPolicy::reference(v, 2);
  auto s = item_soft_scores(p, {"x", "y"}, "", {}, ratings);
  EXPECT_NEAR(s.first, 0.5, 1e-12);
  EXPECT_NEAR(s.second, 0.5, 1e-12);
  EXPECT_THROW(item_soft_scores(p, {"x"}, "", {}, ratings), Error);
}

TEST(Disagreement, Examples) {
  EXPECT_NEAR(disagreement({1, 0}, {0, 1}), std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(disagreement({0.5, 0.5}, {0.5, 0.9}), 0.4, 1e-15);
  EXPECT_EQ(disagreement({0.3, 0.7}, {0.3, 0.7}), 0.0);
  EXPECT_THROW(disagreement({1.2, 0}, {0, 0}), Error);
}

TEST(Disagreement, IsAMetric) {
  Rng rng(8);
  auto pt = [&] { return std::pair{uniform01(rng), uniform01(rng)}; };
  for (int i = 0; i < 2000; ++i) {
    auto a = pt(), b = pt(), c = pt();
    EXPECT_EQ(disagreement(a, b), disagreement(b, a));
    EXPECT_LE(disagreement(a, c), disagreement(a, b) + disagreement(b, c) + 1e-15);
    EXPECT_LE(disagreement(a, b), std::sqrt(2.0));
  }
}

TEST(Bins, AllRecordsInOneBin) {
  std::vector<DisagreementRecord> recs;
  for (int i = 0; i < 10; ++i)
    recs.push_back(make_disagreement_record({0.5, 0.5}, {0.5, 0.55}, i % 5 != 0));
  auto bins = bin_accuracy_by_disagreement(recs, default_bin_edges());
  ASSERT_EQ(bins.size(), 8u);
  EXPECT_EQ(bins[0].count, 10u);
  EXPECT_NEAR(*bins[0].accuracy, 0.8, 1e-15);
  for (std::size_t j = 1; j < bins.size(); ++j) {
    EXPECT_EQ(bins[j].count, 0u);
    EXPECT_FALSE(bins[j].accuracy);
  }
}

TEST(Bins, CorrectBelowMedianOnly) {
  const auto edges = default_bin_edges();
  std::vector<DisagreementRecord> recs;
  Rng rng(12);
  // Three records per bin at random distances inside it; the median sits on edge 4.
  for (std::size_t j = 0; j + 1 < edges.size(); ++j) {
    for (int k = 0; k < 3; ++k) {
      const double d = edges[j] + (edges[j + 1] - edges[j]) * (0.05 + 0.9 * uniform01(rng));
      recs.push_back({{0, 0}, {d / std::sqrt(2.0), d / std::sqrt(2.0)}, d, false});
    }
  }
  std::vector<double> ds;
  for (const auto& r : recs) ds.push_back(r.distance);
  std::sort(ds.begin(), ds.end());
  const double median = 0.5 * (ds[ds.size() / 2 - 1] + ds[ds.size() / 2]);
  for (auto& r : recs) r.reasoner_correct = r.distance < median;

  auto bins = bin_accuracy_by_disagreement(recs, edges);
  for (std::size_t j = 0; j < bins.size(); ++j) {
    ASSERT_EQ(bins[j].count, 3u);
    EXPECT_EQ(*bins[j].accuracy, j < 4 ? 1.0 : 0.0) << j;
  }
}

TEST(Bins, EmptyInputAndCountsSum) {
  auto bins = bin_accuracy_by_disagreement({}, default_bin_edges(4));
  ASSERT_EQ(bins.size(), 4u);
  for (const auto& b : bins) {
    EXPECT_EQ(b.count, 0u);
    EXPECT_FALSE(b.accuracy);
  }

  Rng rng(3);
  std::vector<DisagreementRecord> recs;
  for (int i = 0; i < 500; ++i) {
    const std::pair<double, double> a{uniform01(rng), uniform01(rng)}, b{uniform01(rng), uniform01(rng)};
    recs.push_back(make_disagreement_record(a, b, rng() % 2));
  }
  recs.push_back(make_disagreement_record({0, 1}, {1, 0}, true));
  std::size_t total = 0;
  for (const auto& b : bin_accuracy_by_disagreement(recs, default_bin_edges())) total += b.count;
  EXPECT_EQ(total, recs.size());
}

TEST(Bins, EdgeValidation) {
  EXPECT_THROW(bin_accuracy_by_disagreement({}, {0.0}), Error);
  EXPECT_THROW(bin_accuracy_by_disagreement({}, {0.0, 0.5, 0.5, 1.5}), Error);
  EXPECT_THROW(bin_accuracy_by_disagreement({}, {0.0, 1.0}), Error);
  EXPECT_THROW(bin_accuracy_by_disagreement({}, {0.1, 1.5}), Error);
  EXPECT_NO_THROW(bin_accuracy_by_disagreement({}, {0.0, 1.5}));
}
