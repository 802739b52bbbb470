#include <gtest/gtest.h>

#include <array>
#include <cmath>

#include "lgrpo/policy.hpp"
#include "support.hpp"

using namespace lgrpo;
using lgrpo_test::fd_gradient;
using lgrpo_test::random_pair_context;
using lgrpo_test::random_toy;
using lgrpo_test::rel_error;

namespace {

const Vocabulary& vocab16() {
  static const Vocabulary v = Vocabulary::toy(16);
  return v;
}

double sum_logprob(const ToyPolicy& p, const Context& c, const std::vector<TokenId>& tokens) {
  double s = 0.0;
  for (double x : p.logprobs(c, tokens)) s += x;
  return s;
}

}  // namespace

TEST(Vocabulary, ToyLayoutAndValidation) {
  const auto& v = vocab16();
  EXPECT_EQ(v.size(), 16);
  EXPECT_EQ(v.name(v.think_open()), "<think>");
  EXPECT_EQ(v.name(v.answer_close()), "</answer>");
  EXPECT_TRUE(v.cue_first() && v.cue_second());
  EXPECT_THROW(Vocabulary::toy(8), Error);
  EXPECT_THROW(Vocabulary({"<think>", "</think>"}), Error);
  EXPECT_THROW(Vocabulary::bare({"a", "a"}), Error);
  EXPECT_THROW(Vocabulary::bare({}), Error);
}

TEST(Vocabulary, DetokenizedRolloutParses) {
  const auto& v = vocab16();
  std::vector<TokenId> t{v.think_open(), *v.find("w1"), v.think_close(), v.answer_open(),
                         v.second(), v.answer_close()};
  auto parsed = parse_answer(v.detokenize(t));
  ASSERT_TRUE(parsed);
  EXPECT_EQ(parsed->choice, Winner::second);
  EXPECT_EQ(parsed->raw_think, "w1");
}

TEST(ToyPolicy, SamplingIsDeterministic) {
  auto p = random_toy(vocab16(), 5, 1);
  Rng rng(2);
  auto c = random_pair_context(5, rng);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto a = sample_rollout(p, c, 1.1, 40, seed);
    auto b = sample_rollout(p, c, 1.1, 40, seed);
    EXPECT_EQ(a.tokens, b.tokens);
    EXPECT_EQ(a.logprobs_old, b.logprobs_old);
    EXPECT_EQ(a.text, b.text);
  }
}

TEST(ToyPolicy, RolloutInvariants) {
  auto p = random_toy(vocab16(), 5, 3);
  Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    auto c = random_pair_context(5, rng);
    auto r = sample_rollout(p, c, 1.1, 30, rng());
    ASSERT_EQ(r.tokens.size(), r.logprobs_old.size());
    EXPECT_GE(r.tokens.size(), 1u);
    EXPECT_LE(r.tokens.size(), 30u);
    for (double lp : r.logprobs_old) {
      EXPECT_LE(lp, 0.0);
      EXPECT_GT(std::exp(lp), 0.0);
    }
    if (r.tokens.size() < 30) {
      EXPECT_EQ(r.tokens.back(), vocab16().answer_close());
    }
  }
}

TEST(ToyPolicy, ZeroTemperatureLimitIsGreedy) {
  auto p = random_toy(vocab16(), 5, 7, 1.0);
  Rng rng(8);
  for (int i = 0; i < 20; ++i) {
    auto c = random_pair_context(5, rng);
    // Oracle: repeatedly take the argmax next-token logit.
    std::vector<TokenId> all(vocab16().size());
    for (int t = 0; t < vocab16().size(); ++t) all[t] = t;
    std::vector<TokenId> greedy;
    for (int step = 0; step < 25; ++step) {
      Context prefix = c;
      prefix.partial_answer = greedy;
      auto z = p.answer_logits(prefix, all).logits;
      const auto best = static_cast<TokenId>(std::max_element(z.begin(), z.end()) - z.begin());
      greedy.push_back(best);
      if (best == vocab16().answer_close()) break;
    }
    EXPECT_EQ(sample_rollout(p, c, 1e-4, 25, rng()).tokens, greedy);
  }
}

TEST(ToyPolicy, UniformFourTokenFrequencies) {
  ToyPolicy p(Vocabulary::bare({"a", "b", "c", "d"}), 0);
  const int n = 100000;
  std::array<int, 4> counts{};
  for (int s = 0; s < n; ++s) ++counts[sample_rollout(p, {}, 1.0, 1, s).tokens.at(0)];
  const double sigma = std::sqrt(n * 0.25 * 0.75);
  for (int c : counts) EXPECT_LT(std::abs(c - n * 0.25), 3.0 * sigma) << c;
}

TEST(ToyPolicy, LogprobsMatchSamplingPolicy) {
  auto p = random_toy(vocab16(), 5, 9);
  Rng rng(10);
  for (int i = 0; i < 30; ++i) {
    auto c = random_pair_context(5, rng);
    auto r = sample_rollout(p, c, 1.3, 30, rng());
    auto lp = logprobs_under(p, r);
    ASSERT_EQ(lp.size(), r.logprobs_old.size());
    for (std::size_t t = 0; t < lp.size(); ++t) EXPECT_NEAR(lp[t], r.logprobs_old[t], 1e-12);
  }
}

TEST(ToyPolicy, TwoTokenUniformLogprob) {
  ToyPolicy p(Vocabulary::bare({"x", "y"}), 0);
  auto lp = p.logprobs({}, std::vector<TokenId>{0, 1, 1, 0});
  for (double x : lp) EXPECT_NEAR(x, std::log(0.5), 1e-15);
}

TEST(ToyPolicy, PerturbedRatioIsExpOfDifference) {
  auto p = random_toy(vocab16(), 5, 11);
  auto q = lgrpo_test::perturbed(p, 12, 0.1);
  Rng rng(13);
  auto c = random_pair_context(5, rng);
  auto r = sample_rollout(p, c, 1.0, 30, 99);
  auto a = logprobs_under(p, r), b = logprobs_under(q, r);
  ASSERT_NE(a, b);
  auto tp = p.trace(c, r.tokens), tq = q.trace(c, r.tokens);
  for (std::size_t t = 0; t < r.tokens.size(); ++t) {
    const double ratio = tq.probs[t][r.tokens[t]] / tp.probs[t][r.tokens[t]];
    EXPECT_NEAR(std::exp(b[t] - a[t]), ratio, 1e-12 * ratio);
  }
}

TEST(ToyPolicy, OutOfVocabRejected) {
  auto p = random_toy(vocab16(), 5, 1);
  EXPECT_THROW(p.logprobs({}, std::vector<TokenId>{16}), Error);
  EXPECT_THROW(p.logprobs({}, std::vector<TokenId>{-1}), Error);
  EXPECT_THROW(answer_logits(p, {}, std::vector<TokenId>{}), Error);
  EXPECT_THROW(sample_rollout(p, {}, 0.0, 5, 1), Error);
  EXPECT_THROW(sample_rollout(p, {}, 1.0, 0, 1), Error);
}

TEST(ToyPolicy, FullVocabSoftmaxSumsToOne) {
  auto p = random_toy(vocab16(), 5, 14, 2.0);
  Rng rng(15);
  std::vector<TokenId> all(16);
  for (int t = 0; t < 16; ++t) all[t] = t;
  for (int i = 0; i < 20; ++i) {
    auto c = random_pair_context(5, rng);
    c.reasoning_tokens = {vocab16().think_open(), 10, 11, vocab16().think_close()};
    c.partial_answer = {vocab16().answer_open()};
    auto probs = softmax(p.answer_logits(c, all).logits);
    double s = 0;
    for (double x : probs) s += x;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  auto one = p.answer_logits({}, std::vector<TokenId>{3});
  ASSERT_EQ(one.logits.size(), 1u);
  EXPECT_EQ(softmax(one.logits)[0], 1.0);
}

TEST(ToyPolicy, SwappedItemsSwapAnswerLogits) {
  const auto& v = vocab16();
  // Antisymmetric answer head: first and second rows are mirror images on
  // the item-difference columns and equal elsewhere.
  auto p = random_toy(v, 5, 16);
  Rng rng(17);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int j = 0; j < p.weights().cols; ++j) p.weights()(v.second(), j) = p.weights()(v.first(), j);
  for (int i = 0; i < 5; ++i) {
    const double w = n(rng);
    p.weights()(v.first(), p.diff_col(i)) = w;
    p.weights()(v.second(), p.diff_col(i)) = -w;
  }
  for (int i = 0; i < 20; ++i) {
    auto c = random_pair_context(5, rng);
    c.reasoning_tokens = {v.think_open(), *v.find("w2"), v.think_close()};
    c.partial_answer = {v.answer_open()};
    auto swapped = c;
    std::swap(swapped.visual[0], swapped.visual[1]);
    auto a = p.answer_logits(c, v.answer_candidates());
    auto b = p.answer_logits(swapped, v.answer_candidates());
    EXPECT_NEAR(a.logits[0], b.logits[1], 1e-12);
    EXPECT_NEAR(a.logits[1], b.logits[0], 1e-12);
    EXPECT_NE(a.logits[0], a.logits[1]);
  }
}

TEST(ToyGradient, MatchesFiniteDifferencesAtStep1e6) {
  const auto& v = vocab16();
  auto p = random_toy(v, 3, 18);
  Rng rng(19);
  auto c = random_pair_context(3, rng);
  auto r = sample_rollout(p, c, 1.0, 12, 5);
  auto g = toy_grad_logprob(p, r);
  auto fd = fd_gradient(p, [&](const ToyPolicy& q) { return sum_logprob(q, c, r.tokens); }, 1e-6);
  EXPECT_LT(rel_error(g, fd), 1e-5);
}

TEST(ToyGradient, MatchesFiniteDifferencesOn100Instances) {
  const auto& v = Vocabulary::toy(10);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    Rng rng(1000 + i);
    auto p = random_toy(v, 2, rng(), 1.0);
    auto c = random_pair_context(2, rng);
    auto r = sample_rollout(p, c, 1.0, 8, rng());
    auto g = toy_grad_logprob(p, r);
    auto fd = fd_gradient(p, [&](const ToyPolicy& q) { return sum_logprob(q, c, r.tokens); }, 1e-5);
    worst = std::max(worst, rel_error(g, fd));
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(ToyGradient, OneTokenVocabIsZero) {
  ToyPolicy p(Vocabulary::bare({"only"}), 0);
  auto r = sample_rollout(p, {}, 1.0, 6, 3);
  EXPECT_EQ(r.tokens.size(), 6u);
  for (double lp : r.logprobs_old) EXPECT_EQ(lp, 0.0);
  EXPECT_EQ(toy_grad_logprob(p, r).max_abs(), 0.0);
}

TEST(ToyGradient, LinearInRollouts) {
  const auto& v = vocab16();
  auto p = random_toy(v, 4, 20);
  Rng rng(21);
  auto c = random_pair_context(4, rng);
  auto r1 = sample_rollout(p, c, 1.0, 20, 1);
  auto r2 = sample_rollout(p, c, 1.0, 20, 2);
  auto sum = toy_grad_logprob(p, r1);
  sum += toy_grad_logprob(p, r2);
  std::vector<double> w(r1.tokens.size(), 1.0);
  auto g1 = p.grad_weighted(c, r1.tokens, w);
  w.assign(r2.tokens.size(), 1.0);
  g1 += p.grad_weighted(c, r2.tokens, w);
  EXPECT_EQ(rel_error(g1, sum), 0.0);

  std::vector<double> twice(r1.tokens.size(), 2.0);
  auto doubled = toy_grad_logprob(p, r1);
  doubled *= 2.0;
  EXPECT_LT(rel_error(p.grad_weighted(c, r1.tokens, twice), doubled), 1e-15);
}

TEST(ToyPolicy, JsonRoundTrip) {
  auto p = random_toy(vocab16(), 5, 22);
  auto back = toy_policy_from_json(nlohmann::json::parse(to_json(p).dump()));
  EXPECT_EQ(back, p);
  auto j = to_json(p);
  j["weights"].erase(0);
  EXPECT_THROW(toy_policy_from_json(j), Error);
}

TEST(ToyPolicy, ReferenceFollowsGrammar) {
  auto p = ToyPolicy::reference(vocab16(), 5);
  Rng rng(23);
  int parsed = 0;
  for (int i = 0; i < 200; ++i) {
    auto r = sample_rollout(p, random_pair_context(5, rng), 1.1, 64, rng());
    parsed += parse_answer(r.text) ? 1 : 0;
  }
  EXPECT_GT(parsed, 190);
}

TEST(CountingPolicy, CountsEveryCall) {
  auto p = ToyPolicy::reference(vocab16(), 5);
  CountingPolicy counted(p);
  auto r = sample_rollout(counted, {}, 1.0, 10, 1);
  logprobs_under(counted, r);
  answer_logits(counted, {}, vocab16().answer_candidates());
  answer_logits(counted, {}, vocab16().answer_candidates());
  EXPECT_EQ(counted.samples(), 1);
  EXPECT_EQ(counted.logprob_calls(), 1);
  EXPECT_EQ(counted.answer_calls(), 2);
}
