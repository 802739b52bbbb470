#include <gtest/gtest.h>

#include <random>

#include "lgrpo/reward.hpp"
#include "lgrpo/util.hpp"

using namespace lgrpo;

TEST(ParseAnswer, BarePayload) {
  auto r = parse_answer(R"(<think>ok</think><answer>"preferred": "second"</answer>)");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->choice, Winner::second);
  EXPECT_EQ(r->raw_think, "ok");
}

TEST(ParseAnswer, BracedPayloadAndWhitespace) {
  auto r = parse_answer("  <think>\n a b \n</think>\n <answer> {\"preferred\": \"first\"} </answer>\n");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->choice, Winner::first);
  EXPECT_EQ(r->raw_think, "a b");
}

TEST(ParseAnswer, Failures) {
  EXPECT_EQ(parse_answer(R"(<answer>"preferred": "first"</answer>)").failure(),
            FormatFailure::missing_think);
  EXPECT_EQ(parse_answer(R"(<think>a</think><answer>{"preferred": "third"}</answer>)").failure(),
            FormatFailure::bad_payload);
  EXPECT_EQ(parse_answer("<think>a</think>").failure(), FormatFailure::missing_answer);
  EXPECT_EQ(parse_answer(R"(<think>a</think><answer>"preferred": "first"</answer><answer>x</answer>)")
                .failure(),
            FormatFailure::multiple_blocks);
  EXPECT_EQ(parse_answer(R"(<think>a</think>junk<answer>"preferred": "first"</answer>)").failure(),
            FormatFailure::stray_text);
  EXPECT_EQ(parse_answer(R"(<answer>"preferred": "first"</answer><think>a</think>)").failure(),
            FormatFailure::stray_text);
  EXPECT_EQ(parse_answer(R"(<THINK>a</THINK><answer>"preferred": "first"</answer>)").failure(),
            FormatFailure::missing_think);
  EXPECT_EQ(parse_answer(R"(<think>a</think><answer>"preferred": 1</answer>)").failure(),
            FormatFailure::bad_payload);
}

TEST(FormatReward, Examples) {
  EXPECT_EQ(format_reward(R"(<think>ok</think><answer>"preferred": "second"</answer>)"), 1);
  EXPECT_EQ(format_reward(""), 0);
  EXPECT_EQ(format_reward(
                R"(<think>ok</think><answer>"preferred": "second"</answer><answer>"preferred": "second"</answer>)"),
            0);
}

TEST(FormatReward, AgreesWithParserOnMutations) {
  const std::string base = R"(<think>because</think> <answer>"preferred": "first"</answer>)";
  const std::string alphabet = "<>/\"{}: abfinrst";
  Rng rng(11);
  int ok = 0;
  for (int i = 0; i < 5000; ++i) {
    std::string s = base;
    const int edits = 1 + static_cast<int>(rng() % 3);
    for (int e = 0; e < edits; ++e) {
      const auto pos = rng() % (s.size() + 1);
      switch (rng() % 3) {
        case 0:
          if (pos < s.size()) s.erase(pos, 1);
          break;
        case 1:
          s.insert(pos, 1, alphabet[rng() % alphabet.size()]);
          break;
        default:
          if (pos < s.size()) s[pos] = alphabet[rng() % alphabet.size()];
      }
    }
    const bool parsed = static_cast<bool>(parse_answer(s));
    EXPECT_EQ(format_reward(s), parsed ? 1 : 0) << s;
    ok += parsed;
  }
  EXPECT_GT(ok, 0);
  EXPECT_LT(ok, 5000);
}

TEST(ExactMatch, Examples) {
  ParsedAnswer second{Winner::second, "", ""};
  ParsedAnswer first{Winner::first, "", ""};
  EXPECT_EQ(exact_match_reward(second, Winner::second), 1);
  EXPECT_EQ(exact_match_reward(first, Winner::second), 0);
  EXPECT_EQ(exact_match_reward(parse_answer("garbage"), Winner::second), 0);
  EXPECT_THROW(exact_match_reward(first, Winner::unknown), Error);
}

TEST(ApproxScore, Table) {
  const double expected[] = {1.0, 0.75, 0.5, 0.0, 0.0, 0.0};
  for (long d = 0; d < 6; ++d) {
    EXPECT_EQ(approx_score_reward({1 + d, 1, 10}), expected[d]);
    EXPECT_EQ(approx_score_reward({1, 1 + d, 10}), expected[d]);
  }
  EXPECT_THROW(approx_score_reward({0, 1, 10}), Error);
  EXPECT_THROW(approx_score_reward({11, 1, 10}), Error);
}

TEST(ApproxScore, NonIncreasingInDistance) {
  double prev = 2.0;
  for (long p = 5; p <= 10; ++p) {
    const double r = approx_score_reward({p, 5, 10});
    EXPECT_LE(r, prev);
    prev = r;
  }
}

TEST(ListenerReward, Examples) {
  EXPECT_EQ(listener_reward(0.5), 0.0);
  EXPECT_EQ(listener_reward(0.3), 0.0);
  EXPECT_NEAR(listener_reward(0.9), 0.4, 1e-15);
  EXPECT_THROW(listener_reward(1.2), Error);
  EXPECT_THROW(listener_reward(-0.1), Error);
}

TEST(ListenerReward, MonotoneAndZeroBelowHalf) {
  double prev = 0.0;
  for (int i = 0; i <= 1000; ++i) {
    const double p = i / 1000.0;
    const double r = listener_reward(p);
    if (p <= 0.5) {
      EXPECT_EQ(r, 0.0);
    }
    EXPECT_GE(r, prev);
    prev = r;
  }
}

TEST(CombinedReward, Examples) {
  EXPECT_EQ(combined_reward(1, 1, 0.5).total, 1.75);
  EXPECT_EQ(combined_reward(0, 0, 0.0).total, 0.0);
  EXPECT_NEAR(combined_reward(1, 1, listener_reward(0.8)).total, 1.65, 1e-12);
  EXPECT_THROW(combined_reward(2, 0, 0.0), Error);
  EXPECT_THROW(combined_reward(1, 0, 0.6), Error);
}

TEST(CombinedReward, BoundedAndZeroOnlyAtZero) {
  Rng rng(3);
  for (int i = 0; i < 10000; ++i) {
    const int f = static_cast<int>(rng() % 2), a = static_cast<int>(rng() % 2);
    const double l = listener_reward(uniform01(rng));
    const auto b = combined_reward(f, a, l);
    EXPECT_GE(b.total, 0.0);
    EXPECT_LE(b.total, 1.75);
    EXPECT_EQ(b.total == 0.0, f == 0 && a == 0 && l == 0.0);
    EXPECT_EQ(b.total, f + 0.5 * a + 0.5 * l);
  }
}

TEST(SetupVariant, GatesOnListenerScore) {
  EXPECT_EQ(setup_variant_reward(1, 1, 0.4).total, 0.0);
  EXPECT_NEAR(setup_variant_reward(1, 1, 0.8).total, 0.2 + 0.5, 1e-15);
  EXPECT_NEAR(setup_variant_reward(1, 0, 0.6).total, 0.4, 1e-15);
  EXPECT_EQ(setup_variant_reward(0, 0, 0.9).total, 0.0);
  EXPECT_NEAR(setup_variant_reward(1, 1, 0.8).r_list, 0.3, 1e-15);
}

TEST(AbsoluteReward, Examples) {
  const std::string exact = R"(<think>x</think><answer>"score": 7</answer>)";
  const std::string off2 = R"(<think>x</think><answer>{"score": 5}</answer>)";
  EXPECT_EQ(absolute_reward(exact, 7, 10), 3.0);
  EXPECT_EQ(absolute_reward(off2, 7, 10), 1.5);
  EXPECT_EQ(absolute_reward("no tags here", 7, 10), 0.0);
  EXPECT_EQ(absolute_reward(R"(<think>x</think><answer>"score": 11</answer>)", 7, 10), 0.0);

  RewardConfig cfg;
  cfg.absolute = {0.5, 2.0, 1.0};
  EXPECT_EQ(absolute_reward(exact, 7, 10, cfg), 0.5 + 2.0 + 1.0);
}
