#include <gtest/gtest.h>

#include <random>

#include "research/reward.hpp"
#include "support.hpp"

using namespace research;
using Tokens = std::vector<std::string>;

TEST(NormalizeAnswer, Examples) {
  EXPECT_EQ(normalize_answer("The Labor Party (Mexico)"), (Tokens{"labor", "party", "mexico"}));
  EXPECT_TRUE(normalize_answer("").empty());
  EXPECT_EQ(normalize_answer("Andrés Manuel López Obrador"),
            (Tokens{"andrés", "manuel", "lópez", "obrador"}));
}

TEST(NormalizeAnswer, ArticlesOnlyAsWholeTokens) {
  EXPECT_EQ(normalize_answer("An anthem, a theme"), (Tokens{"anthem", "theme"}));
  EXPECT_EQ(normalize_answer("ÉCOLE Ünter"), (Tokens{"école", "ünter"}));
}

TEST(F1Score, Examples) {
  EXPECT_DOUBLE_EQ(f1_score("Andrés Manuel López Obrador", "Andrés Manuel López Obrador"), 1.0);
  // precision 1, recall 0.5
  EXPECT_NEAR(f1_score("López Obrador", "Andrés Manuel López Obrador"), 2.0 / 3.0, 1e-9);
  EXPECT_NEAR(f1_score("López Obrador", "Andrés Manuel López Obrador"), 0.6667, 1e-4);
  EXPECT_EQ(f1_score("cat", "dog"), 0.0);
  EXPECT_EQ(f1_score("", ""), 0.0);
  EXPECT_EQ(f1_score("the", "a"), 0.0);
}

TEST(F1Score, RespectsMultiplicity) {
  // overlap is one "paris", not two
  EXPECT_NEAR(f1_score("paris paris", "paris lake"), 0.5, 1e-12);
}

TEST(F1Score, MatchesMultisetOracle) {
  std::mt19937_64 rng(5);
  for (int iter = 0; iter < 10000; ++iter) {
    const auto p = testing_support::random_token_list(rng);
    const auto g = testing_support::random_token_list(rng);
    const auto ps = testing_support::join_vocab(p);
    const auto gs = testing_support::join_vocab(g);
    ASSERT_NEAR(f1_score(ps, gs), testing_support::oracle_f1(p, g), 1e-12) << ps << " | " << gs;
  }
}

TEST(F1Score, SymmetricAndBounded) {
  std::mt19937_64 rng(6);
  for (int iter = 0; iter < 5000; ++iter) {
    const auto a = testing_support::join_vocab(testing_support::random_token_list(rng));
    const auto b = testing_support::join_vocab(testing_support::random_token_list(rng));
    const double f = f1_score(a, b);
    ASSERT_DOUBLE_EQ(f, f1_score(b, a));
    ASSERT_GE(f, 0.0);
    ASSERT_LE(f, 1.0);
    if (exact_match(a, b) && !normalize_answer(a).empty()) {
      ASSERT_DOUBLE_EQ(f, 1.0);
    }
  }
}

TEST(ExactMatch, Examples) {
  EXPECT_TRUE(exact_match("the Labor Party", "Labor Party"));
  EXPECT_FALSE(exact_match("Labor Party", "Labour Party"));
  EXPECT_TRUE(exact_match("", ""));
  EXPECT_FALSE(exact_match("party labor", "labor party"));
}

TEST(RewardFrom, ThreeBranchesExhaustively) {
  for (double f1 : {0.0, 1e-9, 0.05, 0.1, 0.5, 2.0 / 3.0, 1.0}) {
    for (bool ok : {false, true}) {
      const double expected = f1 > 0.0 ? f1 : (ok ? 0.1 : 0.0);
      EXPECT_EQ(reward_from(f1, ok), expected) << f1 << " " << ok;
    }
  }
}

TEST(ComputeReward, Branches) {
  const auto valid = [](std::string_view pred) {
    return parse_rollout("<think>t</think><answer>\\boxed{" + std::string(pred) + "}</answer>");
  };
  auto r = compute_reward(valid("Brindmoor"), false, {"Brindmoor"});
  EXPECT_EQ(r.reward, 1.0);
  EXPECT_TRUE(r.format_ok);
  EXPECT_EQ(r.pred, "Brindmoor");

  r = compute_reward(valid("Orvane"), false, {"Brindmoor"});
  EXPECT_EQ(r.f1, 0.0);
  EXPECT_DOUBLE_EQ(r.reward, 0.1);

  r = compute_reward(parse_rollout("<answer>\\boxed{Orvane}</answer> trailing"), false, {"Brindmoor"});
  EXPECT_FALSE(r.format_ok);
  EXPECT_EQ(r.reward, 0.0);

  // A correct answer pays out even when the format is broken.
  r = compute_reward(valid("Brindmoor"), true, {"Brindmoor"});
  EXPECT_FALSE(r.format_ok);
  EXPECT_EQ(r.reward, 1.0);
}

TEST(ComputeReward, MaxOverGoldAnswers) {
  const auto rollout = parse_rollout("<answer>\\boxed{López Obrador}</answer>");
  const auto r = compute_reward(rollout, false, {"cat", "Andrés Manuel López Obrador", "Obrador"});
  EXPECT_DOUBLE_EQ(r.f1, 2.0 / 3.0);
}

TEST(ComputeReward, MissingBoxRoutesThroughFormatBranch) {
  const auto r = compute_reward(parse_rollout("<answer>Brindmoor</answer>"), false, {"Brindmoor"});
  EXPECT_EQ(r.pred, "");
  EXPECT_EQ(r.f1, 0.0);
  EXPECT_EQ(r.reward, 0.0);
}

TEST(ComputeReward, EmptyGoldsRejected) {
  try {
    compute_reward(parse_rollout(""), false, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidArgument);
  }
}
