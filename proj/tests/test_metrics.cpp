#include "arena/error.hpp"
#include "arena/evaluation.hpp"
#include "arena/metrics.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace arena;
using namespace arena::test;

namespace {

double ap(std::vector<std::string> ranked, std::set<std::string> relevant, std::size_t k)
{
  return average_precision<std::string, std::set<std::string>>(ranked, relevant, k);
}

EvaluatorSpec map_spec(int k, RelevanceUniverse u, bool list_filter = false)
{
  EvaluatorSpec s;
  s.metric = Metric::map_at_k;
  s.k = k;
  s.relevance_universe = u;
  s.list_filter = list_filter;
  s.ground_truth = "holdout.csv";
  return s;
}

} // namespace

TEST(AveragePrecision, SingleRelevantAtTop)
{
  EXPECT_EQ(ap({"a"}, {"a"}, 10), 1.0);
}

TEST(AveragePrecision, RelevantAtRankTwo)
{
  const double expected = static_cast<double>(oracle_ap({"b", "a"}, {"a"}, 10));
  EXPECT_EQ(expected, 0.5);
  EXPECT_EQ(ap({"b", "a"}, {"a"}, 10), expected);
}

TEST(AveragePrecision, TwoOfThree)
{
  const double expected = static_cast<double>(oracle_ap({"a", "b", "c"}, {"a", "c"}, 3));
  EXPECT_NEAR(expected, 5.0 / 6.0, 1e-15);
  EXPECT_NEAR(ap({"a", "b", "c"}, {"a", "c"}, 3), 5.0 / 6.0, 1e-15);
}

TEST(AveragePrecision, NormalizerIsMinOfKAndRelevant)
{
  // Three relevant items, k = 2: both slots hit -> 1.
  EXPECT_EQ(ap({"a", "b"}, {"a", "b", "c"}, 2), 1.0);
  // Only one of two slots hits.
  EXPECT_EQ(ap({"a", "x"}, {"a", "b", "c"}, 2), 0.5);
}

TEST(AveragePrecision, ItemsBelowKIgnored)
{
  EXPECT_EQ(ap({"x", "y", "a"}, {"a"}, 2), 0.0);
}

TEST(AveragePrecision, Errors)
{
  EXPECT_THROW(ap({"a", "a"}, {"a"}, 3), Error);
  EXPECT_THROW(ap({"a"}, {}, 3), Error);
  EXPECT_THROW(ap({"a"}, {"a"}, 0), Error);
}

TEST(AveragePrecision, EmptyListScoresZero)
{
  EXPECT_EQ(ap({}, {"a"}, 3), 0.0);
}

TEST(AveragePrecision, MatchesOracleOnRandomLists)
{
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 2000; ++trial) {
    const int n = static_cast<int>(rng() % 30);
    const int k = 1 + static_cast<int>(rng() % 15);
    std::vector<std::string> pool;
    for (int i = 0; i < 40; ++i) {
      pool.push_back("i" + std::to_string(i));
    }
    std::shuffle(pool.begin(), pool.end(), rng);
    std::vector<std::string> ranked(pool.begin(), pool.begin() + n);
    std::set<std::string> rel;
    for (const auto& item : pool) {
      if (rng() % 4 == 0) rel.insert(item);
    }
    if (rel.empty()) rel.insert(pool.back());
    EXPECT_NEAR(ap(ranked, rel, k), static_cast<double>(oracle_ap(ranked, rel, k)), 1e-12);
  }
}

TEST(AveragePrecision, PermutingIrrelevantTailKeepsScore)
{
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<std::string> ranked;
    std::set<std::string> rel;
    for (int i = 0; i < 12; ++i) {
      ranked.push_back("i" + std::to_string(i));
      if (rng() % 3 == 0) rel.insert(ranked.back());
    }
    if (rel.empty()) rel.insert("i0");
    std::size_t last_hit = 0;
    for (std::size_t i = 0; i < ranked.size(); ++i) {
      if (rel.count(ranked[i])) last_hit = i;
    }
    const double before = ap(ranked, rel, 10);
    std::shuffle(ranked.begin() + static_cast<long>(last_hit) + 1, ranked.end(), rng);
    EXPECT_EQ(ap(ranked, rel, 10), before);
  }
}

TEST(AveragePrecision, RelevantAtRankOneNeverDecreases)
{
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<std::string> ranked;
    std::set<std::string> rel{"new"};
    for (int i = 0; i < 8; ++i) {
      ranked.push_back("i" + std::to_string(i));
      if (rng() % 3 == 0) rel.insert(ranked.back());
    }
    const int k = 1 + static_cast<int>(rng() % 10);
    const double before = ap(ranked, rel, k);
    ranked.insert(ranked.begin(), "new");
    EXPECT_GE(ap(ranked, rel, k) + 1e-15, before);
  }
}

TEST(RoundScore, SixDecimals)
{
  EXPECT_EQ(round_score(5.0 / 6.0), 0.833333);
  EXPECT_EQ(round_score(0.1234567), 0.123457);
  EXPECT_EQ(round_score(1.0), 1.0);
  // Exact binary halves go to even: 0.5 and 1.5 millionths scaled.
  EXPECT_EQ(std::nearbyint(2.5), 2.0);
  EXPECT_EQ(round_score(0.0), 0.0);
}

TEST(CompensatedSum, RecoversLostLowBits)
{
  CompensatedSum s;
  s.add(1e16);
  for (int i = 0; i < 1000; ++i) s.add(1.0);
  s.add(-1e16);
  EXPECT_EQ(s.value(), 1000.0);
}

TEST(EvaluateMap, TwoUsersMean)
{
  const std::vector<RawInteraction> rows{{"u1", "a", 1, true}, {"u2", "a", 1, true}};
  const auto gt = parse_ground_truth(ground_truth_csv(rows));
  const auto sub = parse_ranking_submission(ranking_csv({{"u1", {"a"}}, {"u2", {"b", "a"}}}), 10);
  const auto rec = evaluate_map(sub, gt, map_spec(10, RelevanceUniverse::all_interactions));
  EXPECT_EQ(*rec.primary_score, 0.75);
  EXPECT_EQ(rec.aux.at("evaluated_users"), 2);
}

TEST(EvaluateMap, TrainOnlyUserExcludedUnderTestOnly)
{
  // u2's only positive is an item that never occurs in the test split.
  const std::vector<RawInteraction> rows{
    {"u1", "a", 1, true}, {"u2", "old", 1, false}, {"u1", "b", 0, true}};
  const auto gt = parse_ground_truth(ground_truth_csv(rows));
  const std::map<std::string, std::vector<std::string>> lists{{"u1", {"a"}}, {"u2", {"x"}}};
  const auto sub = parse_ranking_submission(ranking_csv(lists), 10);
  const auto v1 = evaluate_map(sub, gt, map_spec(10, RelevanceUniverse::all_interactions));
  const auto v2 = evaluate_map(sub, gt, map_spec(10, RelevanceUniverse::test_only));
  EXPECT_NEAR(*v1.primary_score, static_cast<double>(oracle_map(rows, lists, 10, false)), 1e-12);
  EXPECT_NEAR(*v2.primary_score, static_cast<double>(oracle_map(rows, lists, 10, true)), 1e-12);
  EXPECT_EQ(*v1.primary_score, 0.5);
  EXPECT_EQ(*v2.primary_score, 1.0);
  EXPECT_EQ(v2.aux.at("evaluated_users"), 1);
}

TEST(EvaluateMap, MissingUserScoresZero)
{
  const std::vector<RawInteraction> rows{{"u1", "a", 1, true}, {"u2", "a", 1, true}, {"u3", "a", 1, true}};
  const auto gt = parse_ground_truth(ground_truth_csv(rows));
  const auto sub = parse_ranking_submission(ranking_csv({{"u1", {"a"}}, {"u2", {"a"}}}), 10);
  EXPECT_NEAR(*evaluate_map(sub, gt, map_spec(10, RelevanceUniverse::all_interactions)).primary_score, 2.0 / 3.0,
              1e-15);
}

TEST(EvaluateMap, UnknownUserRejected)
{
  const auto gt = parse_ground_truth(ground_truth_csv({{"u1", "a", 1, true}}));
  const auto sub = parse_ranking_submission(ranking_csv({{"ghost", {"a"}}}), 10);
  EXPECT_THROW(evaluate_map(sub, gt, map_spec(10, RelevanceUniverse::all_interactions)), Error);
}

TEST(EvaluateMap, ListFilterReading)
{
  // With the filter, a train-only item in front no longer pushes the hit down.
  const std::vector<RawInteraction> rows{{"u1", "a", 1, true}, {"u1", "old", 1, false}};
  const std::map<std::string, std::vector<std::string>> lists{{"u1", {"old", "a"}}};
  const auto gt = parse_ground_truth(ground_truth_csv(rows));
  const auto sub = parse_ranking_submission(ranking_csv(lists), 10);
  const auto filtered = evaluate_map(sub, gt, map_spec(10, RelevanceUniverse::test_only, true));
  EXPECT_EQ(*filtered.primary_score, 1.0);
  EXPECT_NEAR(*filtered.primary_score, static_cast<double>(oracle_map(rows, lists, 10, true, true)), 1e-12);
  const auto unfiltered = evaluate_map(sub, gt, map_spec(10, RelevanceUniverse::test_only, false));
  EXPECT_EQ(*unfiltered.primary_score, 0.5);
}

TEST(EvaluateMap, RandomFixturesMatchOracle)
{
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 300; ++trial) {
    const int k = std::array{1, 3, 10}[trial % 3];
    const auto f = random_ranking_fixture(rng, k);
    const auto gt = parse_ground_truth(ground_truth_csv(f.rows));
    const auto sub = parse_ranking_submission(ranking_csv(f.lists), k);
    for (const bool test_only : {false, true}) {
      const auto spec = map_spec(k, test_only ? RelevanceUniverse::test_only : RelevanceUniverse::all_interactions);
      const double got = *evaluate_map(sub, gt, spec).primary_score;
      EXPECT_NEAR(got, static_cast<double>(oracle_map(f.rows, f.lists, k, test_only)), 1e-12);
      EXPECT_GE(got, 0.0);
      EXPECT_LE(got, 1.0);
    }
  }
}

TEST(EvaluateMap, DeterministicBitForBit)
{
  std::mt19937_64 rng(99);
  const auto f = random_ranking_fixture(rng, 10);
  const auto gt = parse_ground_truth(ground_truth_csv(f.rows));
  const auto payload = ranking_csv(f.lists);
  const auto spec = map_spec(10, RelevanceUniverse::all_interactions);
  EvaluationContext ctx;
  ctx.ground_truth = &gt;
  const auto a = evaluate(payload, spec, ctx);
  ctx.now = ctx.now + std::chrono::hours(5);
  const auto b = evaluate(payload, spec, ctx);
  EXPECT_EQ(a.primary_score, b.primary_score);
  EXPECT_EQ(a.aux, b.aux);
  EXPECT_NE(a.evaluated_at, b.evaluated_at);
}
