#include "arena/config.hpp"
#include "arena/error.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

using namespace arena;
using namespace arena::test;
using nlohmann::json;

namespace {

std::string error_of(const json& j)
{
  try {
    load_config(j.dump());
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

} // namespace

TEST(Config, LoadsAndRoundTrips)
{
  const auto c = config_from(base_config());
  EXPECT_EQ(c.competition_id, "demo");
  ASSERT_EQ(c.stages.size(), 2u);
  EXPECT_EQ(c.stages[0].evaluator(2).relevance_universe, RelevanceUniverse::test_only);
  EXPECT_EQ(c.stages[1].evaluator(1).instances.size(), 3u);
  EXPECT_EQ(load_config(serialize_config(c)), c);
}

TEST(Config, OverlappingStagesNameBoth)
{
  auto j = base_config();
  j["stages"][1]["open"] = "2026-02-15T00:00:00Z";
  const auto msg = error_of(j);
  EXPECT_NE(msg.find("stage1"), std::string::npos) << msg;
  EXPECT_NE(msg.find("stage2"), std::string::npos) << msg;
}

TEST(Config, FieldPathsInErrors)
{
  auto j = base_config();
  j["stages"][0]["evaluator_versions"][0]["parameters"]["k"] = 0;
  EXPECT_NE(error_of(j).find("stages[0].evaluator_versions[0].parameters.k"), std::string::npos) << error_of(j);

  j = base_config();
  j["official_time_zone"] = "Mars/Olympus";
  EXPECT_NE(error_of(j).find("official_time_zone"), std::string::npos);

  j = base_config();
  j["stages"][0]["bogus"] = 1;
  EXPECT_NE(error_of(j).find("stages[0].bogus"), std::string::npos);

  j = base_config();
  j.erase("title");
  EXPECT_NE(error_of(j).find("title"), std::string::npos);
}

TEST(Config, PreliminaryDeadlineInsideStage)
{
  auto j = base_config();
  j["stages"][0]["preliminary_deadline"] = "2026-05-01T00:00:00Z";
  EXPECT_NE(error_of(j).find("preliminary_deadline"), std::string::npos);
  j["stages"][0]["preliminary_deadline"] = "2026-01-15T00:00:00Z";
  EXPECT_EQ(error_of(j), "");
}

TEST(Config, EvaluatorVersionsAreSequential)
{
  auto j = base_config();
  j["stages"][0]["evaluator_versions"][1]["version"] = 3;
  EXPECT_NE(error_of(j), "");
}

TEST(Config, GroundTruthNeverInManifest)
{
  auto j = base_config();
  j["data_manifest"].push_back({{"file", "holdout.csv"}, {"sha256", std::string(64, 'a')}, {"visibility", "public"}});
  EXPECT_NE(error_of(j), "");
}

TEST(Config, MetricMatchesStageKind)
{
  auto j = base_config();
  j["stages"][1]["evaluator_versions"][0]["metric"] = "map_at_k";
  EXPECT_NE(error_of(j), "");
}

TEST(Config, ActiveStage)
{
  const auto c = config_from(base_config());
  EXPECT_EQ(active_stage(c, at("2026-01-10T00:00:00Z")), "stage1");
  EXPECT_EQ(active_stage(c, at("2026-03-01T00:00:00Z")), "stage2");
  EXPECT_EQ(active_stage(c, at("2027-01-01T00:00:00Z")), std::nullopt);
}

TEST(Config, DataStorageCheck)
{
  TempDir dir;
  const auto c = config_from(base_config());
  EXPECT_THROW(check_data_storage(c, dir.path()), Error);
  for (const char* f : {"holdout.csv", "train.csv", "README.txt"}) {
    write_file_atomic(dir / f, "x");
  }
  EXPECT_NO_THROW(check_data_storage(c, dir.path()));
}
