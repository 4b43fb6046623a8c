#pragma once

#include "arena/aggregator.hpp"
#include "arena/ingestion.hpp"
#include "arena/registry.hpp"
#include "support.hpp"

#include <memory>

namespace arena::test {

// Holdout for stage1: item "old" is a train-only positive for every user,
// "new" a test positive. A team listing "old" first memorized training clicks.
inline std::vector<RawInteraction> twist_holdout()
{
  return {{"u1", "old", 1, false}, {"u1", "new", 1, true}, {"u2", "old", 1, false},
          {"u2", "fresh", 1, true}, {"u1", "noise", 0, true}};
}

// A full back-end over optional directories, on virtual time.
struct World {
  explicit World(nlohmann::json j = base_config(), std::filesystem::path root = {},
                 std::vector<RawInteraction> holdout = twist_holdout())
    : config(config_from(j)),
      clock(at("2026-01-10T15:00:00Z")),
      root_(std::move(root)),
      holdout_(std::make_shared<const GroundTruth>(parse_ground_truth(ground_truth_csv(holdout))))
  {
    rebuild();
  }

  // Drops and re-creates every component over the same directories.
  void rebuild()
  {
    aggregator.reset();
    ingestor.reset();
    registry.reset();
    registry = std::make_unique<Registry>(config, root_.empty() ? root_ : root_ / "registry");
    ingestor = std::make_unique<Ingestor>(config, *registry, clock, root_.empty() ? root_ : root_ / "submissions");
    AggregatorOptions o;
    if (!root_.empty()) {
      o.state_dir = root_ / "aggregator";
      o.public_dir = root_ / "public";
    }
    o.ground_truth["holdout.csv"] = holdout_;
    o.evaluation_threads = threads;
    aggregator = std::make_unique<Aggregator>(config, *registry, *ingestor, clock, o);
  }

  std::string team(const std::string& token1, const std::string& token2 = {})
  {
    const auto n = std::to_string(registry->size());
    return registry
      ->register_team({{{"Member" + n, "member" + n + "@example.org"}},
                       {{"stage1", token1}, {"stage2", token2.empty() ? token1 + "-2" : token2}},
                       true},
                      clock.now(), true)
      .team_id;
  }

  Submission submit(const std::string& team_id, const std::string& payload, const std::string& stage = "stage1")
  {
    return ingestor->accept_submission(team_id, stage, payload);
  }

  CompetitionConfig config;
  VirtualClock clock;
  unsigned threads = 2;
  std::unique_ptr<Registry> registry;
  std::unique_ptr<Ingestor> ingestor;
  std::unique_ptr<Aggregator> aggregator;

private:
  std::filesystem::path root_;
  std::shared_ptr<const GroundTruth> holdout_;
};

// Memorizer ranks the train-only "old" first; generalizer ranks test items.
inline std::string memorizer_payload()
{
  return ranking_csv({{"u1", {"old", "new"}}, {"u2", {"old", "x", "y", "fresh"}}});
}
inline std::string generalizer_payload()
{
  return ranking_csv({{"u1", {"x", "new", "old"}}, {"u2", {"fresh"}}});
}

} // namespace arena::test
