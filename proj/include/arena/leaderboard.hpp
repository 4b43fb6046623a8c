#pragma once

#include "arena/config.hpp"
#include "arena/evaluation.hpp"
#include "arena/time.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace arena {

struct LeaderboardRow {
  int rank = 0;
  std::string display_name;
  std::optional<double> best_score;
  int submission_count = 0;
  std::optional<Timestamp> last_submission_at;
  std::vector<std::string> badges;
  // Verification status of the record behind best_score; "invalidated" or
  // "rejected" when the team has no usable record.
  std::string verification_flag;

  bool operator==(const LeaderboardRow&) const = default;
};

struct LeaderboardSnapshot {
  std::uint64_t snapshot_id = 0;
  Timestamp created_at;
  std::string stage_id;
  int evaluator_version = 1;
  std::vector<LeaderboardRow> rows;
  bool frozen = false;
  std::string freeze_label;
  // Frozen copies: the live snapshot they were taken from.
  std::uint64_t frozen_from = 0;

  bool operator==(const LeaderboardSnapshot&) const = default;
};

// One accepted submission and its record under the leaderboard's evaluator
// version (null when not evaluated yet).
struct ScoredSubmission {
  SubmissionId submission_id = 0;
  std::string team_id;
  Timestamp received_at;
  const ScoreRecord* record = nullptr;
};

struct LeaderboardInput {
  std::span<const ScoredSubmission> submissions;
  int evaluator_version = 1;
  Metric metric = Metric::map_at_k;
  LeaderboardMode mode = LeaderboardMode::best;
  // team_id -> public display name for this stage.
  std::function<std::string(const std::string&)> display_name;
  // team_id -> badge ids in award order.
  std::map<std::string, std::vector<std::string>> badges;
};

// Rows in the deterministic total order: score desc, total runtime asc
// (instance_log only), earliest achieving submission asc, display name asc.
// Teams without a usable record follow, by display name. Throws
// Error(validation) if a record carries another evaluator version.
std::vector<LeaderboardRow> compute_leaderboard(const LeaderboardInput& input);

// `rank,team,score,submissions,last_submission_utc,badges,flags`, LF, scores
// rounded half-even to 6 decimals.
std::string render_csv(const LeaderboardSnapshot& snapshot);
std::string format_score(double score);

nlohmann::json render_json(const LeaderboardSnapshot& snapshot);
LeaderboardSnapshot snapshot_from_json(const nlohmann::json& j);
// Canonical serialized form; stable across runs and restarts.
std::string snapshot_bytes(const LeaderboardSnapshot& snapshot);
std::string snapshot_digest(const LeaderboardSnapshot& snapshot);

} // namespace arena
