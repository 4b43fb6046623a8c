#pragma once

#include "arena/time.hpp"

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace arena {

enum class StageKind { ranking_task, instance_task };
enum class Metric { map_at_k, instance_log };
enum class RelevanceUniverse { all_interactions, test_only };
enum class ObjectiveSense { min, max };
enum class Visibility { open, registered };
enum class BadgeTrigger { first_submission, first_past_baseline, custom };
enum class LeaderboardMode { best, latest };

std::string_view to_string(StageKind v);
std::string_view to_string(Metric v);
std::string_view to_string(RelevanceUniverse v);
std::string_view to_string(ObjectiveSense v);
std::string_view to_string(Visibility v);
std::string_view to_string(BadgeTrigger v);
std::string_view to_string(LeaderboardMode v);

struct BenchmarkInstance {
  std::string name;
  ObjectiveSense sense = ObjectiveSense::min;
  // Optional instance file in data storage; checked by check_data_storage.
  std::string file;

  bool operator==(const BenchmarkInstance&) const = default;
};

struct EvaluatorSpec {
  int version = 1;
  Metric metric = Metric::map_at_k;

  // map_at_k
  int k = 10;
  RelevanceUniverse relevance_universe = RelevanceUniverse::all_interactions;
  // Alternative twist reading: drop recommended items outside the test
  // universe before computing AP.
  bool list_filter = false;
  std::string ground_truth;

  // instance_log
  std::string benchmark_manifest;
  std::vector<BenchmarkInstance> instances;

  bool requires_verification = true;

  const BenchmarkInstance* find_instance(std::string_view name) const;
  bool operator==(const EvaluatorSpec&) const = default;
};

struct StageConfig {
  std::string stage_id;
  StageKind kind = StageKind::ranking_task;
  Timestamp open;
  Timestamp close;
  std::optional<Timestamp> preliminary_deadline;
  int daily_submission_limit = 10;
  Seconds aggregation_cadence{5};
  std::vector<EvaluatorSpec> evaluator_versions;
  std::optional<double> baseline_score;
  // Files the directory scanner treats as artifacts for this stage.
  std::string artifact_extension = ".csv";

  const EvaluatorSpec& evaluator(int version) const;
  bool contains(Timestamp t) const { return open <= t && t < close; }
  bool operator==(const StageConfig&) const = default;
};

struct ManifestEntry {
  std::string file;
  std::string sha256;
  Visibility visibility = Visibility::registered;

  bool operator==(const ManifestEntry&) const = default;
};

struct BadgeRule {
  std::string badge_id;
  BadgeTrigger trigger = BadgeTrigger::first_submission;
  // Name of a registered custom predicate when trigger == custom.
  std::string predicate;
  // Empty means every stage.
  std::string stage_id;

  bool operator==(const BadgeRule&) const = default;
};

struct VerificationPolicy {
  double map_tolerance = 1e-6;
  double objective_tolerance = 1e-6;
  // Verification results applied per aggregator cycle.
  std::size_t batch_size = 64;
  int alert_after_failures = 3;
  Seconds initial_backoff{60};
  Seconds max_backoff{3600};

  bool operator==(const VerificationPolicy&) const = default;
};

struct CompetitionConfig {
  std::string competition_id;
  std::string title;
  std::string official_time_zone;
  Timestamp registration_open;
  Timestamp registration_close;
  std::vector<StageConfig> stages;
  std::vector<ManifestEntry> data_manifest;
  std::optional<std::string> discussion_url;
  std::vector<BadgeRule> badge_rules;
  LeaderboardMode leaderboard_mode = LeaderboardMode::best;
  std::size_t payload_size_cap = 16u << 20;
  bool frozen_boards_public = true;
  VerificationPolicy verification;

  const StageConfig* find_stage(std::string_view id) const;
  // Throws Error(not_found).
  const StageConfig& stage(std::string_view id) const;
  const ManifestEntry* find_manifest(std::string_view file) const;

  bool operator==(const CompetitionConfig&) const = default;
};

// Parses and validates a JSON config document. Validation errors carry the
// offending field path, e.g. "stages[1].preliminary_deadline: ...".
CompetitionConfig load_config(std::string_view source);
CompetitionConfig load_config_file(const std::filesystem::path& path);

// Canonical JSON; load_config(serialize_config(c)) == c.
std::string serialize_config(const CompetitionConfig& config);

// The stage whose [open, close) interval contains now.
std::optional<std::string> active_stage(const CompetitionConfig& config, Timestamp now);

// Checks that every file the evaluators reference exists under data_root.
void check_data_storage(const CompetitionConfig& config, const std::filesystem::path& data_root);

bool is_identifier(std::string_view text);

} // namespace arena
