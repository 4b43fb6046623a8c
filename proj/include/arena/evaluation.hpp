#pragma once

#include "arena/config.hpp"
#include "arena/time.hpp"

#include <json.hpp>

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace arena {

using SubmissionId = std::uint64_t;

// user_id -> items in rank order.
struct RankingSubmission {
  std::map<std::string, std::vector<std::string>> lists;
};

enum class Split { train, test };

struct Interaction {
  std::string user_id;
  std::string item_id;
  bool positive = false;
  Split split = Split::train;
};

struct GroundTruth {
  std::vector<Interaction> interactions;
  // Positive interactions per user, both splits.
  std::map<std::string, std::set<std::string>> relevant;
  // Items occurring in any test interaction.
  std::set<std::string> test_item_universe;
  std::set<std::string> users;

  static GroundTruth from_interactions(std::vector<Interaction> interactions);
  std::set<std::string> effective_relevant(const std::string& user, RelevanceUniverse universe) const;
};

enum class InstanceStatus { solved, infeasible, unsolved };

std::string_view to_string(InstanceStatus s);

struct InstanceResult {
  std::string instance;
  InstanceStatus status = InstanceStatus::unsolved;
  std::optional<double> objective;
  double runtime_s = 0.0;

  bool operator==(const InstanceResult&) const = default;
};

struct InstanceLog {
  std::vector<InstanceResult> rows;
};

enum class Verification { pending, verified, invalidated };

std::string_view to_string(Verification v);
Verification parse_verification(std::string_view s);

struct ScoreRecord {
  SubmissionId submission_id = 0;
  int evaluator_version = 1;
  // Absent for format errors.
  std::optional<double> primary_score;
  std::string format_error;
  nlohmann::json aux = nlohmann::json::object();
  Verification verification = Verification::pending;
  Timestamp evaluated_at;

  bool rejected() const { return !primary_score.has_value(); }
  double total_runtime_s() const;
};

// File formats. All throw Error(parse) with a line reference.
RankingSubmission parse_ranking_submission(std::string_view csv, int k);
GroundTruth parse_ground_truth(std::string_view csv);
InstanceLog parse_instance_log(std::string_view csv);
std::string write_instance_log(const InstanceLog& log);

// Per-user AP with k = spec.k, averaged over users whose effective relevant
// set is non-empty. Users missing from the submission score 0. Throws
// Error(unprocessable) when the submission names a user absent from the
// ground truth.
ScoreRecord evaluate_map(const RankingSubmission& sub, const GroundTruth& gt, const EvaluatorSpec& spec);

// Quality of one solved instance relative to the best known objective,
// clamped to [kMinQuality, 1].
double instance_quality(double objective, std::optional<double> best_known, ObjectiveSense sense);
inline constexpr double kMinQuality = 1e-6;

// primary_score = solved_count + mean quality over solved instances.
ScoreRecord evaluate_instance_log(const InstanceLog& log, const EvaluatorSpec& spec,
                                  const std::map<std::string, double>& best_known);

struct EvaluationContext {
  const GroundTruth* ground_truth = nullptr;
  const std::map<std::string, double>* best_known = nullptr;
  SubmissionId submission_id = 0;
  Timestamp now;
};

// Parses the payload as the spec's metric demands and scores it. Any parse or
// validation failure yields a rejected record instead of throwing.
ScoreRecord evaluate(std::string_view payload, const EvaluatorSpec& spec, const EvaluationContext& ctx);

// Eager shape check used at the submission endpoint; throws Error(unprocessable).
void validate_payload(std::string_view payload, const EvaluatorSpec& spec);

// Best objective per instance across solved rows, honoring each instance's sense.
void merge_best_known(std::map<std::string, double>& best, const InstanceLog& log, const EvaluatorSpec& spec);

} // namespace arena
