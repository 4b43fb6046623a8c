#pragma once

#include "arena/config.hpp"
#include "arena/evaluation.hpp"
#include "arena/ingestion.hpp"
#include "arena/leaderboard.hpp"
#include "arena/registry.hpp"
#include "arena/time.hpp"
#include "arena/verification.hpp"

#include <atomic>
#include <condition_variable>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

namespace arena {

struct BadgeAward {
  std::string badge_id;
  std::string stage_id;
  std::string team_id; // private
  std::string display_name;
  Timestamp awarded_at;
  // 0 for organizer grants and custom predicates.
  SubmissionId submission_id = 0;

  bool operator==(const BadgeAward&) const = default;
};

// What a custom badge predicate sees: the stage's submissions and their
// records under the current evaluator version. Returns team ids to award.
struct BadgeContext {
  const StageConfig& stage;
  std::span<const ScoredSubmission> submissions;
  const Registry& registry;
};
using BadgePredicate = std::function<std::vector<std::string>(const BadgeContext&)>;

struct AggregatorOptions {
  // Aggregator state, snapshots, verification queue. Empty: memory only.
  std::filesystem::path state_dir;
  // Published CSV artifacts. Empty: nothing written.
  std::filesystem::path public_dir;
  // Holdout files and benchmark manifests.
  std::filesystem::path storage_dir;
  // Directory tree scanned every cycle, if any.
  std::optional<std::filesystem::path> scan_root;
  // Ground truth preloaded by file name; consulted before storage_dir.
  std::map<std::string, std::shared_ptr<const GroundTruth>> ground_truth;
  unsigned evaluation_threads = 0; // 0: hardware concurrency
};

struct CycleReport {
  std::vector<SubmissionId> evaluated;
  std::vector<std::shared_ptr<const LeaderboardSnapshot>> published;
  std::vector<BadgeAward> awards;
  std::size_t verifications_applied = 0;
  std::vector<std::string> inactivated;
};

struct TwistReport {
  std::optional<std::uint64_t> frozen_snapshot_id;
  std::string freeze_label;
  int new_version = 0;
  std::size_t rescored = 0;
};

struct VerificationTask {
  Submission submission;
  ScoreRecord claimed;
  EvaluatorSpec spec;
};

struct VerificationState {
  int failures = 0;
  std::optional<Timestamp> next_attempt;
  bool alerted = false;
};

// The private back-end heartbeat. One logical writer: run_cycle, freeze,
// apply_twist and grant_badge serialize on a cycle lock. Readers get
// immutable snapshots through shared pointers and never block on a cycle for
// longer than a pointer copy.
class Aggregator {
public:
  Aggregator(const CompetitionConfig& config, Registry& registry, Ingestor& ingestor, const Clock& clock,
             AggregatorOptions options = {});

  // scan -> evaluate new submissions -> apply verification results ->
  // preliminary deadlines -> badges -> recompute rows -> publish changed
  // leaderboards -> persist state.
  CycleReport run_cycle();

  std::uint64_t freeze(const std::string& stage_id, const std::string& label);
  TwistReport apply_twist(const std::string& stage_id, int new_version);
  BadgeAward grant_badge(const std::string& stage_id, const std::string& badge_id, const std::string& display_name);

  void register_badge_predicate(const std::string& name, BadgePredicate predicate);

  // Pending records whose retry time has come; handed out at most once until
  // their result is consumed.
  std::vector<VerificationTask> take_due_verifications(const std::string& stage_id, Timestamp now);
  // Runs the hook over every due task of the stage and queues the outcomes.
  std::size_t verify_drain(const std::string& stage_id, const VerifierHook& hook);
  VerificationQueue& verification_queue() { return queue_; }

  std::shared_ptr<const LeaderboardSnapshot> latest(const std::string& stage_id) const;
  std::shared_ptr<const LeaderboardSnapshot> frozen(const std::string& label) const;
  std::shared_ptr<const LeaderboardSnapshot> snapshot(std::uint64_t id) const;
  std::vector<std::shared_ptr<const LeaderboardSnapshot>> snapshots(const std::string& stage_id) const;
  std::vector<std::string> frozen_labels() const;
  // Rendered CSV for the live board; identical to the published file.
  std::optional<std::string> published_csv(const std::string& stage_id) const;

  std::vector<BadgeAward> badges(const std::string& stage_id) const;
  int current_version(const std::string& stage_id) const;
  std::optional<ScoreRecord> record(SubmissionId id) const;
  std::optional<ScoreRecord> record(SubmissionId id, int version) const;
  VerificationState verification_state(SubmissionId id) const;
  std::vector<std::string> alerts() const;
  const GroundTruth& ground_truth(const std::string& file) const;

  // Runs cycles at the shortest stage cadence until stop() is called.
  void run_forever();
  void stop();

private:
  using RecordKey = std::pair<SubmissionId, int>;

  void load_state();
  void persist_state() const;
  void store_snapshot(const std::shared_ptr<const LeaderboardSnapshot>& snap);
  void write_public(const LeaderboardSnapshot& snap) const;
  void mirror_current_board(Timestamp now) const;

  ScoreRecord evaluate_submission(const Submission& s, const EvaluatorSpec& spec, Timestamp now) const;
  void evaluate_batch(const std::vector<Submission>& batch, Timestamp now);
  void rescore_instance_stage(const StageConfig& stage);
  std::size_t apply_verification_results(Timestamp now);
  std::vector<BadgeAward> award_badges_locked(const StageConfig& stage, Timestamp now,
                                              std::span<const ScoredSubmission> scored);
  std::vector<ScoredSubmission> scored_submissions(const StageConfig& stage,
                                                   const std::vector<Submission>& subs) const;
  std::uint64_t freeze_locked(const std::string& stage_id, const std::string& label, Timestamp now);

  const CompetitionConfig& config_;
  Registry& registry_;
  Ingestor& ingestor_;
  const Clock& clock_;
  AggregatorOptions options_;
  VerificationQueue queue_;

  std::mutex cycle_mutex_;
  mutable std::shared_mutex state_mutex_;
  mutable std::mutex ground_truth_mutex_;
  mutable std::map<std::string, std::shared_ptr<const GroundTruth>> ground_truth_;

  std::map<std::string, int> versions_;
  std::map<RecordKey, ScoreRecord> records_;
  std::map<SubmissionId, std::optional<InstanceLog>> parsed_logs_;
  std::map<RecordKey, VerificationState> verification_;
  std::set<RecordKey> in_flight_;
  std::size_t queue_offset_ = 0;
  SubmissionId last_evaluated_ = 0;
  ScanCursor cursor_;

  std::map<std::uint64_t, std::shared_ptr<const LeaderboardSnapshot>> snapshots_;
  std::map<std::string, std::shared_ptr<const LeaderboardSnapshot>> live_;
  std::map<std::string, std::shared_ptr<const LeaderboardSnapshot>> frozen_;
  std::map<std::string, std::string> live_csv_;
  std::uint64_t next_snapshot_id_ = 1;

  std::vector<BadgeAward> awards_;
  std::set<std::tuple<std::string, std::string, std::string>> fired_; // rule, stage, team ("" = once per stage)
  std::map<std::string, BadgePredicate> predicates_;
  std::vector<std::string> alerts_;

  std::mutex stop_mutex_;
  std::condition_variable stop_cv_;
  bool stopping_ = false;
};

} // namespace arena
