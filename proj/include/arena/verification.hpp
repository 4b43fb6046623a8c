#pragma once

#include "arena/config.hpp"
#include "arena/evaluation.hpp"
#include "arena/ingestion.hpp"

#include <chrono>
#include <deque>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace arena {

// What a verifier hook recomputed. For map_at_k a score; for instance_log the
// re-run's log.
struct VerifierResult {
  bool ok = false;
  std::string error;
  std::optional<double> score;
  std::optional<InstanceLog> log;

  static VerifierResult failure(std::string why) { return {false, std::move(why), {}, {}}; }
};

using VerifierHook = std::function<VerifierResult(const Submission&, const EvaluatorSpec&)>;

enum class VerificationOutcome { verified, invalidated, failed };

std::string_view to_string(VerificationOutcome o);

// Runs the hook and compares its recomputation against the claim: |claimed -
// recomputed| <= map_tolerance for rankings; identical instance sets and
// statuses with objectives within objective_tolerance for instance logs. Hook
// exceptions and failures come back as `failed`.
VerificationOutcome process_verification(const Submission& submission, const ScoreRecord& claimed,
                                         const EvaluatorSpec& spec, const VerifierHook& hook,
                                         const VerificationPolicy& policy);

// Recomputes MAP from the payload against the holdout. Instance logs are
// echoed back, which only confirms they parse; real re-runs need a command.
class RecomputeVerifier {
public:
  using GroundTruthLookup = std::function<const GroundTruth&(const std::string& file)>;

  explicit RecomputeVerifier(GroundTruthLookup lookup) : lookup_(std::move(lookup)) {}
  VerifierResult operator()(const Submission& submission, const EvaluatorSpec& spec) const;

private:
  GroundTruthLookup lookup_;
};

// Organizer-supplied external command: `<program> <args...> <payload path>
// <ground truth path>`. Standard output carries the recomputed score
// (map_at_k) or an instance-log CSV (instance_log). Non-zero exit, a signal or
// exceeding the timeout is a failure.
class CommandVerifier {
public:
  CommandVerifier(std::vector<std::string> argv, std::filesystem::path storage_dir,
                  std::filesystem::path scratch_dir, std::chrono::milliseconds timeout);

  VerifierResult operator()(const Submission& submission, const EvaluatorSpec& spec) const;

private:
  std::vector<std::string> argv_;
  std::filesystem::path storage_dir_;
  std::filesystem::path scratch_dir_;
  std::chrono::milliseconds timeout_;
};

struct CommandOutput {
  int exit_code = -1;
  bool timed_out = false;
  std::string out;
};

// fork/exec with a wall-clock limit; the child is killed on timeout.
CommandOutput run_command(const std::vector<std::string>& argv, std::chrono::milliseconds timeout);

struct VerificationMessage {
  SubmissionId submission_id = 0;
  int evaluator_version = 1;
  VerificationOutcome outcome = VerificationOutcome::failed;
  std::string detail;
};

// Durable hand-off from verification workers to the aggregator cycle. With a
// file path, messages are appended to it and survive restarts; the consumer
// tracks its own offset.
class VerificationQueue {
public:
  explicit VerificationQueue(std::filesystem::path file = {});

  void push(const VerificationMessage& message);
  // Up to max messages starting at offset.
  std::vector<VerificationMessage> read(std::size_t offset, std::size_t max) const;
  std::size_t size() const;

private:
  std::filesystem::path file_;
  mutable std::mutex mutex_;
  std::vector<VerificationMessage> messages_;
};

} // namespace arena
