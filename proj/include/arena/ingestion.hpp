#pragma once

#include "arena/config.hpp"
#include "arena/evaluation.hpp"
#include "arena/registry.hpp"
#include "arena/time.hpp"

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

namespace arena {

enum class SubmissionSource { api, scan };

std::string_view to_string(SubmissionSource s);

struct Submission {
  SubmissionId submission_id = 0;
  std::string team_id;
  std::string stage_id;
  Timestamp received_at;
  std::string payload_digest;
  std::shared_ptr<const std::string> payload;
  SubmissionSource source = SubmissionSource::api;
  // Member tag for teams working in parallel; free text, never published.
  std::string channel;
  // Same payload already submitted by this team in this stage.
  bool duplicate = false;
  // Scanned artifacts: path relative to the scan root.
  std::string origin;
};

struct QuotaStatus {
  int limit = 0;
  int used = 0;
  int remaining = 0;
  LocalDate day;
  Timestamp resets_at;
  std::string resets_at_local;
};

// Scanner state: every (relative path, digest) pair already turned into a
// submission or rejected.
struct ScanCursor {
  std::set<std::pair<std::string, std::string>> seen;

  bool operator==(const ScanCursor&) const = default;
  std::string to_json() const;
  static ScanCursor from_json(std::string_view text);
};

struct ScanResult {
  std::vector<Submission> accepted;
  // (relative path, reason) for artifacts consumed without a submission.
  std::vector<std::pair<std::string, std::string>> rejected;
  ScanCursor cursor;
};

// Submission storage plus the rules applied at the door: stage window, team
// status, payload cap, daily quota in the official time zone. Persistence and
// the quota increment commit under one lock. With a data directory, payloads
// land in <dir>/<stage>/<team>/<id>/payload with a meta.json sidecar written
// last.
class Ingestor {
public:
  Ingestor(const CompetitionConfig& config, Registry& registry, const Clock& clock,
           std::filesystem::path dir = {});

  // received_at comes from the injected clock, never from the caller.
  Submission accept_submission(const std::string& team_id, const std::string& stage_id,
                               std::string payload, SubmissionSource source = SubmissionSource::api,
                               std::string channel = {}, std::string origin = {});

  QuotaStatus quota(const std::string& team_id, const std::string& stage_id) const;

  // Walks <root>/<stage_id>/<team_token>/... for files with the stage's
  // artifact extension that the cursor has not seen, oldest first. Never
  // throws for an unreadable tree: the problem is logged and the cursor is
  // returned unchanged.
  ScanResult scan_source(const std::filesystem::path& root, ScanCursor cursor);

  // Marks every active team without a submission before the deadline as
  // inactive_missed_preliminary. Runs once per stage.
  std::vector<std::string> enforce_preliminary_deadline(const StageConfig& stage, Timestamp now);

  std::vector<Submission> submissions_after(SubmissionId after) const;
  std::vector<Submission> stage_submissions(const std::string& stage_id) const;
  std::optional<Submission> find(SubmissionId id) const;
  std::size_t size() const;

private:
  using WindowKey = std::tuple<std::string, std::string, LocalDate>;

  void load();
  void persist(const Submission& s) const;
  void index(Submission s);
  QuotaStatus quota_locked(const std::string& team_id, const StageConfig& stage, Timestamp now) const;

  const CompetitionConfig& config_;
  Registry& registry_;
  const Clock& clock_;
  OfficialZone zone_;
  std::filesystem::path dir_;

  mutable std::mutex mutex_;
  std::vector<Submission> submissions_; // ordered by id
  std::map<WindowKey, int> windows_;
  std::set<std::tuple<std::string, std::string, std::string>> digests_; // team, stage, digest
  std::set<std::pair<std::string, std::string>> origins_;               // path, digest
  std::set<std::string> enforced_stages_;
  SubmissionId next_id_ = 1;
  Timestamp last_received_{};
};

} // namespace arena
