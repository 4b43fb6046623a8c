#include "arena/ingestion.hpp"

#include "arena/digest.hpp"
#include "arena/error.hpp"

#include <json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>

namespace arena {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(SubmissionSource s)
{
  return s == SubmissionSource::api ? "api" : "scan";
}

std::string ScanCursor::to_json() const
{
  json arr = json::array();
  for (const auto& [path, digest] : seen) {
    arr.push_back({path, digest});
  }
  return json{{"seen", std::move(arr)}}.dump();
}

ScanCursor ScanCursor::from_json(std::string_view text)
{
  ScanCursor c;
  const auto j = json::parse(text);
  for (const auto& e : j.at("seen")) {
    c.seen.emplace(e.at(0).get<std::string>(), e.at(1).get<std::string>());
  }
  return c;
}

namespace {

json meta_to_json(const Submission& s)
{
  return {{"submission_id", s.submission_id},
          {"team_id", s.team_id},
          {"stage_id", s.stage_id},
          {"received_at", format_rfc3339(s.received_at)},
          {"payload_digest", s.payload_digest},
          {"source", to_string(s.source)},
          {"channel", s.channel},
          {"duplicate", s.duplicate},
          {"origin", s.origin}};
}

} // namespace

Ingestor::Ingestor(const CompetitionConfig& config, Registry& registry, const Clock& clock, fs::path dir)
  : config_(config),
    registry_(registry),
    clock_(clock),
    zone_(OfficialZone::load(config.official_time_zone)),
    dir_(std::move(dir))
{
  if (!dir_.empty()) {
    load();
  }
}

void Ingestor::load()
{
  fs::create_directories(dir_);
  std::vector<Submission> found;
  for (const auto& entry : fs::recursive_directory_iterator(dir_)) {
    if (!entry.is_regular_file() || entry.path().filename() != "meta.json") {
      continue;
    }
    const auto j = json::parse(read_file(entry.path()));
    Submission s;
    s.submission_id = j.at("submission_id").get<SubmissionId>();
    s.team_id = j.at("team_id").get<std::string>();
    s.stage_id = j.at("stage_id").get<std::string>();
    s.received_at = parse_rfc3339(j.at("received_at").get<std::string>());
    s.payload_digest = j.at("payload_digest").get<std::string>();
    s.source = j.at("source").get<std::string>() == "scan" ? SubmissionSource::scan : SubmissionSource::api;
    s.channel = j.value("channel", "");
    s.duplicate = j.value("duplicate", false);
    s.origin = j.value("origin", "");
    s.payload = std::make_shared<const std::string>(read_file(entry.path().parent_path() / "payload"));
    if (sha256_hex(*s.payload) != s.payload_digest) {
      throw Error(ErrorKind::io, "payload digest mismatch for submission " + std::to_string(s.submission_id));
    }
    found.push_back(std::move(s));
  }
  std::sort(found.begin(), found.end(),
            [](const Submission& a, const Submission& b) { return a.submission_id < b.submission_id; });
  for (auto& s : found) {
    index(std::move(s));
  }
  const auto enforced = dir_ / "preliminary.json";
  if (fs::exists(enforced)) {
    enforced_stages_ = json::parse(read_file(enforced)).get<std::set<std::string>>();
  }
}

void Ingestor::index(Submission s)
{
  windows_[{s.team_id, s.stage_id, zone_.local_day(s.received_at)}] += 1;
  digests_.emplace(s.team_id, s.stage_id, s.payload_digest);
  if (!s.origin.empty()) {
    origins_.emplace(s.origin, s.payload_digest);
  }
  next_id_ = std::max(next_id_, s.submission_id + 1);
  last_received_ = std::max(last_received_, s.received_at);
  submissions_.push_back(std::move(s));
}

void Ingestor::persist(const Submission& s) const
{
  if (dir_.empty()) {
    return;
  }
  const auto folder = dir_ / s.stage_id / s.team_id / std::to_string(s.submission_id);
  write_file_atomic(folder / "payload", *s.payload);
  write_file_atomic(folder / "meta.json", meta_to_json(s).dump(2) + "\n");
}

QuotaStatus Ingestor::quota_locked(const std::string& team_id, const StageConfig& stage, Timestamp now) const
{
  QuotaStatus q;
  q.limit = stage.daily_submission_limit;
  q.day = zone_.local_day(now);
  const auto it = windows_.find({team_id, stage.stage_id, q.day});
  q.used = it == windows_.end() ? 0 : it->second;
  q.remaining = std::max(0, q.limit - q.used);
  q.resets_at = zone_.next_day_start(now);
  q.resets_at_local = zone_.format_local(q.resets_at);
  return q;
}

QuotaStatus Ingestor::quota(const std::string& team_id, const std::string& stage_id) const
{
  const auto& stage = config_.stage(stage_id);
  std::lock_guard lock(mutex_);
  return quota_locked(team_id, stage, std::max(clock_.now(), last_received_));
}

Submission Ingestor::accept_submission(const std::string& team_id, const std::string& stage_id,
                                       std::string payload, SubmissionSource source, std::string channel,
                                       std::string origin)
{
  const auto& stage = config_.stage(stage_id);
  const auto team = registry_.find(team_id);
  if (!team) {
    throw Error(ErrorKind::not_found, "unknown team");
  }
  if (team->status != TeamStatus::active) {
    throw Error(ErrorKind::team_inactive, "team is " + std::string(to_string(team->status)));
  }
  if (!team->tokens.count(stage_id)) {
    throw Error(ErrorKind::forbidden, "team does not participate in stage " + stage_id);
  }
  if (payload.size() > config_.payload_size_cap) {
    throw Error(ErrorKind::payload_too_large,
                "payload exceeds " + std::to_string(config_.payload_size_cap) + " bytes");
  }
  const auto digest = sha256_hex(payload);

  std::lock_guard lock(mutex_);
  // The clock is read under the lock so ids and timestamps advance together.
  const auto now = std::max(clock_.now(), last_received_);
  if (!stage.contains(now)) {
    throw Error(ErrorKind::stage_closed, "stage " + stage_id + " is not open");
  }
  const auto q = quota_locked(team_id, stage, now);
  if (q.remaining <= 0) {
    throw Error(ErrorKind::quota_exceeded,
                "daily submission limit of " + std::to_string(q.limit) + " reached; quota resets at " +
                  q.resets_at_local);
  }

  Submission s;
  s.submission_id = next_id_;
  s.team_id = team_id;
  s.stage_id = stage_id;
  s.received_at = now;
  s.payload_digest = digest;
  s.payload = std::make_shared<const std::string>(std::move(payload));
  s.source = source;
  s.channel = std::move(channel);
  s.duplicate = digests_.count({team_id, stage_id, digest}) != 0;
  s.origin = std::move(origin);
  persist(s);
  index(s);
  return s;
}

ScanResult Ingestor::scan_source(const fs::path& root, ScanCursor cursor)
{
  ScanResult result;
  struct Artifact {
    fs::file_time_type mtime;
    std::string rel;
    fs::path path;
    const StageConfig* stage;
    std::string token;
  };
  std::vector<Artifact> artifacts;
  try {
    if (!fs::is_directory(root)) {
      throw fs::filesystem_error("scan root is not a directory", root, std::make_error_code(std::errc::not_a_directory));
    }
    for (const auto& stage_dir : fs::directory_iterator(root)) {
      if (!stage_dir.is_directory()) {
        continue;
      }
      const auto* stage = config_.find_stage(stage_dir.path().filename().string());
      if (!stage) {
        continue;
      }
      for (const auto& team_dir : fs::directory_iterator(stage_dir.path())) {
        if (!team_dir.is_directory()) {
          continue;
        }
        for (const auto& f : fs::recursive_directory_iterator(team_dir.path())) {
          if (!f.is_regular_file() || f.path().extension() != stage->artifact_extension) {
            continue;
          }
          artifacts.push_back({f.last_write_time(), fs::relative(f.path(), root).generic_string(), f.path(),
                               stage, team_dir.path().filename().string()});
        }
      }
    }
  } catch (const fs::filesystem_error& e) {
    spdlog::warn("scan of {} failed: {}", root.string(), e.what());
    result.cursor = std::move(cursor);
    return result;
  }
  std::sort(artifacts.begin(), artifacts.end(),
            [](const Artifact& a, const Artifact& b) { return std::tie(a.mtime, a.rel) < std::tie(b.mtime, b.rel); });

  for (const auto& a : artifacts) {
    std::string payload;
    try {
      payload = read_file(a.path);
    } catch (const Error& e) {
      spdlog::warn("skipping unreadable artifact {}: {}", a.rel, e.what());
      continue;
    }
    const auto digest = sha256_hex(payload);
    const std::pair key{a.rel, digest};
    if (cursor.seen.count(key)) {
      continue;
    }
    bool known = false;
    {
      std::lock_guard lock(mutex_);
      known = origins_.count(key) != 0;
    }
    cursor.seen.insert(key);
    if (known) {
      continue;
    }
    const auto team = registry_.team_for_token(a.stage->stage_id, a.token);
    if (!team) {
      result.rejected.emplace_back(a.rel, "unknown team token");
      continue;
    }
    try {
      result.accepted.push_back(
        accept_submission(*team, a.stage->stage_id, std::move(payload), SubmissionSource::scan, {}, a.rel));
    } catch (const Error& e) {
      result.rejected.emplace_back(a.rel, e.what());
    }
  }
  for (const auto& [rel, reason] : result.rejected) {
    spdlog::info("scanned artifact {} not ingested: {}", rel, reason);
  }
  result.cursor = std::move(cursor);
  return result;
}

std::vector<std::string> Ingestor::enforce_preliminary_deadline(const StageConfig& stage, Timestamp now)
{
  std::vector<std::string> marked;
  if (!stage.preliminary_deadline || now < *stage.preliminary_deadline) {
    return marked;
  }
  std::set<std::string> submitted;
  {
    std::lock_guard lock(mutex_);
    if (enforced_stages_.count(stage.stage_id)) {
      return marked;
    }
    for (const auto& s : submissions_) {
      if (s.stage_id == stage.stage_id && s.received_at < *stage.preliminary_deadline) {
        submitted.insert(s.team_id);
      }
    }
  }
  for (const auto& team_id : registry_.teams_in_stage(stage.stage_id)) {
    const auto team = registry_.find(team_id);
    if (team && team->status == TeamStatus::active && !submitted.count(team_id)) {
      registry_.mark_inactive(team_id, TeamStatus::inactive_missed_preliminary);
      marked.push_back(team_id);
    }
  }
  std::lock_guard lock(mutex_);
  enforced_stages_.insert(stage.stage_id);
  if (!dir_.empty()) {
    write_file_atomic(dir_ / "preliminary.json", json(enforced_stages_).dump() + "\n");
  }
  return marked;
}

std::vector<Submission> Ingestor::submissions_after(SubmissionId after) const
{
  std::lock_guard lock(mutex_);
  const auto it = std::upper_bound(submissions_.begin(), submissions_.end(), after,
                                   [](SubmissionId id, const Submission& s) { return id < s.submission_id; });
  return {it, submissions_.end()};
}

std::vector<Submission> Ingestor::stage_submissions(const std::string& stage_id) const
{
  std::lock_guard lock(mutex_);
  std::vector<Submission> out;
  for (const auto& s : submissions_) {
    if (s.stage_id == stage_id) {
      out.push_back(s);
    }
  }
  return out;
}

std::optional<Submission> Ingestor::find(SubmissionId id) const
{
  std::lock_guard lock(mutex_);
  const auto it = std::lower_bound(submissions_.begin(), submissions_.end(), id,
                                   [](const Submission& s, SubmissionId v) { return s.submission_id < v; });
  if (it == submissions_.end() || it->submission_id != id) {
    return std::nullopt;
  }
  return *it;
}

std::size_t Ingestor::size() const
{
  std::lock_guard lock(mutex_);
  return submissions_.size();
}

} // namespace arena
