#include "arena/aggregator.hpp"

#include "arena/digest.hpp"
#include "arena/error.hpp"

#include <json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <thread>

namespace arena {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json award_to_json(const BadgeAward& a)
{
  return {{"badge_id", a.badge_id},
          {"stage_id", a.stage_id},
          {"team_id", a.team_id},
          {"display_name", a.display_name},
          {"awarded_at", format_rfc3339(a.awarded_at)},
          {"submission_id", a.submission_id}};
}

BadgeAward award_from_json(const json& j)
{
  BadgeAward a;
  a.badge_id = j.at("badge_id").get<std::string>();
  a.stage_id = j.at("stage_id").get<std::string>();
  a.team_id = j.at("team_id").get<std::string>();
  a.display_name = j.at("display_name").get<std::string>();
  a.awarded_at = parse_rfc3339(j.at("awarded_at").get<std::string>());
  a.submission_id = j.at("submission_id").get<SubmissionId>();
  return a;
}

bool same_board(const LeaderboardSnapshot* prev, int version, const std::vector<LeaderboardRow>& rows)
{
  if (!prev) {
    return version == 1 && rows.empty();
  }
  return prev->evaluator_version == version && prev->rows == rows;
}

} // namespace

Aggregator::Aggregator(const CompetitionConfig& config, Registry& registry, Ingestor& ingestor,
                       const Clock& clock, AggregatorOptions options)
  : config_(config),
    registry_(registry),
    ingestor_(ingestor),
    clock_(clock),
    options_(std::move(options)),
    queue_(options_.state_dir.empty() ? fs::path{} : options_.state_dir / "verification" / "results.jsonl")
{
  for (const auto& s : config_.stages) {
    versions_[s.stage_id] = 1;
  }
  for (const auto& [file, gt] : options_.ground_truth) {
    ground_truth_[file] = gt;
  }
  std::vector<std::pair<RecordKey, Verification>> statuses;
  if (!options_.state_dir.empty()) {
    fs::create_directories(options_.state_dir / "snapshots");
    load_state();
    const auto state_file = options_.state_dir / "state.json";
    if (fs::exists(state_file)) {
      const auto j = json::parse(read_file(state_file));
      for (const auto& v : j.value("records", json::array())) {
        statuses.push_back({{v.at(0).get<SubmissionId>(), v.at(1).get<int>()},
                            parse_verification(v.at(2).get<std::string>())});
      }
    }
  }

  // Rebuild score records from the stored payloads; evaluation is
  // deterministic, so only verification outcomes need to be persisted.
  auto existing = ingestor_.submissions_after(0);
  const auto start = clock_.now();
  existing.erase(std::find_if(existing.begin(), existing.end(),
                              [&](const Submission& s) { return start < s.received_at; }),
                 existing.end());
  if (!existing.empty()) {
    std::lock_guard cycle(cycle_mutex_);
    evaluate_batch(existing, start);
    last_evaluated_ = existing.back().submission_id;
    for (const auto& [key, status] : statuses) {
      if (auto it = records_.find(key); it != records_.end() && !it->second.rejected()) {
        it->second.verification = status;
      }
    }
    for (const auto& stage : config_.stages) {
      if (stage.kind == StageKind::instance_task) {
        rescore_instance_stage(stage);
      }
    }
  }
  for (const auto& [_, snap] : snapshots_) {
    write_public(*snap);
  }
  mirror_current_board(clock_.now());
}

void Aggregator::load_state()
{
  for (const auto& entry : fs::directory_iterator(options_.state_dir / "snapshots")) {
    if (entry.path().extension() != ".json") {
      continue;
    }
    auto snap = std::make_shared<const LeaderboardSnapshot>(snapshot_from_json(json::parse(read_file(entry.path()))));
    next_snapshot_id_ = std::max(next_snapshot_id_, snap->snapshot_id + 1);
    snapshots_[snap->snapshot_id] = snap;
  }
  for (const auto& [id, snap] : snapshots_) {
    if (snap->frozen) {
      frozen_[snap->freeze_label] = snap;
    } else {
      live_[snap->stage_id] = snap;
      live_csv_[snap->stage_id] = render_csv(*snap);
    }
  }

  const auto state_file = options_.state_dir / "state.json";
  if (!fs::exists(state_file)) {
    return;
  }
  const auto j = json::parse(read_file(state_file));
  for (const auto& [stage, v] : j.at("versions").items()) {
    if (config_.find_stage(stage)) {
      versions_[stage] = v.get<int>();
    }
  }
  for (const auto& v : j.at("verification")) {
    VerificationState st;
    st.failures = v.at("failures").get<int>();
    if (!v.at("next_attempt").is_null()) {
      st.next_attempt = parse_rfc3339(v.at("next_attempt").get<std::string>());
    }
    st.alerted = v.at("alerted").get<bool>();
    verification_[{v.at("submission_id").get<SubmissionId>(), v.at("evaluator_version").get<int>()}] = st;
  }
  queue_offset_ = j.at("queue_offset").get<std::size_t>();
  cursor_ = ScanCursor::from_json(j.at("cursor").dump());
  for (const auto& a : j.at("awards")) {
    awards_.push_back(award_from_json(a));
  }
  for (const auto& f : j.at("fired")) {
    fired_.emplace(f.at(0).get<std::string>(), f.at(1).get<std::string>(), f.at(2).get<std::string>());
  }
  alerts_ = j.at("alerts").get<std::vector<std::string>>();
}

void Aggregator::persist_state() const
{
  if (options_.state_dir.empty()) {
    return;
  }
  json records = json::array();
  json verification = json::array();
  json awards = json::array();
  json fired = json::array();
  {
    std::shared_lock lock(state_mutex_);
    for (const auto& [key, rec] : records_) {
      if (!rec.rejected() && versions_.count(ingestor_.find(key.first) ? ingestor_.find(key.first)->stage_id : "")) {
        records.push_back({key.first, key.second, to_string(rec.verification)});
      }
    }
    for (const auto& [key, st] : verification_) {
      verification.push_back({{"submission_id", key.first},
                              {"evaluator_version", key.second},
                              {"failures", st.failures},
                              {"next_attempt", st.next_attempt ? json(format_rfc3339(*st.next_attempt)) : json()},
                              {"alerted", st.alerted}});
    }
    for (const auto& a : awards_) {
      awards.push_back(award_to_json(a));
    }
    for (const auto& [rule, stage, team] : fired_) {
      fired.push_back({rule, stage, team});
    }
  }
  const json state = {{"versions", versions_},
                      {"records", std::move(records)},
                      {"verification", std::move(verification)},
                      {"queue_offset", queue_offset_},
                      {"cursor", json::parse(cursor_.to_json())},
                      {"awards", std::move(awards)},
                      {"fired", std::move(fired)},
                      {"alerts", alerts_}};
  write_file_atomic(options_.state_dir / "state.json", state.dump(1) + "\n");
}

const GroundTruth& Aggregator::ground_truth(const std::string& file) const
{
  std::lock_guard lock(ground_truth_mutex_);
  if (const auto it = ground_truth_.find(file); it != ground_truth_.end()) {
    return *it->second;
  }
  if (options_.storage_dir.empty()) {
    throw Error(ErrorKind::not_found, "ground truth '" + file + "' not loaded");
  }
  auto gt = std::make_shared<const GroundTruth>(parse_ground_truth(read_file(options_.storage_dir / file)));
  ground_truth_[file] = gt;
  return *gt;
}

ScoreRecord Aggregator::evaluate_submission(const Submission& s, const EvaluatorSpec& spec, Timestamp now) const
{
  EvaluationContext ctx;
  ctx.submission_id = s.submission_id;
  ctx.now = now;
  if (spec.metric == Metric::map_at_k) {
    try {
      ctx.ground_truth = &ground_truth(spec.ground_truth);
    } catch (const Error& e) {
      // Organizer problem, not the team's; surfaced as a rejected record.
      spdlog::error("cannot load ground truth for stage {}: {}", s.stage_id, e.what());
    }
  }
  return evaluate(*s.payload, spec, ctx);
}

void Aggregator::evaluate_batch(const std::vector<Submission>& batch, Timestamp now)
{
  if (batch.empty()) {
    return;
  }
  std::vector<ScoreRecord> results(batch.size());
  std::vector<std::optional<InstanceLog>> logs(batch.size());
  std::vector<int> versions(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    versions[i] = versions_.at(batch[i].stage_id);
  }
  auto work = [&](std::size_t first, std::size_t stride) {
    for (std::size_t i = first; i < batch.size(); i += stride) {
      const auto& s = batch[i];
      const auto& spec = config_.stage(s.stage_id).evaluator(versions[i]);
      results[i] = evaluate_submission(s, spec, now);
      if (spec.metric == Metric::instance_log && !results[i].rejected()) {
        logs[i] = parse_instance_log(*s.payload);
      }
    }
  };
  unsigned threads = options_.evaluation_threads ? options_.evaluation_threads : std::thread::hardware_concurrency();
  threads = std::clamp<unsigned>(threads, 1, static_cast<unsigned>(std::min<std::size_t>(batch.size(), 16)));
  if (threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) {
      pool.emplace_back(work, t, threads);
    }
  }
  std::unique_lock lock(state_mutex_);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const RecordKey key{batch[i].submission_id, versions[i]};
    records_[key] = std::move(results[i]);
    if (logs[i]) {
      parsed_logs_[batch[i].submission_id] = std::move(logs[i]);
    }
  }
}

void Aggregator::rescore_instance_stage(const StageConfig& stage)
{
  const int version = versions_.at(stage.stage_id);
  const auto& spec = stage.evaluator(version);
  const auto subs = ingestor_.stage_submissions(stage.stage_id);
  std::map<std::string, double> best_known;
  for (const auto& s : subs) {
    const auto rec = records_.find({s.submission_id, version});
    const auto log = parsed_logs_.find(s.submission_id);
    if (rec == records_.end() || rec->second.rejected() || log == parsed_logs_.end() || !log->second ||
        rec->second.verification == Verification::invalidated) {
      continue;
    }
    merge_best_known(best_known, *log->second, spec);
  }
  std::unique_lock lock(state_mutex_);
  for (const auto& s : subs) {
    auto rec = records_.find({s.submission_id, version});
    const auto log = parsed_logs_.find(s.submission_id);
    if (rec == records_.end() || rec->second.rejected() || log == parsed_logs_.end() || !log->second) {
      continue;
    }
    auto fresh = evaluate_instance_log(*log->second, spec, best_known);
    rec->second.primary_score = fresh.primary_score;
    rec->second.aux = std::move(fresh.aux);
  }
}

std::size_t Aggregator::apply_verification_results(Timestamp now)
{
  const auto messages = queue_.read(queue_offset_, config_.verification.batch_size);
  const auto& policy = config_.verification;
  std::unique_lock lock(state_mutex_);
  for (const auto& m : messages) {
    const RecordKey key{m.submission_id, m.evaluator_version};
    in_flight_.erase(key);
    const auto it = records_.find(key);
    if (it == records_.end() || it->second.verification != Verification::pending) {
      continue;
    }
    switch (m.outcome) {
    case VerificationOutcome::verified:
      it->second.verification = Verification::verified;
      break;
    case VerificationOutcome::invalidated:
      it->second.verification = Verification::invalidated;
      spdlog::info("submission {} invalidated by verification", m.submission_id);
      break;
    case VerificationOutcome::failed: {
      auto& st = verification_[key];
      ++st.failures;
      auto backoff = policy.initial_backoff;
      for (int i = 1; i < st.failures && backoff < policy.max_backoff; ++i) {
        backoff *= 2;
      }
      backoff = std::min(backoff, policy.max_backoff);
      st.next_attempt = now + backoff;
      if (st.failures >= policy.alert_after_failures && !st.alerted) {
        st.alerted = true;
        auto alert = "verification of submission " + std::to_string(m.submission_id) + " failed " +
                     std::to_string(st.failures) + " times: " + m.detail;
        spdlog::error("{}", alert);
        alerts_.push_back(std::move(alert));
      }
      break;
    }
    }
  }
  queue_offset_ += messages.size();
  return messages.size();
}

std::vector<ScoredSubmission> Aggregator::scored_submissions(const StageConfig& stage,
                                                             const std::vector<Submission>& subs) const
{
  const int version = versions_.at(stage.stage_id);
  std::vector<ScoredSubmission> out;
  out.reserve(subs.size());
  for (const auto& s : subs) {
    if (s.submission_id > last_evaluated_) {
      continue;
    }
    const auto it = records_.find({s.submission_id, version});
    out.push_back({s.submission_id, s.team_id, s.received_at, it == records_.end() ? nullptr : &it->second});
  }
  return out;
}

std::vector<BadgeAward> Aggregator::award_badges_locked(const StageConfig& stage, Timestamp now,
                                                        std::span<const ScoredSubmission> scored)
{
  std::vector<BadgeAward> fresh;
  auto earliest = [](const ScoredSubmission* a, const ScoredSubmission& b) {
    return !a || std::tie(b.received_at, b.submission_id) < std::tie(a->received_at, a->submission_id);
  };
  auto award = [&](const BadgeRule& rule, const std::string& team_id, SubmissionId sid, bool per_team) {
    const std::tuple key{rule.badge_id, stage.stage_id, per_team ? team_id : std::string()};
    if (fired_.count(key)) {
      return;
    }
    fired_.insert(key);
    fresh.push_back({rule.badge_id, stage.stage_id, team_id, registry_.resolve_display_name(team_id, stage.stage_id),
                     now, sid});
  };
  for (const auto& rule : config_.badge_rules) {
    if (!rule.stage_id.empty() && rule.stage_id != stage.stage_id) {
      continue;
    }
    if (fired_.count({rule.badge_id, stage.stage_id, ""})) {
      continue;
    }
    switch (rule.trigger) {
    case BadgeTrigger::first_submission: {
      const ScoredSubmission* first = nullptr;
      for (const auto& s : scored) {
        if (earliest(first, s)) {
          first = &s;
        }
      }
      if (first) {
        award(rule, first->team_id, first->submission_id, false);
      }
      break;
    }
    case BadgeTrigger::first_past_baseline: {
      if (!stage.baseline_score) {
        break;
      }
      const ScoredSubmission* first = nullptr;
      for (const auto& s : scored) {
        if (s.record && !s.record->rejected() && s.record->verification != Verification::invalidated &&
            *s.record->primary_score > *stage.baseline_score && earliest(first, s)) {
          first = &s;
        }
      }
      if (first) {
        award(rule, first->team_id, first->submission_id, false);
      }
      break;
    }
    case BadgeTrigger::custom: {
      const auto it = predicates_.find(rule.predicate);
      if (it == predicates_.end()) {
        break;
      }
      for (const auto& team : it->second(BadgeContext{stage, scored, registry_})) {
        award(rule, team, 0, true);
      }
      break;
    }
    }
  }
  if (!fresh.empty()) {
    std::unique_lock lock(state_mutex_);
    awards_.insert(awards_.end(), fresh.begin(), fresh.end());
  }
  return fresh;
}

void Aggregator::store_snapshot(const std::shared_ptr<const LeaderboardSnapshot>& snap)
{
  if (!options_.state_dir.empty()) {
    write_file_atomic(options_.state_dir / "snapshots" / (std::to_string(snap->snapshot_id) + ".json"),
                      snapshot_bytes(*snap));
  }
  write_public(*snap);
  std::unique_lock lock(state_mutex_);
  snapshots_[snap->snapshot_id] = snap;
  if (snap->frozen) {
    frozen_[snap->freeze_label] = snap;
  } else {
    live_[snap->stage_id] = snap;
    live_csv_[snap->stage_id] = render_csv(*snap);
  }
}

void Aggregator::write_public(const LeaderboardSnapshot& snap) const
{
  if (options_.public_dir.empty()) {
    return;
  }
  if (snap.frozen) {
    write_file_atomic(options_.public_dir / "frozen" / (snap.freeze_label + ".csv"), render_csv(snap));
    return;
  }
  const auto path = options_.public_dir / snap.stage_id / "leaderboard.csv";
  // Older live snapshots replayed at startup must not overwrite newer ones.
  {
    std::shared_lock lock(state_mutex_);
    const auto it = live_.find(snap.stage_id);
    if (it != live_.end() && it->second->snapshot_id > snap.snapshot_id) {
      return;
    }
  }
  write_file_atomic(path, render_csv(snap));
}

void Aggregator::mirror_current_board(Timestamp now) const
{
  if (options_.public_dir.empty()) {
    return;
  }
  std::shared_ptr<const LeaderboardSnapshot> current;
  {
    std::shared_lock lock(state_mutex_);
    if (const auto active = active_stage(config_, now)) {
      if (const auto it = live_.find(*active); it != live_.end()) {
        current = it->second;
      }
    }
    if (!current) {
      for (const auto& [_, snap] : live_) {
        if (!current || snap->snapshot_id > current->snapshot_id) {
          current = snap;
        }
      }
    }
  }
  if (!current) {
    return;
  }
  const auto path = options_.public_dir / "leaderboard.csv";
  const auto csv = render_csv(*current);
  std::error_code ec;
  if (fs::exists(path, ec)) {
    try {
      if (read_file(path) == csv) {
        return;
      }
    } catch (const Error&) {
    }
  }
  write_file_atomic(path, csv);
}

CycleReport Aggregator::run_cycle()
{
  std::lock_guard cycle(cycle_mutex_);
  const auto now = clock_.now();
  CycleReport report;

  if (options_.scan_root) {
    auto scan = ingestor_.scan_source(*options_.scan_root, cursor_);
    cursor_ = std::move(scan.cursor);
  }

  // Submissions stamped after this cycle's clock wait for a later cycle.
  auto fresh = ingestor_.submissions_after(last_evaluated_);
  fresh.erase(std::find_if(fresh.begin(), fresh.end(), [&](const Submission& s) { return now < s.received_at; }),
              fresh.end());
  evaluate_batch(fresh, now);
  for (const auto& s : fresh) {
    report.evaluated.push_back(s.submission_id);
  }
  if (!fresh.empty()) {
    last_evaluated_ = fresh.back().submission_id;
  }

  report.verifications_applied = apply_verification_results(now);

  for (const auto& stage : config_.stages) {
    for (auto& id : ingestor_.enforce_preliminary_deadline(stage, now)) {
      report.inactivated.push_back(std::move(id));
    }
  }

  for (const auto& stage : config_.stages) {
    if (stage.kind == StageKind::instance_task) {
      rescore_instance_stage(stage);
    }
    const auto subs = ingestor_.stage_submissions(stage.stage_id);
    const auto scored = scored_submissions(stage, subs);
    auto awards = award_badges_locked(stage, now, scored);
    report.awards.insert(report.awards.end(), awards.begin(), awards.end());

    LeaderboardInput input;
    input.submissions = scored;
    input.evaluator_version = versions_.at(stage.stage_id);
    input.metric = stage.evaluator(input.evaluator_version).metric;
    input.mode = config_.leaderboard_mode;
    input.display_name = [&](const std::string& team) { return registry_.resolve_display_name(team, stage.stage_id); };
    for (const auto& a : awards_) {
      if (a.stage_id == stage.stage_id) {
        input.badges[a.team_id].push_back(a.badge_id);
      }
    }
    auto rows = compute_leaderboard(input);

    std::shared_ptr<const LeaderboardSnapshot> prev;
    if (const auto it = live_.find(stage.stage_id); it != live_.end()) {
      prev = it->second;
    }
    if (same_board(prev.get(), input.evaluator_version, rows)) {
      continue;
    }
    auto snap = std::make_shared<LeaderboardSnapshot>();
    snap->snapshot_id = next_snapshot_id_++;
    snap->created_at = now;
    snap->stage_id = stage.stage_id;
    snap->evaluator_version = input.evaluator_version;
    snap->rows = std::move(rows);
    std::shared_ptr<const LeaderboardSnapshot> published = std::move(snap);
    store_snapshot(published);
    report.published.push_back(std::move(published));
  }

  mirror_current_board(now);
  persist_state();
  return report;
}

std::uint64_t Aggregator::freeze_locked(const std::string& stage_id, const std::string& label, Timestamp now)
{
  if (!is_identifier(label)) {
    throw Error(ErrorKind::validation, "freeze label must match [A-Za-z0-9][A-Za-z0-9._-]{0,63}");
  }
  std::shared_ptr<const LeaderboardSnapshot> live;
  {
    std::shared_lock lock(state_mutex_);
    if (frozen_.count(label)) {
      throw Error(ErrorKind::conflict, "freeze label '" + label + "' already used");
    }
    if (const auto it = live_.find(stage_id); it != live_.end()) {
      live = it->second;
    }
  }
  if (!live) {
    throw Error(ErrorKind::conflict, "stage " + stage_id + " has no live snapshot yet");
  }
  auto copy = std::make_shared<LeaderboardSnapshot>(*live);
  copy->frozen_from = live->snapshot_id;
  copy->snapshot_id = next_snapshot_id_++;
  copy->created_at = now;
  copy->frozen = true;
  copy->freeze_label = label;
  const auto id = copy->snapshot_id;
  store_snapshot(std::move(copy));
  return id;
}

std::uint64_t Aggregator::freeze(const std::string& stage_id, const std::string& label)
{
  config_.stage(stage_id);
  std::lock_guard cycle(cycle_mutex_);
  const auto id = freeze_locked(stage_id, label, clock_.now());
  persist_state();
  return id;
}

TwistReport Aggregator::apply_twist(const std::string& stage_id, int new_version)
{
  const auto& stage = config_.stage(stage_id);
  std::lock_guard cycle(cycle_mutex_);
  const auto now = clock_.now();
  const int current = versions_.at(stage_id);
  if (new_version != current + 1) {
    throw Error(ErrorKind::validation, "twist must move to version " + std::to_string(current + 1) +
                                         " (requested " + std::to_string(new_version) + ")");
  }
  if (new_version > static_cast<int>(stage.evaluator_versions.size())) {
    throw Error(ErrorKind::validation, "stage " + stage_id + " has no evaluator version " +
                                         std::to_string(new_version) + " configured");
  }
  TwistReport report;
  report.new_version = new_version;
  bool has_live = false;
  {
    std::shared_lock lock(state_mutex_);
    has_live = live_.count(stage_id) != 0;
    report.freeze_label = stage_id + "-v" + std::to_string(current);
    if (frozen_.count(report.freeze_label)) {
      report.freeze_label += "-pre-twist";
    }
  }
  if (has_live) {
    report.frozen_snapshot_id = freeze_locked(stage_id, report.freeze_label, now);
  } else {
    report.freeze_label.clear();
  }
  {
    std::unique_lock lock(state_mutex_);
    versions_[stage_id] = new_version;
  }
  const auto subs = ingestor_.stage_submissions(stage_id);
  evaluate_batch(subs, now);
  if (stage.kind == StageKind::instance_task) {
    rescore_instance_stage(stage);
  }
  report.rescored = subs.size();
  persist_state();
  spdlog::info("twist on stage {} to evaluator v{}: {} submissions re-scored", stage_id, new_version, subs.size());
  return report;
}

BadgeAward Aggregator::grant_badge(const std::string& stage_id, const std::string& badge_id,
                                   const std::string& display_name)
{
  config_.stage(stage_id);
  if (!is_identifier(badge_id)) {
    throw Error(ErrorKind::validation, "badge id must be an identifier");
  }
  const auto team = registry_.team_for_token(stage_id, display_name);
  if (!team) {
    throw Error(ErrorKind::not_found, "no team named '" + display_name + "' in stage " + stage_id);
  }
  std::lock_guard cycle(cycle_mutex_);
  const std::tuple key{badge_id, stage_id, *team};
  if (fired_.count(key)) {
    throw Error(ErrorKind::conflict, "badge already granted");
  }
  BadgeAward award{badge_id, stage_id, *team, registry_.resolve_display_name(*team, stage_id), clock_.now(), 0};
  {
    std::unique_lock lock(state_mutex_);
    fired_.insert(key);
    awards_.push_back(award);
  }
  persist_state();
  return award;
}

void Aggregator::register_badge_predicate(const std::string& name, BadgePredicate predicate)
{
  std::lock_guard cycle(cycle_mutex_);
  predicates_[name] = std::move(predicate);
}

std::vector<VerificationTask> Aggregator::take_due_verifications(const std::string& stage_id, Timestamp now)
{
  const auto& stage = config_.stage(stage_id);
  const auto subs = ingestor_.stage_submissions(stage_id);
  std::vector<VerificationTask> tasks;
  std::unique_lock lock(state_mutex_);
  const int version = versions_.at(stage_id);
  const auto& spec = stage.evaluator(version);
  for (const auto& s : subs) {
    const RecordKey key{s.submission_id, version};
    const auto it = records_.find(key);
    if (it == records_.end() || it->second.rejected() || it->second.verification != Verification::pending ||
        in_flight_.count(key)) {
      continue;
    }
    if (const auto st = verification_.find(key);
        st != verification_.end() && st->second.next_attempt && now < *st->second.next_attempt) {
      continue;
    }
    in_flight_.insert(key);
    tasks.push_back({s, it->second, spec});
  }
  return tasks;
}

std::size_t Aggregator::verify_drain(const std::string& stage_id, const VerifierHook& hook)
{
  const auto tasks = take_due_verifications(stage_id, clock_.now());
  for (const auto& t : tasks) {
    const auto outcome = process_verification(t.submission, t.claimed, t.spec, hook, config_.verification);
    queue_.push({t.submission.submission_id, t.spec.version, outcome,
                 outcome == VerificationOutcome::failed ? "verifier failure" : ""});
  }
  return tasks.size();
}

std::shared_ptr<const LeaderboardSnapshot> Aggregator::latest(const std::string& stage_id) const
{
  std::shared_lock lock(state_mutex_);
  const auto it = live_.find(stage_id);
  return it == live_.end() ? nullptr : it->second;
}

std::shared_ptr<const LeaderboardSnapshot> Aggregator::frozen(const std::string& label) const
{
  std::shared_lock lock(state_mutex_);
  const auto it = frozen_.find(label);
  return it == frozen_.end() ? nullptr : it->second;
}

std::shared_ptr<const LeaderboardSnapshot> Aggregator::snapshot(std::uint64_t id) const
{
  std::shared_lock lock(state_mutex_);
  const auto it = snapshots_.find(id);
  return it == snapshots_.end() ? nullptr : it->second;
}

std::vector<std::shared_ptr<const LeaderboardSnapshot>> Aggregator::snapshots(const std::string& stage_id) const
{
  std::shared_lock lock(state_mutex_);
  std::vector<std::shared_ptr<const LeaderboardSnapshot>> out;
  for (const auto& [_, s] : snapshots_) {
    if (s->stage_id == stage_id) {
      out.push_back(s);
    }
  }
  return out;
}

std::vector<std::string> Aggregator::frozen_labels() const
{
  std::shared_lock lock(state_mutex_);
  std::vector<std::string> out;
  for (const auto& [label, _] : frozen_) {
    out.push_back(label);
  }
  return out;
}

std::optional<std::string> Aggregator::published_csv(const std::string& stage_id) const
{
  std::shared_lock lock(state_mutex_);
  const auto it = live_csv_.find(stage_id);
  if (it == live_csv_.end()) {
    return std::nullopt;
  }
  return it->second;
}

std::vector<BadgeAward> Aggregator::badges(const std::string& stage_id) const
{
  std::shared_lock lock(state_mutex_);
  std::vector<BadgeAward> out;
  for (const auto& a : awards_) {
    if (a.stage_id == stage_id) {
      out.push_back(a);
    }
  }
  return out;
}

int Aggregator::current_version(const std::string& stage_id) const
{
  config_.stage(stage_id);
  std::shared_lock lock(state_mutex_);
  return versions_.at(stage_id);
}

std::optional<ScoreRecord> Aggregator::record(SubmissionId id, int version) const
{
  std::shared_lock lock(state_mutex_);
  const auto it = records_.find({id, version});
  if (it == records_.end()) {
    return std::nullopt;
  }
  return it->second;
}

std::optional<ScoreRecord> Aggregator::record(SubmissionId id) const
{
  const auto sub = ingestor_.find(id);
  if (!sub) {
    return std::nullopt;
  }
  return record(id, current_version(sub->stage_id));
}

VerificationState Aggregator::verification_state(SubmissionId id) const
{
  const auto sub = ingestor_.find(id);
  if (!sub) {
    return {};
  }
  const int version = current_version(sub->stage_id);
  std::shared_lock lock(state_mutex_);
  const auto it = verification_.find({id, version});
  return it == verification_.end() ? VerificationState{} : it->second;
}

std::vector<std::string> Aggregator::alerts() const
{
  std::shared_lock lock(state_mutex_);
  return alerts_;
}

void Aggregator::run_forever()
{
  auto cadence = config_.stages.front().aggregation_cadence;
  for (const auto& s : config_.stages) {
    cadence = std::min(cadence, s.aggregation_cadence);
  }
  std::unique_lock lock(stop_mutex_);
  while (!stopping_) {
    lock.unlock();
    try {
      run_cycle();
    } catch (const std::exception& e) {
      spdlog::error("aggregator cycle failed: {}", e.what());
    }
    lock.lock();
    stop_cv_.wait_for(lock, cadence, [&] { return stopping_; });
  }
}

void Aggregator::stop()
{
  {
    std::lock_guard lock(stop_mutex_);
    stopping_ = true;
  }
  stop_cv_.notify_all();
}

} // namespace arena
