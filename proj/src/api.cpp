#include "arena/api.hpp"

#include "arena/digest.hpp"
#include "arena/error.hpp"

#include <spdlog/spdlog.h>

#include <charconv>

namespace arena {

namespace fs = std::filesystem;
using nlohmann::json;

int http_status(ErrorKind kind)
{
  switch (kind) {
  case ErrorKind::unauthenticated: return 401;
  case ErrorKind::forbidden:
  case ErrorKind::team_inactive: return 403;
  case ErrorKind::not_found: return 404;
  case ErrorKind::conflict:
  case ErrorKind::stage_closed: return 409;
  case ErrorKind::payload_too_large: return 413;
  case ErrorKind::parse:
  case ErrorKind::unprocessable: return 422;
  case ErrorKind::quota_exceeded: return 429;
  case ErrorKind::validation: return 400;
  case ErrorKind::io: return 500;
  }
  return 500;
}

namespace {

ApiResponse json_response(int status, const json& body)
{
  ApiResponse r;
  r.status = status;
  r.body = body.dump() + "\n";
  return r;
}

ApiResponse error_response(const Error& e)
{
  return json_response(http_status(e.kind()), {{"error", std::string(to_string(e.kind()))}, {"message", e.what()}});
}

std::vector<std::string> split_path(std::string_view path)
{
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < path.size()) {
    while (i < path.size() && path[i] == '/') {
      ++i;
    }
    const auto j = path.find('/', i);
    const auto end = j == std::string_view::npos ? path.size() : j;
    if (end > i) {
      out.emplace_back(path.substr(i, end - i));
    }
    i = end;
  }
  return out;
}

json parse_body(const std::string& body)
{
  if (body.empty()) {
    return json::object();
  }
  try {
    auto j = json::parse(body);
    if (!j.is_object()) {
      throw Error(ErrorKind::validation, "request body must be a JSON object");
    }
    return j;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::validation, std::string("malformed JSON body: ") + e.what());
  }
}

std::string string_param(const json& params, const char* name)
{
  const auto it = params.find(name);
  if (it == params.end() || !it->is_string()) {
    throw Error(ErrorKind::validation, std::string("parameter '") + name + "' (string) is required");
  }
  return it->get<std::string>();
}

int int_param(const json& params, const char* name)
{
  const auto it = params.find(name);
  if (it == params.end() || !it->is_number_integer()) {
    throw Error(ErrorKind::validation, std::string("parameter '") + name + "' (integer) is required");
  }
  return it->get<int>();
}

RegistrationRequest registration_from_json(const json& j)
{
  RegistrationRequest r;
  try {
    for (const auto& c : j.at("contacts")) {
      r.contacts.push_back({c.at("name").get<std::string>(), c.at("email").get<std::string>()});
    }
    r.tokens = j.at("tokens").get<std::map<std::string, std::string>>();
    r.accept_rules = j.value("accept_rules", false);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::validation,
                std::string("registration needs contacts[{name,email}], tokens{stage: token}, accept_rules: ") +
                  e.what());
  }
  return r;
}

json quota_json(const QuotaStatus& q)
{
  return {{"limit", q.limit},
          {"used", q.used},
          {"remaining", q.remaining},
          {"day", q.day.str()},
          {"resets_at", format_rfc3339(q.resets_at)},
          {"resets_at_local", q.resets_at_local}};
}

std::string mime_type(const fs::path& p)
{
  const auto ext = p.extension().string();
  if (ext == ".html") return "text/html; charset=utf-8";
  if (ext == ".js") return "text/javascript";
  if (ext == ".css") return "text/css";
  if (ext == ".json") return "application/json";
  if (ext == ".svg") return "image/svg+xml";
  if (ext == ".png") return "image/png";
  return "application/octet-stream";
}

} // namespace

Api::Api(const CompetitionConfig& config, Registry& registry, Ingestor& ingestor, Aggregator& aggregator,
         AuditLog& audit, const Clock& clock, ApiOptions options)
  : config_(config),
    registry_(registry),
    ingestor_(ingestor),
    aggregator_(aggregator),
    audit_(audit),
    clock_(clock),
    options_(std::move(options))
{
  if (!options_.verifier) {
    options_.verifier = RecomputeVerifier([this](const std::string& f) -> const GroundTruth& {
      return aggregator_.ground_truth(f);
    });
  }
}

Api::Caller Api::identify(const ApiRequest& request) const
{
  const auto it = request.headers.find("authorization");
  if (it == request.headers.end()) {
    return {};
  }
  constexpr std::string_view scheme = "Bearer ";
  std::string_view value = it->second;
  if (value.size() <= scheme.size() || ascii_lower(value.substr(0, scheme.size())) != "bearer ") {
    throw Error(ErrorKind::unauthenticated, "expected a bearer credential");
  }
  const auto credential = value.substr(scheme.size());
  if (!options_.organizer_token.empty() && constant_time_equal(credential, options_.organizer_token)) {
    return {Principal::organizer, {}};
  }
  return {Principal::team, registry_.authenticate(credential)};
}

std::string Api::require_team(const Caller& caller) const
{
  if (caller.principal != Principal::team) {
    throw Error(ErrorKind::unauthenticated, "team credential required");
  }
  return caller.team_id;
}

ApiResponse Api::handle(const ApiRequest& request)
{
  try {
    return route(request);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::unauthenticated || e.kind() == ErrorKind::forbidden) {
      spdlog::info("{} {} {} from {}", request.method, request.path, http_status(e.kind()), request.client_addr);
    }
    return error_response(e);
  } catch (const std::exception& e) {
    spdlog::error("{} {} failed: {}", request.method, request.path, e.what());
    return json_response(500, {{"error", "internal"}, {"message", "internal error"}});
  }
}

ApiResponse Api::route(const ApiRequest& request)
{
  const auto parts = split_path(request.path);
  const bool get = request.method == "GET" || request.method == "HEAD";
  const bool post = request.method == "POST";
  if (!parts.empty() && parts[0] == "ui") {
    if (!get) {
      throw Error(ErrorKind::not_found, "no such route");
    }
    std::string rest;
    for (std::size_t i = 1; i < parts.size(); ++i) {
      rest += (i > 1 ? "/" : "") + parts[i];
    }
    return get_ui(rest);
  }
  if (parts.size() < 2 || parts[0] != "api") {
    throw Error(ErrorKind::not_found, "no such route");
  }
  const auto& what = parts[1];
  if (post && what == "register" && parts.size() == 2) {
    return post_register(request);
  }
  if (get && what == "stages" && parts.size() == 2) {
    return get_stages();
  }
  if (what == "submissions" && post && parts.size() == 3) {
    return post_submission(request, parts[2]);
  }
  if (what == "submissions" && get && parts.size() == 4) {
    return get_submission(request, parts[2], parts[3]);
  }
  if (get && parts.size() == 3) {
    if (what == "leaderboard") {
      return get_leaderboard(request, parts[2]);
    }
    if (what == "data") {
      return get_data(request, parts[2]);
    }
    if (what == "badges") {
      return get_badges(parts[2]);
    }
    if (what == "quota") {
      return get_quota(request, parts[2]);
    }
  }
  if (post && what == "admin" && parts.size() == 3) {
    return post_admin(request, parts[2]);
  }
  throw Error(ErrorKind::not_found, "no such route");
}

ApiResponse Api::post_register(const ApiRequest& request)
{
  const auto req = registration_from_json(parse_body(request.body));
  const auto reg = registry_.register_team(req, clock_.now());
  // The team id is internal; the credential is all a team ever needs.
  return json_response(201, {{"credential", reg.credential}, {"stages", req.tokens}});
}

ApiResponse Api::post_submission(const ApiRequest& request, const std::string& stage_id)
{
  const auto team = require_team(identify(request));
  const auto& stage = config_.stage(stage_id);
  if (request.body.size() > config_.payload_size_cap) {
    throw Error(ErrorKind::payload_too_large, "payload exceeds " + std::to_string(config_.payload_size_cap) + " bytes");
  }
  validate_payload(request.body, stage.evaluator(aggregator_.current_version(stage_id)));
  std::string channel;
  if (const auto it = request.headers.find("x-arena-channel"); it != request.headers.end()) {
    channel = it->second;
  }
  Submission s;
  try {
    s = ingestor_.accept_submission(team, stage_id, request.body, SubmissionSource::api, channel);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::quota_exceeded) {
      throw;
    }
    const auto q = ingestor_.quota(team, stage_id);
    auto body = quota_json(q);
    body["error"] = "quota_exceeded";
    body["message"] = e.what();
    auto r = json_response(429, body);
    const auto wait = std::chrono::duration_cast<std::chrono::seconds>(q.resets_at - clock_.now()).count();
    r.headers["Retry-After"] = std::to_string(std::max<long long>(wait, 0));
    return r;
  }
  const auto q = ingestor_.quota(team, stage_id);
  return json_response(200, {{"submission_id", s.submission_id},
                             {"stage_id", stage_id},
                             {"received_at", format_rfc3339(s.received_at)},
                             {"duplicate", s.duplicate},
                             {"quota_limit", q.limit},
                             {"quota_remaining", q.remaining},
                             {"status_url", "/api/submissions/" + stage_id + "/" + std::to_string(s.submission_id)}});
}

ApiResponse Api::get_submission(const ApiRequest& request, const std::string& stage_id, const std::string& id_text)
{
  const auto team = require_team(identify(request));
  SubmissionId id = 0;
  const auto [p, ec] = std::from_chars(id_text.data(), id_text.data() + id_text.size(), id);
  const auto sub = ec == std::errc{} && p == id_text.data() + id_text.size() ? ingestor_.find(id) : std::nullopt;
  // Other teams' submissions look exactly like missing ones.
  if (!sub || sub->team_id != team || sub->stage_id != stage_id) {
    throw Error(ErrorKind::not_found, "no such submission");
  }
  json body = {{"submission_id", sub->submission_id},
               {"stage_id", sub->stage_id},
               {"received_at", format_rfc3339(sub->received_at)},
               {"duplicate", sub->duplicate}};
  const auto rec = aggregator_.record(id);
  if (!rec) {
    body["status"] = "queued";
  } else if (rec->rejected()) {
    body["status"] = "rejected";
    body["format_error"] = rec->format_error;
  } else {
    body["status"] = "evaluated";
    body["verification"] = std::string(to_string(rec->verification));
  }
  return json_response(200, body);
}

ApiResponse Api::get_leaderboard(const ApiRequest& request, const std::string& stage_id)
{
  config_.stage(stage_id);
  std::string format = "json";
  if (const auto it = request.query.find("format"); it != request.query.end()) {
    format = it->second;
  }
  if (format != "json" && format != "csv") {
    throw Error(ErrorKind::validation, "format must be csv or json");
  }
  std::shared_ptr<const LeaderboardSnapshot> snap;
  if (const auto it = request.query.find("frozen"); it != request.query.end()) {
    if (!config_.frozen_boards_public && identify(request).principal != Principal::organizer) {
      throw Error(ErrorKind::forbidden, "frozen leaderboards are organizer-only");
    }
    snap = aggregator_.frozen(it->second);
    if (!snap || snap->stage_id != stage_id) {
      throw Error(ErrorKind::not_found, "no frozen leaderboard '" + it->second + "' for stage " + stage_id);
    }
  } else {
    snap = aggregator_.latest(stage_id);
  }
  ApiResponse r;
  if (format == "csv") {
    r.content_type = "text/csv; charset=utf-8";
    if (!snap) {
      LeaderboardSnapshot empty;
      empty.stage_id = stage_id;
      r.body = render_csv(empty);
    } else {
      r.body = render_csv(*snap);
    }
    return r;
  }
  if (!snap) {
    return json_response(200, {{"snapshot_id", nullptr},
                               {"created_at", nullptr},
                               {"stage_id", stage_id},
                               {"evaluator_version", aggregator_.current_version(stage_id)},
                               {"frozen", false},
                               {"freeze_label", nullptr},
                               {"rows", json::array()}});
  }
  return json_response(200, render_json(*snap));
}

ApiResponse Api::get_data(const ApiRequest& request, const std::string& file)
{
  const auto* entry = config_.find_manifest(file);
  if (!entry) {
    throw Error(ErrorKind::not_found, "no such data file");
  }
  if (entry->visibility == Visibility::registered) {
    const auto caller = identify(request);
    if (caller.principal == Principal::anonymous) {
      throw Error(ErrorKind::unauthenticated, "data file requires a team credential");
    }
  }
  ApiResponse r;
  r.content_type = "application/octet-stream";
  r.headers["X-Content-SHA256"] = entry->sha256;
  r.headers["Content-Disposition"] = "attachment; filename=\"" + entry->file + "\"";
  r.body = read_file(options_.storage_dir / entry->file);
  return r;
}

ApiResponse Api::get_badges(const std::string& stage_id)
{
  config_.stage(stage_id);
  json out = json::array();
  for (const auto& a : aggregator_.badges(stage_id)) {
    out.push_back({{"badge_id", a.badge_id}, {"display_name", a.display_name}, {"awarded_at", format_rfc3339(a.awarded_at)}});
  }
  return json_response(200, {{"stage_id", stage_id}, {"badges", out}});
}

ApiResponse Api::get_quota(const ApiRequest& request, const std::string& stage_id)
{
  const auto team = require_team(identify(request));
  config_.stage(stage_id);
  auto body = quota_json(ingestor_.quota(team, stage_id));
  body["stage_id"] = stage_id;
  return json_response(200, body);
}

ApiResponse Api::get_stages()
{
  const auto now = clock_.now();
  json stages = json::array();
  for (const auto& s : config_.stages) {
    stages.push_back({{"stage_id", s.stage_id},
                      {"kind", std::string(to_string(s.kind))},
                      {"open", format_rfc3339(s.open)},
                      {"close", format_rfc3339(s.close)},
                      {"daily_submission_limit", s.daily_submission_limit},
                      {"evaluator_version", aggregator_.current_version(s.stage_id)},
                      {"evaluator_versions", static_cast<int>(s.evaluator_versions.size())},
                      {"frozen_labels", json::array()}});
  }
  if (config_.frozen_boards_public) {
    for (const auto& label : aggregator_.frozen_labels()) {
      const auto snap = aggregator_.frozen(label);
      for (auto& s : stages) {
        if (snap && s["stage_id"] == snap->stage_id) {
          s["frozen_labels"].push_back(label);
        }
      }
    }
  }
  const auto active = active_stage(config_, now);
  return json_response(200, {{"competition_id", config_.competition_id},
                             {"title", config_.title},
                             {"official_time_zone", config_.official_time_zone},
                             {"discussion_url", config_.discussion_url ? json(*config_.discussion_url) : json()},
                             {"active_stage", active ? json(*active) : json()},
                             {"stages", stages}});
}

ApiResponse Api::post_admin(const ApiRequest& request, const std::string& action)
{
  const auto caller = identify(request);
  if (caller.principal == Principal::anonymous) {
    throw Error(ErrorKind::unauthenticated, "organizer credential required");
  }
  if (caller.principal != Principal::organizer) {
    throw Error(ErrorKind::forbidden, "organizer-only route");
  }
  const auto params = parse_body(request.body);
  const std::string actor = "organizer:" + sha256_hex(options_.organizer_token).substr(0, 12);
  try {
    auto result = run_admin(action, params);
    result["ok"] = true;
    // Exports are read-only and large; the journal keeps only the fact.
    const auto journaled = action == "export" ? json{{"ok", true}} : result;
    const auto entry = audit_.append(clock_.now(), actor, action, params, journaled);
    result["audit_seq"] = entry.seq;
    return json_response(200, result);
  } catch (const Error& e) {
    audit_.append(clock_.now(), actor, action, params,
                  {{"ok", false}, {"error", std::string(to_string(e.kind()))}, {"message", e.what()}});
    throw;
  }
}

// Creation time of the live board a frozen snapshot copied; replay recomputes
// the board as of this instant.
json Api::board_as_of(std::uint64_t frozen_id) const
{
  const auto frozen = aggregator_.snapshot(frozen_id);
  const auto source = frozen ? aggregator_.snapshot(frozen->frozen_from) : nullptr;
  return source ? json(format_rfc3339(source->created_at)) : json();
}

json Api::run_admin(const std::string& action, const json& params)
{
  if (action == "freeze") {
    const auto stage = string_param(params, "stage");
    const auto label = string_param(params, "label");
    const auto id = aggregator_.freeze(stage, label);
    return {{"snapshot_id", id}, {"label", label}, {"board_as_of", board_as_of(id)}};
  }
  if (action == "twist") {
    const auto r = aggregator_.apply_twist(string_param(params, "stage"), int_param(params, "version"));
    return {{"new_version", r.new_version},
            {"freeze_label", r.freeze_label},
            {"frozen_snapshot_id", r.frozen_snapshot_id ? json(*r.frozen_snapshot_id) : json()},
            {"board_as_of", r.frozen_snapshot_id ? board_as_of(*r.frozen_snapshot_id) : json()},
            {"rescored", r.rescored}};
  }
  if (action == "badge_grant") {
    const auto a = aggregator_.grant_badge(string_param(params, "stage"), string_param(params, "badge_id"),
                                           string_param(params, "display_name"));
    return {{"badge_id", a.badge_id}, {"stage_id", a.stage_id}, {"display_name", a.display_name},
            {"awarded_at", format_rfc3339(a.awarded_at)}};
  }
  if (action == "reinstate") {
    std::string team_id;
    if (params.contains("team_id")) {
      team_id = string_param(params, "team_id");
    } else {
      const auto stage = string_param(params, "stage");
      const auto t = registry_.team_for_token(stage, string_param(params, "display_name"));
      if (!t) {
        throw Error(ErrorKind::not_found, "no such team in stage " + stage);
      }
      team_id = *t;
    }
    const auto rec = registry_.reinstate(team_id);
    return {{"team_id", rec.team_id}, {"status", std::string(to_string(rec.status))}};
  }
  if (action == "registration_override") {
    const auto req = registration_from_json(params);
    const auto reg = registry_.register_team(req, clock_.now(), true);
    return {{"team_id", reg.team_id}, {"credential", reg.credential}};
  }
  if (action == "verify_drain") {
    const auto stage = string_param(params, "stage");
    const auto n = aggregator_.verify_drain(stage, options_.verifier);
    return {{"stage", stage}, {"processed", n}, {"queued_results", aggregator_.verification_queue().size()}};
  }
  if (action == "status") {
    json stages = json::object();
    for (const auto& s : config_.stages) {
      int pending = 0;
      int verified = 0;
      int invalidated = 0;
      for (const auto& sub : ingestor_.stage_submissions(s.stage_id)) {
        const auto rec = aggregator_.record(sub.submission_id);
        if (!rec || rec->rejected()) {
          continue;
        }
        (rec->verification == Verification::pending ? pending
         : rec->verification == Verification::verified ? verified
                                                        : invalidated)++;
      }
      stages[s.stage_id] = {{"evaluator_version", aggregator_.current_version(s.stage_id)},
                            {"submissions", ingestor_.stage_submissions(s.stage_id).size()},
                            {"pending", pending},
                            {"verified", verified},
                            {"invalidated", invalidated}};
    }
    return {{"stages", stages}, {"alerts", aggregator_.alerts()}};
  }
  if (action == "export") {
    const auto stage = string_param(params, "stage");
    config_.stage(stage);
    json teams = json::array();
    for (const auto& t : registry_.teams()) {
      if (!t.tokens.count(stage)) {
        continue;
      }
      json contacts = json::array();
      for (const auto& c : t.contacts) {
        contacts.push_back({{"name", c.name}, {"email", c.email}});
      }
      teams.push_back({{"team_id", t.team_id},
                       {"display_name", t.tokens.at(stage)},
                       {"status", std::string(to_string(t.status))},
                       {"contacts", contacts},
                       {"rules_accepted_at", format_rfc3339(t.rules_accepted_at)}});
    }
    json submissions = json::array();
    for (const auto& s : ingestor_.stage_submissions(stage)) {
      json item = {{"submission_id", s.submission_id},
                   {"team_id", s.team_id},
                   {"received_at", format_rfc3339(s.received_at)},
                   {"payload_sha256", s.payload_digest},
                   {"source", std::string(to_string(s.source))},
                   {"channel", s.channel},
                   {"duplicate", s.duplicate}};
      if (const auto rec = aggregator_.record(s.submission_id)) {
        item["evaluator_version"] = rec->evaluator_version;
        item["score"] = rec->primary_score ? json(*rec->primary_score) : json();
        item["format_error"] = rec->format_error;
        item["verification"] = std::string(to_string(rec->verification));
        item["aux"] = rec->aux;
      }
      submissions.push_back(std::move(item));
    }
    json snapshots = json::array();
    for (const auto& s : aggregator_.snapshots(stage)) {
      snapshots.push_back(json::parse(snapshot_bytes(*s)));
    }
    json badges = json::array();
    for (const auto& a : aggregator_.badges(stage)) {
      badges.push_back({{"badge_id", a.badge_id}, {"team_id", a.team_id}, {"display_name", a.display_name},
                        {"awarded_at", format_rfc3339(a.awarded_at)}, {"submission_id", a.submission_id}});
    }
    json audit = json::array();
    for (const auto& e : audit_.entries()) {
      audit.push_back(e.to_json());
    }
    return {{"stage", stage},
            {"config", json::parse(serialize_config(config_))},
            {"teams", teams},
            {"submissions", submissions},
            {"snapshots", snapshots},
            {"badges", badges},
            {"audit", audit}};
  }
  throw Error(ErrorKind::not_found, "unknown admin action '" + action + "'");
}

ApiResponse Api::get_ui(const std::string& rest)
{
  if (options_.ui_dir.empty()) {
    throw Error(ErrorKind::not_found, "no UI bundle installed");
  }
  const auto rel = rest.empty() ? std::string("index.html") : rest;
  for (const auto& part : fs::path(rel)) {
    if (part == ".." || part == ".") {
      throw Error(ErrorKind::not_found, "no such file");
    }
  }
  const auto path = options_.ui_dir / rel;
  if (!fs::is_regular_file(path)) {
    throw Error(ErrorKind::not_found, "no such file");
  }
  ApiResponse r;
  r.content_type = mime_type(path);
  r.body = read_file(path);
  return r;
}

} // namespace arena
