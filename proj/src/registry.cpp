#include "arena/registry.hpp"

#include "arena/digest.hpp"
#include "arena/error.hpp"

#include <json.hpp>
#include <spdlog/spdlog.h>

#include <fstream>
#include <mutex>
#include <set>

namespace arena {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(TeamStatus s)
{
  switch (s) {
  case TeamStatus::active: return "active";
  case TeamStatus::inactive_missed_preliminary: return "inactive_missed_preliminary";
  case TeamStatus::disqualified: return "disqualified";
  }
  return "active";
}

TeamStatus parse_team_status(std::string_view s)
{
  for (auto v : {TeamStatus::active, TeamStatus::inactive_missed_preliminary, TeamStatus::disqualified}) {
    if (to_string(v) == s) {
      return v;
    }
  }
  throw Error(ErrorKind::validation, "unknown team status '" + std::string(s) + "'");
}

std::string ascii_lower(std::string_view s)
{
  std::string out(s);
  for (auto& c : out) {
    if (c >= 'A' && c <= 'Z') {
      c = static_cast<char>(c - 'A' + 'a');
    }
  }
  return out;
}

namespace {

std::string email_local_part(std::string_view email)
{
  return std::string(email.substr(0, email.find('@')));
}

void validate_contacts(const std::vector<Contact>& contacts)
{
  if (contacts.empty()) {
    throw Error(ErrorKind::validation, "at least one member is required");
  }
  std::set<std::string> emails;
  for (const auto& c : contacts) {
    const auto at = c.email.find('@');
    if (c.name.empty() || at == std::string::npos || at == 0 || at + 1 == c.email.size()) {
      throw Error(ErrorKind::validation, "each member needs a name and a valid email");
    }
    if (!emails.insert(ascii_lower(c.email)).second) {
      throw Error(ErrorKind::validation, "member listed twice");
    }
  }
}

std::string credential_digest(std::string_view salt, std::string_view credential)
{
  return sha256_hex(std::string(salt) + ":" + std::string(credential));
}

json record_to_json(const TeamRecord& r)
{
  json contacts = json::array();
  for (const auto& c : r.contacts) {
    contacts.push_back({{"name", c.name}, {"email", c.email}});
  }
  return {{"team_id", r.team_id},
          {"contacts", std::move(contacts)},
          {"rules_accepted_at", format_rfc3339(r.rules_accepted_at)},
          {"credential_salt", r.credential_salt},
          {"credential_digest", r.credential_digest},
          {"tokens", r.tokens},
          {"status", to_string(r.status)}};
}

std::vector<Contact> contacts_from_json(const json& j)
{
  std::vector<Contact> out;
  for (const auto& c : j) {
    out.push_back({c.at("name").get<std::string>(), c.at("email").get<std::string>()});
  }
  return out;
}

TeamRecord record_from_json(const json& j)
{
  TeamRecord r;
  r.team_id = j.at("team_id").get<std::string>();
  r.contacts = contacts_from_json(j.at("contacts"));
  r.rules_accepted_at = parse_rfc3339(j.at("rules_accepted_at").get<std::string>());
  r.credential_salt = j.at("credential_salt").get<std::string>();
  r.credential_digest = j.at("credential_digest").get<std::string>();
  r.tokens = j.at("tokens").get<std::map<std::string, std::string>>();
  r.status = parse_team_status(j.at("status").get<std::string>());
  return r;
}

} // namespace

void validate_token(std::string_view token, const std::vector<Contact>& contacts)
{
  if (token.empty() || token.size() > 32) {
    throw Error(ErrorKind::validation, "anonymity token must be 1-32 characters");
  }
  for (unsigned char c : token) {
    if (c < 0x20 || c == 0x7f) {
      throw Error(ErrorKind::validation, "anonymity token contains control characters");
    }
  }
  const auto lowered = ascii_lower(token);
  for (const auto& c : contacts) {
    for (const auto& needle : {ascii_lower(c.name), ascii_lower(email_local_part(c.email))}) {
      if (!needle.empty() && lowered.find(needle) != std::string::npos) {
        throw Error(ErrorKind::validation, "anonymity token must not contain a member name or email");
      }
    }
  }
}

Registry::Registry(const CompetitionConfig& config, fs::path dir)
  : config_(config), dir_(std::move(dir))
{
  if (dir_.empty()) {
    return;
  }
  fs::create_directories(dir_);
  const auto log = dir_ / "log.jsonl";
  if (!fs::exists(log)) {
    return;
  }
  std::ifstream in(log);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) {
      lines.push_back(std::move(line));
    }
  }
  for (std::size_t i = 0; i < lines.size(); ++i) {
    // A crash mid-append can leave a torn final line; anything earlier is corruption.
    if (i + 1 == lines.size() && !json::accept(lines[i])) {
      spdlog::warn("registry log: ignoring incomplete final line");
      break;
    }
    apply(lines[i]);
  }
}

void Registry::apply(const std::string& line)
{
  const auto j = json::parse(line);
  const auto op = j.at("op").get<std::string>();
  if (op == "register") {
    auto r = record_from_json(j.at("record"));
    auto id = r.team_id;
    teams_[id] = std::move(r);
  } else if (op == "status") {
    get(j.at("team_id").get<std::string>()).status = parse_team_status(j.at("status").get<std::string>());
  } else if (op == "members") {
    get(j.at("team_id").get<std::string>()).contacts = contacts_from_json(j.at("contacts"));
  } else {
    throw Error(ErrorKind::parse, "registry log: unknown op '" + op + "'");
  }
}

void Registry::commit(const std::string& line)
{
  if (!dir_.empty()) {
    append_line_durable(dir_ / "log.jsonl", line);
  }
  apply(line);
  if (!dir_.empty()) {
    write_state();
  }
}

void Registry::write_state() const
{
  json all = json::array();
  for (const auto& [_, r] : teams_) {
    all.push_back(record_to_json(r));
  }
  write_file_atomic(dir_ / "state.json", json{{"teams", std::move(all)}}.dump(2) + "\n");
}

TeamRecord& Registry::get(std::string_view team_id)
{
  const auto it = teams_.find(team_id);
  if (it == teams_.end()) {
    throw Error(ErrorKind::not_found, "unknown team");
  }
  return it->second;
}

const TeamRecord& Registry::get(std::string_view team_id) const
{
  const auto it = teams_.find(team_id);
  if (it == teams_.end()) {
    throw Error(ErrorKind::not_found, "unknown team");
  }
  return it->second;
}

void Registry::check_token_free(const std::string& stage, const std::string& token,
                                std::string_view except_team) const
{
  const auto lowered = ascii_lower(token);
  for (const auto& [id, r] : teams_) {
    if (id == except_team) {
      continue;
    }
    const auto it = r.tokens.find(stage);
    if (it != r.tokens.end() && ascii_lower(it->second) == lowered) {
      throw Error(ErrorKind::conflict, "token already taken for stage " + stage);
    }
  }
}

void Registry::check_members_free(const std::vector<Contact>& contacts, std::string_view except_team) const
{
  std::set<std::string> wanted;
  for (const auto& c : contacts) {
    wanted.insert(ascii_lower(c.email));
  }
  for (const auto& [id, r] : teams_) {
    if (id == except_team) {
      continue;
    }
    for (const auto& c : r.contacts) {
      if (wanted.count(ascii_lower(c.email))) {
        throw Error(ErrorKind::conflict, "a member cannot participate in more than one team");
      }
    }
  }
}

Registration Registry::register_team(const RegistrationRequest& request, Timestamp now,
                                     bool override_window)
{
  if (!override_window && !(config_.registration_open <= now && now < config_.registration_close)) {
    throw Error(ErrorKind::forbidden, "registration closed");
  }
  if (!request.accept_rules) {
    throw Error(ErrorKind::validation, "rules not accepted");
  }
  validate_contacts(request.contacts);
  for (const auto& [stage, _] : request.tokens) {
    if (!config_.find_stage(stage)) {
      throw Error(ErrorKind::validation, "token supplied for unknown stage '" + stage + "'");
    }
  }
  for (const auto& s : config_.stages) {
    const auto it = request.tokens.find(s.stage_id);
    if (it == request.tokens.end()) {
      throw Error(ErrorKind::validation, "missing token for stage " + s.stage_id);
    }
    validate_token(it->second, request.contacts);
  }

  const auto salt = hex_encode(random_bytes(16));
  const auto secret = random_bytes(32);
  Registration out;
  out.credential = base32_encode(secret);

  std::unique_lock lock(mutex_);
  check_members_free(request.contacts, {});
  for (const auto& [stage, token] : request.tokens) {
    check_token_free(stage, token, {});
  }
  do {
    out.team_id = "team-" + hex_encode(random_bytes(8));
  } while (teams_.count(out.team_id));

  TeamRecord r;
  r.team_id = out.team_id;
  r.contacts = request.contacts;
  r.rules_accepted_at = now;
  r.credential_salt = salt;
  r.credential_digest = credential_digest(salt, out.credential);
  r.tokens = request.tokens;
  r.status = TeamStatus::active;
  commit(json{{"op", "register"}, {"record", record_to_json(r)}}.dump());
  return out;
}

std::string Registry::authenticate(std::string_view credential) const
{
  std::shared_lock lock(mutex_);
  const std::string* match = nullptr;
  // Every record is hashed so timing does not depend on where a match sits.
  for (const auto& [id, r] : teams_) {
    const auto digest = credential_digest(r.credential_salt, credential);
    if (constant_time_equal(digest, r.credential_digest) && !credential.empty()) {
      match = &id;
    }
  }
  if (!match) {
    throw Error(ErrorKind::unauthenticated, "unknown credential");
  }
  return *match;
}

std::string Registry::resolve_display_name(std::string_view team_id, std::string_view stage_id) const
{
  std::shared_lock lock(mutex_);
  const auto& r = get(team_id);
  const auto it = r.tokens.find(std::string(stage_id));
  if (it == r.tokens.end()) {
    throw Error(ErrorKind::not_found, "team does not participate in stage '" + std::string(stage_id) + "'");
  }
  return it->second;
}

std::optional<std::string> Registry::team_for_token(std::string_view stage_id, std::string_view token) const
{
  std::shared_lock lock(mutex_);
  const auto lowered = ascii_lower(token);
  for (const auto& [id, r] : teams_) {
    const auto it = r.tokens.find(std::string(stage_id));
    if (it != r.tokens.end() && ascii_lower(it->second) == lowered) {
      return id;
    }
  }
  return std::nullopt;
}

TeamRecord Registry::mark_inactive(std::string_view team_id, TeamStatus reason)
{
  if (reason == TeamStatus::active) {
    throw Error(ErrorKind::validation, "mark_inactive needs an inactive or disqualified status");
  }
  std::unique_lock lock(mutex_);
  if (get(team_id).status != reason) {
    commit(json{{"op", "status"}, {"team_id", team_id}, {"status", to_string(reason)}}.dump());
  }
  return get(team_id);
}

TeamRecord Registry::reinstate(std::string_view team_id)
{
  std::unique_lock lock(mutex_);
  if (get(team_id).status != TeamStatus::active) {
    commit(json{{"op", "status"}, {"team_id", team_id}, {"status", "active"}}.dump());
  }
  return get(team_id);
}

TeamRecord Registry::replace_members(std::string_view team_id, const std::vector<Contact>& contacts)
{
  validate_contacts(contacts);
  std::unique_lock lock(mutex_);
  const auto& r = get(team_id);
  for (const auto& [_, token] : r.tokens) {
    validate_token(token, contacts);
  }
  check_members_free(contacts, team_id);
  json cj = json::array();
  for (const auto& c : contacts) {
    cj.push_back({{"name", c.name}, {"email", c.email}});
  }
  commit(json{{"op", "members"}, {"team_id", team_id}, {"contacts", std::move(cj)}}.dump());
  return get(team_id);
}

std::optional<TeamRecord> Registry::find(std::string_view team_id) const
{
  std::shared_lock lock(mutex_);
  const auto it = teams_.find(team_id);
  if (it == teams_.end()) {
    return std::nullopt;
  }
  return it->second;
}

std::vector<TeamRecord> Registry::teams() const
{
  std::shared_lock lock(mutex_);
  std::vector<TeamRecord> out;
  for (const auto& [_, r] : teams_) {
    out.push_back(r);
  }
  return out;
}

std::vector<std::string> Registry::teams_in_stage(std::string_view stage_id) const
{
  std::shared_lock lock(mutex_);
  std::vector<std::string> out;
  for (const auto& [id, r] : teams_) {
    if (r.tokens.count(std::string(stage_id))) {
      out.push_back(id);
    }
  }
  return out;
}

std::size_t Registry::size() const
{
  std::shared_lock lock(mutex_);
  return teams_.size();
}

} // namespace arena
