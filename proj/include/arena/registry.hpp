#pragma once

#include "arena/config.hpp"
#include "arena/time.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

namespace arena {

enum class TeamStatus { active, inactive_missed_preliminary, disqualified };

std::string_view to_string(TeamStatus s);
TeamStatus parse_team_status(std::string_view s);

struct Contact {
  std::string name;
  std::string email;

  bool operator==(const Contact&) const = default;
};

struct TeamRecord {
  std::string team_id;
  // Private; never leaves the registry through a public payload.
  std::vector<Contact> contacts;
  Timestamp rules_accepted_at;
  std::string credential_salt;
  std::string credential_digest;
  // stage_id -> anonymity token (the stage's public display name).
  std::map<std::string, std::string> tokens;
  TeamStatus status = TeamStatus::active;

  bool operator==(const TeamRecord&) const = default;
};

struct Registration {
  std::string team_id;
  // Plaintext; returned once, only the salted digest is stored.
  std::string credential;
};

struct RegistrationRequest {
  std::vector<Contact> contacts;
  std::map<std::string, std::string> tokens;
  bool accept_rules = false;
};

// Checks one anonymity token against the shape rules and the members it must
// not reveal. Throws Error(validation).
void validate_token(std::string_view token, const std::vector<Contact>& contacts);

std::string ascii_lower(std::string_view s);

// Team metadata store. Writes are serialized; reads run concurrently and see
// committed records only. With a non-empty directory every mutation is
// appended to log.jsonl and mirrored into state.json.
class Registry {
public:
  Registry(const CompetitionConfig& config, std::filesystem::path dir = {});

  Registration register_team(const RegistrationRequest& request, Timestamp now,
                             bool override_window = false);

  // Uniform Error(unauthenticated) on any mismatch.
  std::string authenticate(std::string_view credential) const;

  std::string resolve_display_name(std::string_view team_id, std::string_view stage_id) const;
  std::optional<std::string> team_for_token(std::string_view stage_id, std::string_view token) const;

  TeamRecord mark_inactive(std::string_view team_id, TeamStatus reason);
  TeamRecord reinstate(std::string_view team_id);
  // Organizer-mediated re-pairing between stages; emails stay the join key.
  TeamRecord replace_members(std::string_view team_id, const std::vector<Contact>& contacts);

  std::optional<TeamRecord> find(std::string_view team_id) const;
  std::vector<TeamRecord> teams() const;
  std::vector<std::string> teams_in_stage(std::string_view stage_id) const;
  std::size_t size() const;

private:
  void apply(const std::string& line);
  void commit(const std::string& line);
  void check_token_free(const std::string& stage, const std::string& token,
                        std::string_view except_team) const;
  void check_members_free(const std::vector<Contact>& contacts, std::string_view except_team) const;
  TeamRecord& get(std::string_view team_id);
  const TeamRecord& get(std::string_view team_id) const;
  void write_state() const;

  const CompetitionConfig& config_;
  std::filesystem::path dir_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, TeamRecord, std::less<>> teams_;
};

} // namespace arena
