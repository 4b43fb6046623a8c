#pragma once

#include "arena/aggregator.hpp"
#include "arena/audit.hpp"
#include "arena/config.hpp"
#include "arena/error.hpp"
#include "arena/ingestion.hpp"
#include "arena/registry.hpp"
#include "arena/verification.hpp"

#include <filesystem>
#include <map>
#include <string>

namespace arena {

struct ApiRequest {
  std::string method;
  std::string path;
  std::map<std::string, std::string> query;
  // Lower-case header names.
  std::map<std::string, std::string> headers;
  std::string body;
  // Abuse logging only.
  std::string client_addr;
};

struct ApiResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::map<std::string, std::string> headers;
  std::string body;
};

int http_status(ErrorKind kind);

struct ApiOptions {
  // Data files named in the manifest, and holdouts.
  std::filesystem::path storage_dir;
  // Static UI bundle mounted at /ui/. Empty: /ui/ is 404.
  std::filesystem::path ui_dir;
  // Empty disables every admin route.
  std::string organizer_token;
  // Used by the verify_drain admin action. Default: recompute from holdout.
  VerifierHook verifier;
};

// Every route of the public front-end and the organizer surface, independent
// of the HTTP library. Thread-safe: handlers only read immutable snapshots and
// go through the registry and ingestion writers.
class Api {
public:
  Api(const CompetitionConfig& config, Registry& registry, Ingestor& ingestor, Aggregator& aggregator,
      AuditLog& audit, const Clock& clock, ApiOptions options = {});

  ApiResponse handle(const ApiRequest& request);

private:
  enum class Principal { anonymous, team, organizer };
  struct Caller {
    Principal principal = Principal::anonymous;
    std::string team_id;
  };

  Caller identify(const ApiRequest& request) const;
  std::string require_team(const Caller& caller) const;

  ApiResponse route(const ApiRequest& request);
  ApiResponse post_register(const ApiRequest& request);
  ApiResponse post_submission(const ApiRequest& request, const std::string& stage);
  ApiResponse get_submission(const ApiRequest& request, const std::string& stage, const std::string& id);
  ApiResponse get_leaderboard(const ApiRequest& request, const std::string& stage);
  ApiResponse get_data(const ApiRequest& request, const std::string& file);
  ApiResponse get_badges(const std::string& stage);
  ApiResponse get_quota(const ApiRequest& request, const std::string& stage);
  ApiResponse get_stages();
  ApiResponse post_admin(const ApiRequest& request, const std::string& action);
  nlohmann::json run_admin(const std::string& action, const nlohmann::json& params);
  nlohmann::json board_as_of(std::uint64_t frozen_id) const;
  ApiResponse get_ui(const std::string& rest);

  const CompetitionConfig& config_;
  Registry& registry_;
  Ingestor& ingestor_;
  Aggregator& aggregator_;
  AuditLog& audit_;
  const Clock& clock_;
  ApiOptions options_;
};

} // namespace arena
