#pragma once

#include "arena/aggregator.hpp"
#include "arena/api.hpp"
#include "arena/audit.hpp"
#include "arena/config.hpp"
#include "arena/ingestion.hpp"
#include "arena/registry.hpp"

#include <filesystem>
#include <memory>
#include <ostream>
#include <string>
#include <thread>

namespace httplib {
class Server;
}

namespace arena {

struct ServiceOptions {
  std::filesystem::path config_path;
  // Root of all persistent state; see docs/storage.md.
  std::filesystem::path data_dir = "data";
  std::string bind_addr = "127.0.0.1:8080";
  std::string organizer_token;
  // Empty: <data_dir>/ui when that directory exists.
  std::filesystem::path ui_dir;
};

// ARENA_CONFIG, ARENA_DATA_DIR, ARENA_BIND_ADDR, ARENA_ORGANIZER_TOKEN_FILE
// and ARENA_UI_DIR over the defaults.
ServiceOptions service_options_from_env();

// Every back-end component over one data directory:
//   <data>/storage       data files and holdouts
//   <data>/registry      team metadata
//   <data>/submissions   submission storage
//   <data>/aggregator    aggregator state, snapshots, verification queue
//   <data>/public        published leaderboard CSVs
//   <data>/inbox         scanned submission source, when present
//   <data>/audit.jsonl   admin journal
class Service {
public:
  Service(const CompetitionConfig& config, const ServiceOptions& options, const Clock& clock);

  Registry& registry() { return registry_; }
  Ingestor& ingestor() { return ingestor_; }
  Aggregator& aggregator() { return aggregator_; }
  AuditLog& audit() { return audit_; }
  Api& api() { return api_; }

private:
  Registry registry_;
  Ingestor ingestor_;
  Aggregator aggregator_;
  AuditLog audit_;
  Api api_;
};

// httplib front for an Api. All routes funnel into Api::handle.
class HttpServer {
public:
  HttpServer(Api& api, std::size_t payload_cap);
  ~HttpServer();

  // "host:port"; port 0 picks a free one. Returns the bound port or throws.
  int bind(const std::string& addr);
  // Blocks until stop().
  void listen();
  // bind + listen on a background thread.
  int start(const std::string& addr);
  void stop();

private:
  Api& api_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
};

std::pair<std::string, int> split_host_port(const std::string& addr);

// Validates the config and data storage, binds, runs the aggregator loop and
// serves until SIGINT/SIGTERM. With dry_run the process returns right after a
// successful bind. Returns a process exit code.
int run_service(const ServiceOptions& options, bool dry_run, std::ostream& out, std::ostream& err);

} // namespace arena
