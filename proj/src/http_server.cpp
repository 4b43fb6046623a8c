#include "arena/http_server.hpp"

#include "arena/digest.hpp"
#include "arena/error.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include <csignal>
#include <cstdlib>

namespace arena {

namespace fs = std::filesystem;

namespace {

std::string env_or(const char* name, std::string fallback)
{
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : std::move(fallback);
}

std::string trim(std::string s)
{
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) {
    s.pop_back();
  }
  std::size_t i = 0;
  while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) {
    ++i;
  }
  return s.substr(i);
}

AggregatorOptions aggregator_options(const ServiceOptions& o)
{
  AggregatorOptions a;
  a.state_dir = o.data_dir / "aggregator";
  a.public_dir = o.data_dir / "public";
  a.storage_dir = o.data_dir / "storage";
  if (fs::is_directory(o.data_dir / "inbox")) {
    a.scan_root = o.data_dir / "inbox";
  }
  return a;
}

ApiOptions api_options(const ServiceOptions& o)
{
  ApiOptions a;
  a.storage_dir = o.data_dir / "storage";
  a.ui_dir = o.ui_dir;
  if (a.ui_dir.empty() && fs::is_directory(o.data_dir / "ui")) {
    a.ui_dir = o.data_dir / "ui";
  }
  a.organizer_token = o.organizer_token;
  return a;
}

} // namespace

ServiceOptions service_options_from_env()
{
  ServiceOptions o;
  o.config_path = env_or("ARENA_CONFIG", "");
  o.data_dir = env_or("ARENA_DATA_DIR", "data");
  o.bind_addr = env_or("ARENA_BIND_ADDR", o.bind_addr);
  if (const auto token_file = env_or("ARENA_ORGANIZER_TOKEN_FILE", ""); !token_file.empty()) {
    o.organizer_token = trim(read_file(token_file));
  }
  o.ui_dir = env_or("ARENA_UI_DIR", "");
  return o;
}

Service::Service(const CompetitionConfig& config, const ServiceOptions& options, const Clock& clock)
  : registry_(config, options.data_dir / "registry"),
    ingestor_(config, registry_, clock, options.data_dir / "submissions"),
    aggregator_(config, registry_, ingestor_, clock, aggregator_options(options)),
    audit_(options.data_dir / "audit.jsonl"),
    api_(config, registry_, ingestor_, aggregator_, audit_, clock, api_options(options))
{
}

std::pair<std::string, int> split_host_port(const std::string& addr)
{
  const auto colon = addr.rfind(':');
  if (colon == std::string::npos) {
    throw Error(ErrorKind::validation, "bind address must be host:port");
  }
  int port = 0;
  try {
    port = std::stoi(addr.substr(colon + 1));
  } catch (const std::exception&) {
    throw Error(ErrorKind::validation, "bind address has no numeric port");
  }
  if (port < 0 || port > 65535) {
    throw Error(ErrorKind::validation, "port out of range");
  }
  return {addr.substr(0, colon), port};
}

HttpServer::HttpServer(Api& api, std::size_t payload_cap) : api_(api), server_(std::make_unique<httplib::Server>())
{
  // Leave room for the Api to answer oversize payloads itself.
  server_->set_payload_max_length(payload_cap + 1);
  auto handler = [this](const httplib::Request& req, httplib::Response& res) {
    ApiRequest r;
    r.method = req.method;
    r.path = req.path;
    for (const auto& [k, v] : req.params) {
      r.query.emplace(k, v);
    }
    for (const auto& [k, v] : req.headers) {
      r.headers[ascii_lower(k)] = v;
    }
    r.body = req.body;
    r.client_addr = req.remote_addr;
    const auto out = api_.handle(r);
    res.status = out.status;
    for (const auto& [k, v] : out.headers) {
      res.set_header(k, v);
    }
    res.set_content(out.body, out.content_type);
  };
  server_->Get(".*", handler);
  server_->Post(".*", handler);
}

HttpServer::~HttpServer()
{
  stop();
}

int HttpServer::bind(const std::string& addr)
{
  const auto [host, port] = split_host_port(addr);
  if (port == 0) {
    const int bound = server_->bind_to_any_port(host);
    if (bound <= 0) {
      throw Error(ErrorKind::io, "cannot bind " + addr);
    }
    return bound;
  }
  if (!server_->bind_to_port(host, port)) {
    throw Error(ErrorKind::io, "cannot bind " + addr);
  }
  return port;
}

void HttpServer::listen()
{
  server_->listen_after_bind();
}

int HttpServer::start(const std::string& addr)
{
  const int port = bind(addr);
  thread_ = std::thread([this] { listen(); });
  server_->wait_until_ready();
  return port;
}

void HttpServer::stop()
{
  if (server_) {
    server_->stop();
  }
  if (thread_.joinable()) {
    thread_.join();
  }
}

namespace {

volatile std::sig_atomic_t g_stop_requested = 0;

extern "C" void on_signal(int)
{
  g_stop_requested = 1;
}

} // namespace

int run_service(const ServiceOptions& options, bool dry_run, std::ostream& out, std::ostream& err)
{
  CompetitionConfig config;
  try {
    config = load_config_file(options.config_path);
    check_data_storage(config, options.data_dir / "storage");
  } catch (const Error& e) {
    err << "invalid config: " << e.what() << "\n";
    return 1;
  }
  if (options.organizer_token.empty()) {
    spdlog::warn("no organizer token configured; admin routes are disabled");
  }
  SystemClock clock;
  Service service(config, options, clock);
  HttpServer server(service.api(), config.payload_size_cap);
  int port = 0;
  try {
    port = server.bind(options.bind_addr);
  } catch (const Error& e) {
    err << e.what() << "\n";
    return 3;
  }
  out << "competition " << config.competition_id << ": listening on "
      << split_host_port(options.bind_addr).first << ":" << port << "\n";
  out.flush();
  if (dry_run) {
    return 0;
  }
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::thread aggregator([&] { service.aggregator().run_forever(); });
  std::thread http([&] { server.listen(); });
  while (!g_stop_requested) {
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
  }
  spdlog::info("shutting down");
  server.stop();
  http.join();
  service.aggregator().stop();
  aggregator.join();
  return 0;
}

} // namespace arena
