#include "cli.hpp"

#include "arena/csv.hpp"
#include "arena/digest.hpp"
#include "arena/error.hpp"
#include "arena/http_server.hpp"

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <optional>
#include <sys/stat.h>

namespace arena {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Globals {
  std::string server;
  std::string credential_file;
  std::string output = "text";
};

struct Reply {
  int status = 0;
  std::string body;
  httplib::Headers headers;
};

class CliFailure : public std::runtime_error {
public:
  CliFailure(int code, const std::string& message) : std::runtime_error(message), code(code) {}
  int code;
};

std::string trimmed(std::string s)
{
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) {
    s.pop_back();
  }
  return s;
}

std::string env(const char* name)
{
  const char* v = std::getenv(name);
  return v ? std::string(v) : std::string();
}

// Team credential: --credential-file, then ARENA_CREDENTIAL.
std::string team_credential(const Globals& g)
{
  if (!g.credential_file.empty()) {
    return trimmed(read_file(g.credential_file));
  }
  if (auto c = env("ARENA_CREDENTIAL"); !c.empty()) {
    return trimmed(c);
  }
  throw CliFailure(exit_usage, "no credential: pass --credential-file or set ARENA_CREDENTIAL");
}

// Organizer token: --credential-file, then ARENA_ORGANIZER_TOKEN_FILE.
std::string organizer_token(const Globals& g)
{
  if (!g.credential_file.empty()) {
    return trimmed(read_file(g.credential_file));
  }
  if (auto f = env("ARENA_ORGANIZER_TOKEN_FILE"); !f.empty()) {
    return trimmed(read_file(f));
  }
  throw CliFailure(exit_usage, "no organizer token: pass --credential-file or set ARENA_ORGANIZER_TOKEN_FILE");
}

Reply call(const Globals& g, const std::string& method, const std::string& path, const std::string& token,
           const std::string& body = {}, const std::string& content_type = "application/json")
{
  httplib::Client client(g.server);
  client.set_connection_timeout(10);
  client.set_read_timeout(300);
  httplib::Headers headers;
  if (!token.empty()) {
    headers.emplace("Authorization", "Bearer " + token);
  }
  auto res = method == "GET" ? client.Get(path, headers) : client.Post(path, headers, body, content_type);
  if (!res) {
    throw CliFailure(exit_connection, "cannot reach " + g.server + ": " + httplib::to_string(res.error()));
  }
  return {res->status, res->body, res->headers};
}

// Non-2xx replies become failures carrying the server's own message.
Reply expect_ok(Reply r)
{
  if (r.status >= 200 && r.status < 300) {
    return r;
  }
  std::string message = r.body;
  try {
    const auto j = json::parse(r.body);
    message = j.value("message", r.body);
  } catch (const json::exception&) {
  }
  throw CliFailure(exit_server, "server error " + std::to_string(r.status) + ": " + trimmed(message));
}

json body_json(const Reply& r)
{
  try {
    return json::parse(r.body);
  } catch (const json::exception&) {
    throw CliFailure(exit_server, "server sent malformed JSON");
  }
}

std::string render_table(const std::string& csv_text)
{
  const auto table = csv::parse(csv_text);
  std::vector<std::size_t> width(table.header.size(), 0);
  auto widen = [&](const std::vector<std::string>& row) {
    for (std::size_t i = 0; i < row.size() && i < width.size(); ++i) {
      width[i] = std::max(width[i], row[i].size());
    }
  };
  widen(table.header);
  for (const auto& row : table.rows) {
    widen(row);
  }
  std::string out;
  auto emit = [&](const std::vector<std::string>& row) {
    std::string line;
    for (std::size_t i = 0; i < row.size(); ++i) {
      line += row[i];
      if (i + 1 < row.size()) {
        line.append(width[i] - row[i].size() + 2, ' ');
      }
    }
    out += trimmed(line) + "\n";
  };
  emit(table.header);
  for (const auto& row : table.rows) {
    emit(row);
  }
  return out;
}

void save_credential(const fs::path& path, const std::string& credential)
{
  write_file_atomic(path, credential + "\n");
  ::chmod(path.c_str(), 0600);
}

} // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err)
{
  CLI::App app{"arena: competition platform client and service"};
  app.require_subcommand(1);
  Globals g;
  g.server = env("ARENA_SERVER").empty() ? "http://127.0.0.1:8080" : env("ARENA_SERVER");
  app.add_option("--server", g.server, "Server base URL (env ARENA_SERVER)");
  app.add_option("--credential-file", g.credential_file, "File holding the team credential or organizer token");
  app.add_option("--output", g.output, "Output format")->check(CLI::IsMember({"text", "json"}));

  // Organizer commands.
  auto* init = app.add_subcommand("init", "Validate a config and start the service");
  std::string init_config;
  ServiceOptions svc;
  std::string env_problem;
  try {
    svc = service_options_from_env();
  } catch (const Error& e) {
    env_problem = e.what();
  }
  bool dry_run = false;
  init->add_option("config", init_config, "Competition config (JSON, env ARENA_CONFIG)");
  init->add_option("--data-dir", svc.data_dir, "Data directory (env ARENA_DATA_DIR)");
  init->add_option("--bind", svc.bind_addr, "host:port (env ARENA_BIND_ADDR)");
  init->add_option("--ui-dir", svc.ui_dir, "Static UI bundle served at /ui/");
  init->add_flag("--dry-run", dry_run, "Exit after validating and binding");

  auto* freeze = app.add_subcommand("freeze", "Freeze the live leaderboard under a label");
  std::string stage;
  std::string label;
  freeze->add_option("stage", stage)->required();
  freeze->add_option("label", label)->required();

  auto* twist = app.add_subcommand("twist", "Switch a stage to its next evaluator version");
  int version = 0;
  twist->add_option("stage", stage)->required();
  twist->add_option("version", version)->required();

  auto* drain = app.add_subcommand("verify-drain", "Run verification for every due record of a stage");
  drain->add_option("stage", stage)->required();

  auto* exp = app.add_subcommand("export", "Download the stage's audit bundle");
  std::string export_out;
  exp->add_option("stage", stage)->required();
  exp->add_option("--out", export_out, "Write the bundle here instead of stdout");

  // Participant commands.
  auto* reg = app.add_subcommand("register", "Register a team");
  std::vector<std::string> contacts;
  std::vector<std::string> tokens;
  bool accept_rules = false;
  std::string save_to;
  reg->add_option("--contact", contacts, "Member as 'Name <email>'")->required();
  reg->add_option("--token", tokens, "stage=display_name, one per stage")->required();
  reg->add_flag("--accept-rules", accept_rules, "Accept the competition rules");
  reg->add_option("--save-credential", save_to, "Write the issued credential to this file (mode 0600)");

  auto* data = app.add_subcommand("data", "Data files");
  data->require_subcommand(1);
  auto* pull = data->add_subcommand("pull", "Download a data file and check its digest");
  std::string file;
  std::string pull_out;
  pull->add_option("file", file)->required();
  pull->add_option("--out", pull_out, "Destination (default: the file name)");

  auto* submit = app.add_subcommand("submit", "Submit a results file");
  std::string channel;
  submit->add_option("stage", stage)->required();
  submit->add_option("file", file)->required();
  submit->add_option("--channel", channel, "Free-text member tag");

  auto* quota = app.add_subcommand("quota", "Show today's remaining submissions");
  quota->add_option("stage", stage)->required();

  auto* board = app.add_subcommand("board", "Show a leaderboard");
  std::string frozen_label;
  board->add_option("stage", stage)->required();
  board->add_option("--frozen", frozen_label, "Show a frozen snapshot");

  auto* status = app.add_subcommand("status", "Show one of your submissions");
  std::string submission_id;
  status->add_option("stage", stage)->required();
  status->add_option("id", submission_id)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return exit_ok;
    }
    err << e.what() << "\n";
    return exit_usage;
  }
  const bool as_json = g.output == "json";

  auto admin = [&](const std::string& action, const json& params) {
    return body_json(expect_ok(call(g, "POST", "/api/admin/" + action, organizer_token(g), params.dump())));
  };

  try {
    if (init->parsed()) {
      if (!env_problem.empty()) {
        throw CliFailure(exit_usage, "cannot read organizer token: " + env_problem);
      }
      if (!init_config.empty()) {
        svc.config_path = init_config;
      }
      if (svc.config_path.empty()) {
        throw CliFailure(exit_usage, "no config: pass one or set ARENA_CONFIG");
      }
      return run_service(svc, dry_run, out, err);
    }
    if (freeze->parsed()) {
      const auto r = admin("freeze", {{"stage", stage}, {"label", label}});
      if (as_json) {
        out << r.dump() << "\n";
      } else {
        out << "frozen " << stage << " as '" << label << "' (snapshot " << r.at("snapshot_id") << ")\n";
      }
      return exit_ok;
    }
    if (twist->parsed()) {
      const auto r = admin("twist", {{"stage", stage}, {"version", version}});
      if (as_json) {
        out << r.dump() << "\n";
      } else {
        const auto freeze_label = r.value("freeze_label", "");
        if (freeze_label.empty()) {
          out << "no live leaderboard to freeze\n";
        } else {
          out << "frozen pre-twist leaderboard as '" << freeze_label << "' (snapshot "
              << r.at("frozen_snapshot_id") << ")\n";
        }
        out << stage << " now on evaluator v" << r.at("new_version") << "; " << r.at("rescored")
            << " submissions re-scored, live board refreshes next cycle\n";
      }
      return exit_ok;
    }
    if (drain->parsed()) {
      const auto r = admin("verify_drain", {{"stage", stage}});
      if (as_json) {
        out << r.dump() << "\n";
      } else {
        out << r.at("processed") << " records verified for " << stage << "; results apply next cycle\n";
      }
      return exit_ok;
    }
    if (exp->parsed()) {
      const auto r = admin("export", {{"stage", stage}});
      if (export_out.empty()) {
        out << r.dump(as_json ? -1 : 2) << "\n";
      } else {
        write_file_atomic(export_out, r.dump(2) + "\n");
        if (as_json) {
          out << json{{"stage", stage}, {"path", export_out}}.dump() << "\n";
        } else {
          out << "wrote " << export_out << "\n";
        }
      }
      return exit_ok;
    }
    if (reg->parsed()) {
      json body = {{"contacts", json::array()}, {"tokens", json::object()}, {"accept_rules", accept_rules}};
      for (const auto& c : contacts) {
        const auto lt = c.find('<');
        const auto gt = c.rfind('>');
        if (lt == std::string::npos || gt == std::string::npos || gt < lt) {
          throw CliFailure(exit_usage, "contact must look like 'Name <email>': " + c);
        }
        body["contacts"].push_back({{"name", trimmed(c.substr(0, lt))}, {"email", c.substr(lt + 1, gt - lt - 1)}});
      }
      for (const auto& t : tokens) {
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
          throw CliFailure(exit_usage, "token must look like stage=display_name: " + t);
        }
        body["tokens"][t.substr(0, eq)] = t.substr(eq + 1);
      }
      const auto r = body_json(expect_ok(call(g, "POST", "/api/register", {}, body.dump())));
      const auto credential = r.at("credential").get<std::string>();
      if (!save_to.empty()) {
        save_credential(save_to, credential);
      }
      if (as_json) {
        out << r.dump() << "\n";
      } else {
        out << "registered\n";
        if (save_to.empty()) {
          out << "credential: " << credential << "\n";
        } else {
          out << "credential saved to " << save_to << "\n";
        }
      }
      return exit_ok;
    }
    if (pull->parsed()) {
      std::string token;
      try {
        token = team_credential(g);
      } catch (const CliFailure&) {
        // Public files need no credential.
      }
      const auto r = expect_ok(call(g, "GET", "/api/data/" + file, token));
      const auto expected = r.headers.count("X-Content-SHA256") ? r.headers.find("X-Content-SHA256")->second : "";
      const auto actual = sha256_hex(r.body);
      const fs::path dest = pull_out.empty() ? fs::path(file).filename() : fs::path(pull_out);
      if (expected.empty() || !constant_time_equal(ascii_lower(expected), actual)) {
        if (as_json) {
          out << json{{"file", file}, {"expected_sha256", expected}, {"actual_sha256", actual}, {"verified", false}}.dump()
              << "\n";
        }
        err << "digest mismatch for " << file << ": expected " << (expected.empty() ? "<none>" : expected) << ", got "
            << actual << "; nothing written\n";
        return exit_digest;
      }
      write_file_atomic(dest, r.body);
      if (as_json) {
        out << json{{"file", file}, {"path", dest.string()}, {"bytes", r.body.size()}, {"sha256", actual},
                    {"verified", true}}.dump()
            << "\n";
      } else {
        out << "wrote " << dest.string() << " (" << r.body.size() << " bytes, sha256 verified)\n";
      }
      return exit_ok;
    }
    if (submit->parsed()) {
      const auto payload = read_file(file);
      httplib::Client client(g.server);
      client.set_connection_timeout(10);
      httplib::Headers headers{{"Authorization", "Bearer " + team_credential(g)}};
      if (!channel.empty()) {
        headers.emplace("X-Arena-Channel", channel);
      }
      auto res = client.Post("/api/submissions/" + stage, headers, payload, "text/csv");
      if (!res) {
        throw CliFailure(exit_connection, "cannot reach " + g.server + ": " + httplib::to_string(res.error()));
      }
      const auto r = body_json(expect_ok({res->status, res->body, res->headers}));
      if (as_json) {
        out << r.dump() << "\n";
      } else {
        out << "submission " << r.at("submission_id") << " accepted; " << r.at("quota_remaining") << "/"
            << r.at("quota_limit") << " submissions left today\n"
            << "status: " << r.at("status_url").get<std::string>() << "\n";
      }
      return exit_ok;
    }
    if (quota->parsed()) {
      const auto r = body_json(expect_ok(call(g, "GET", "/api/quota/" + stage, team_credential(g))));
      if (as_json) {
        out << r.dump() << "\n";
      } else {
        out << r.at("remaining") << "/" << r.at("limit") << " submissions left today; resets at "
            << r.at("resets_at_local").get<std::string>() << "\n";
      }
      return exit_ok;
    }
    if (board->parsed()) {
      const auto query = frozen_label.empty() ? std::string() : "&frozen=" + frozen_label;
      if (as_json) {
        const auto r = expect_ok(call(g, "GET", "/api/leaderboard/" + stage + "?format=json" + query, {}));
        out << trimmed(r.body) << "\n";
      } else {
        const auto r = expect_ok(call(g, "GET", "/api/leaderboard/" + stage + "?format=csv" + query, {}));
        out << render_table(r.body);
      }
      return exit_ok;
    }
    if (status->parsed()) {
      const auto r = body_json(
        expect_ok(call(g, "GET", "/api/submissions/" + stage + "/" + submission_id, team_credential(g))));
      if (as_json) {
        out << r.dump() << "\n";
      } else {
        out << "submission " << r.at("submission_id") << ": " << r.at("status").get<std::string>();
        if (r.contains("verification")) {
          out << " (" << r.at("verification").get<std::string>() << ")";
        }
        if (r.contains("format_error")) {
          out << ": " << r.at("format_error").get<std::string>();
        }
        out << "\n";
      }
      return exit_ok;
    }
  } catch (const CliFailure& e) {
    if (as_json) {
      out << json{{"error", e.what()}, {"exit_code", e.code}}.dump() << "\n";
    }
    err << e.what() << "\n";
    return e.code;
  } catch (const Error& e) {
    err << e.what() << "\n";
    return exit_usage;
  }
  return exit_usage;
}

} // namespace arena
