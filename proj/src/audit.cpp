#include "arena/audit.hpp"

#include "arena/aggregator.hpp"
#include "arena/digest.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>

namespace arena {

namespace fs = std::filesystem;
using nlohmann::json;

json AuditEntry::to_json() const
{
  return {{"seq", seq}, {"at", format_rfc3339(at)}, {"actor", actor},
          {"action", action}, {"params", params}, {"result", result}};
}

AuditEntry AuditEntry::from_json(const json& j)
{
  AuditEntry e;
  e.seq = j.at("seq").get<std::uint64_t>();
  e.at = parse_rfc3339(j.at("at").get<std::string>());
  e.actor = j.at("actor").get<std::string>();
  e.action = j.at("action").get<std::string>();
  e.params = j.at("params");
  e.result = j.at("result");
  return e;
}

AuditLog::AuditLog(fs::path file) : file_(std::move(file))
{
  if (file_.empty() || !fs::exists(file_)) {
    return;
  }
  std::ifstream in(file_);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    try {
      entries_.push_back(AuditEntry::from_json(json::parse(line)));
    } catch (const std::exception& e) {
      spdlog::warn("ignoring unreadable audit line: {}", e.what());
    }
  }
}

AuditEntry AuditLog::append(Timestamp at, std::string actor, std::string action, json params, json result)
{
  std::lock_guard lock(mutex_);
  AuditEntry e;
  e.seq = entries_.empty() ? 1 : entries_.back().seq + 1;
  e.at = at;
  e.actor = std::move(actor);
  e.action = std::move(action);
  e.params = std::move(params);
  e.result = std::move(result);
  if (!file_.empty()) {
    append_line_durable(file_, e.to_json().dump());
  }
  entries_.push_back(e);
  return e;
}

std::vector<AuditEntry> AuditLog::entries() const
{
  std::lock_guard lock(mutex_);
  return entries_;
}

std::vector<BoardEvent> board_events(const std::vector<AuditEntry>& entries)
{
  auto id_or_zero = [](const nlohmann::json& j, const char* key) {
    return j.contains(key) && j[key].is_number() ? j[key].get<std::uint64_t>() : std::uint64_t{0};
  };
  std::vector<BoardEvent> out;
  for (const auto& e : entries) {
    if (!e.ok() || (e.action != "freeze" && e.action != "twist")) {
      continue;
    }
    BoardEvent ev;
    ev.stage_id = e.params.at("stage").get<std::string>();
    ev.at = e.at;
    if (e.action == "freeze") {
      ev.kind = BoardEvent::Kind::freeze;
      ev.label = e.params.at("label").get<std::string>();
      ev.snapshot_id = id_or_zero(e.result, "snapshot_id");
    } else {
      ev.kind = BoardEvent::Kind::twist;
      ev.label = e.result.value("freeze_label", "");
      ev.version = e.params.at("version").get<int>();
      ev.snapshot_id = id_or_zero(e.result, "frozen_snapshot_id");
    }
    if (e.result.contains("board_as_of") && e.result["board_as_of"].is_string()) {
      ev.board_as_of = parse_rfc3339(e.result["board_as_of"].get<std::string>());
    }
    out.push_back(std::move(ev));
  }
  return out;
}

std::vector<BoardEvent> replay_board_events(const std::vector<AuditEntry>& entries, Aggregator& aggregator,
                                            VirtualClock& clock)
{
  std::vector<BoardEvent> out;
  std::optional<Timestamp> last;
  for (const auto& ev : board_events(entries)) {
    const auto as_of = ev.board_as_of.value_or(ev.at);
    if (!last || *last <= as_of) {
      clock.set(as_of);
      aggregator.run_cycle();
      last = as_of;
    }
    clock.set(ev.at);
    last = std::max(*last, ev.at);
    auto done = ev;
    if (ev.kind == BoardEvent::Kind::freeze) {
      done.snapshot_id = aggregator.freeze(ev.stage_id, ev.label);
    } else {
      const auto r = aggregator.apply_twist(ev.stage_id, ev.version);
      done.label = r.freeze_label;
      done.snapshot_id = r.frozen_snapshot_id.value_or(0);
    }
    out.push_back(std::move(done));
  }
  return out;
}

} // namespace arena
