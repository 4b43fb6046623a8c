#pragma once

#include "arena/time.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace arena {

class Aggregator;

struct AuditEntry {
  std::uint64_t seq = 0;
  Timestamp at;
  std::string actor;
  std::string action;
  nlohmann::json params;
  // {"ok": true, ...} or {"ok": false, "error": kind, "message": text}
  nlohmann::json result;

  bool ok() const { return result.value("ok", false); }
  nlohmann::json to_json() const;
  static AuditEntry from_json(const nlohmann::json& j);
};

// Append-only admin journal, one JSON object per line. Without a path the
// journal lives in memory.
class AuditLog {
public:
  explicit AuditLog(std::filesystem::path file = {});

  AuditEntry append(Timestamp at, std::string actor, std::string action, nlohmann::json params,
                    nlohmann::json result);
  std::vector<AuditEntry> entries() const;

private:
  std::filesystem::path file_;
  mutable std::mutex mutex_;
  std::vector<AuditEntry> entries_;
};

struct BoardEvent {
  enum class Kind { freeze, twist } kind;
  std::string stage_id;
  std::string label;       // freeze label, or the twist's auto-freeze label
  int version = 0;         // twist target
  std::uint64_t snapshot_id = 0;
  Timestamp at;
  // Creation time of the live board that was frozen, when one was.
  std::optional<Timestamp> board_as_of;

  bool operator==(const BoardEvent&) const = default;
};

// Successful freezes and twists in journal order.
std::vector<BoardEvent> board_events(const std::vector<AuditEntry>& entries);

// Re-applies the journal's freezes and twists to an aggregator built over the
// same submissions and driven by `clock`. Before each event the clock moves to
// the frozen board's creation time (or the event time) and a cycle runs, unless
// that would move the clock backwards. Returns the events as the aggregator reported them.
std::vector<BoardEvent> replay_board_events(const std::vector<AuditEntry>& entries, Aggregator& aggregator,
                                            VirtualClock& clock);

} // namespace arena
