#pragma once

#include <atomic>
#include <chrono>
#include <string>
#include <string_view>

#include <absl/time/time.h>

namespace arena {

using Millis = std::chrono::milliseconds;
using Seconds = std::chrono::seconds;
// All internal instants are UTC with millisecond resolution.
using Timestamp = std::chrono::sys_time<Millis>;

Timestamp parse_rfc3339(std::string_view text);
// UTC, "Z" suffix; fractional seconds only when non-zero.
std::string format_rfc3339(Timestamp t);

Timestamp from_unix_seconds(std::int64_t seconds);

class Clock {
public:
  virtual ~Clock() = default;
  virtual Timestamp now() const = 0;
};

class SystemClock final : public Clock {
public:
  Timestamp now() const override;
};

// Virtual time for tests and replays. Thread-safe.
class VirtualClock final : public Clock {
public:
  explicit VirtualClock(Timestamp start) : now_(start.time_since_epoch().count()) {}

  Timestamp now() const override { return Timestamp{Millis{now_.load()}}; }
  void set(Timestamp t) { now_.store(t.time_since_epoch().count()); }
  void advance(Millis d) { now_.fetch_add(d.count()); }

private:
  std::atomic<std::int64_t> now_;
};

struct LocalDate {
  int year = 0;
  int month = 0;
  int day = 0;

  auto operator<=>(const LocalDate&) const = default;
  std::string str() const;
};

// The competition's official time zone. Only day-boundary computations and
// display go through it; everything else stays in UTC.
class OfficialZone {
public:
  static OfficialZone load(const std::string& name);

  const std::string& name() const { return name_; }
  LocalDate local_day(Timestamp t) const;
  // First instant of the local day following the one containing t.
  Timestamp next_day_start(Timestamp t) const;
  // RFC 3339 with the zone's UTC offset.
  std::string format_local(Timestamp t) const;

private:
  std::string name_;
  absl::TimeZone zone_;
};

bool is_known_zone(const std::string& name);

} // namespace arena
