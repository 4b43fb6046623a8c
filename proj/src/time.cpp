#include "arena/time.hpp"

#include "arena/error.hpp"

namespace arena {

namespace {

absl::Time to_absl(Timestamp t)
{
  return absl::FromUnixMillis(t.time_since_epoch().count());
}

Timestamp from_absl(absl::Time t)
{
  return Timestamp{Millis{absl::ToUnixMillis(t)}};
}

} // namespace

Timestamp parse_rfc3339(std::string_view text)
{
  absl::Time parsed;
  std::string err;
  if (!absl::ParseTime(absl::RFC3339_full, std::string(text), &parsed, &err)) {
    throw Error(ErrorKind::parse, "invalid RFC 3339 timestamp '" + std::string(text) + "': " + err);
  }
  return from_absl(parsed);
}

std::string format_rfc3339(Timestamp t)
{
  return absl::FormatTime("%Y-%m-%dT%H:%M:%E*SZ", to_absl(t), absl::UTCTimeZone());
}

Timestamp from_unix_seconds(std::int64_t seconds)
{
  return Timestamp{Millis{seconds * 1000}};
}

Timestamp SystemClock::now() const
{
  return std::chrono::time_point_cast<Millis>(std::chrono::system_clock::now());
}

std::string LocalDate::str() const
{
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02d", year, month, day);
  return buf;
}

bool is_known_zone(const std::string& name)
{
  if (name.empty()) {
    return false;
  }
  absl::TimeZone tz;
  return absl::LoadTimeZone(name, &tz);
}

OfficialZone OfficialZone::load(const std::string& name)
{
  OfficialZone z;
  if (name.empty() || !absl::LoadTimeZone(name, &z.zone_)) {
    throw Error(ErrorKind::validation, "unknown time zone '" + name + "'");
  }
  z.name_ = name;
  return z;
}

LocalDate OfficialZone::local_day(Timestamp t) const
{
  const auto day = absl::ToCivilDay(to_absl(t), zone_);
  return {static_cast<int>(day.year()), day.month(), day.day()};
}

Timestamp OfficialZone::next_day_start(Timestamp t) const
{
  const auto next = absl::ToCivilDay(to_absl(t), zone_) + 1;
  return from_absl(absl::FromCivil(next, zone_));
}

std::string OfficialZone::format_local(Timestamp t) const
{
  return absl::FormatTime("%Y-%m-%dT%H:%M:%E*S%Ez", to_absl(t), zone_);
}

} // namespace arena
