#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace arena {

// Every failure the platform reports carries one of these kinds; the HTTP layer
// maps them onto status codes.
enum class ErrorKind {
  parse,
  validation,
  not_found,
  unauthenticated,
  forbidden,
  conflict,
  stage_closed,
  team_inactive,
  quota_exceeded,
  payload_too_large,
  unprocessable,
  io,
};

inline std::string_view to_string(ErrorKind k)
{
  switch (k) {
  case ErrorKind::parse: return "parse";
  case ErrorKind::validation: return "validation";
  case ErrorKind::not_found: return "not_found";
  case ErrorKind::unauthenticated: return "unauthenticated";
  case ErrorKind::forbidden: return "forbidden";
  case ErrorKind::conflict: return "conflict";
  case ErrorKind::stage_closed: return "stage_closed";
  case ErrorKind::team_inactive: return "team_inactive";
  case ErrorKind::quota_exceeded: return "quota_exceeded";
  case ErrorKind::payload_too_large: return "payload_too_large";
  case ErrorKind::unprocessable: return "unprocessable";
  case ErrorKind::io: return "io";
  }
  return "io";
}

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(message), kind_(kind)
  {
  }

  ErrorKind kind() const noexcept { return kind_; }

private:
  ErrorKind kind_;
};

} // namespace arena
