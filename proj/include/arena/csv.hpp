#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace arena::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  // 1-based source line of each row, for error messages.
  std::vector<std::size_t> lines;
};

// RFC 4180 subset: comma separator, double-quote quoting, LF records (a
// trailing CR is tolerated). Throws Error(parse) on malformed quoting or a
// row whose field count differs from the header.
Table parse(std::string_view text);

// Parses and checks that the header matches `expected` exactly.
Table parse_with_header(std::string_view text, const std::vector<std::string>& expected);

std::string escape(std::string_view field);
std::string join_row(const std::vector<std::string>& fields);

} // namespace arena::csv
