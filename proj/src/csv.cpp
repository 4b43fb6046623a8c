#include "arena/csv.hpp"

#include "arena/error.hpp"

namespace arena::csv {

namespace {

std::vector<std::string> split_record(std::string_view line, std::size_t line_no)
{
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  bool after_quote = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
          after_quote = true;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
      after_quote = false;
    } else if (c == '"' && field.empty() && !after_quote) {
      quoted = true;
    } else if (after_quote) {
      throw Error(ErrorKind::parse, "line " + std::to_string(line_no) + ": text after closing quote");
    } else {
      field.push_back(c);
    }
  }
  if (quoted) {
    throw Error(ErrorKind::parse, "line " + std::to_string(line_no) + ": unterminated quote");
  }
  fields.push_back(std::move(field));
  return fields;
}

} // namespace

Table parse(std::string_view text)
{
  Table table;
  std::size_t line_no = 0;
  bool have_header = false;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    auto line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (!line.empty() && line.back() == '\r') {
      line.remove_suffix(1);
    }
    if (line.empty()) {
      continue;
    }
    auto fields = split_record(line, line_no);
    if (!have_header) {
      table.header = std::move(fields);
      have_header = true;
      continue;
    }
    if (fields.size() != table.header.size()) {
      throw Error(ErrorKind::parse, "line " + std::to_string(line_no) + ": expected " +
                                      std::to_string(table.header.size()) + " fields, got " +
                                      std::to_string(fields.size()));
    }
    table.rows.push_back(std::move(fields));
    table.lines.push_back(line_no);
  }
  if (!have_header) {
    throw Error(ErrorKind::parse, "empty CSV document");
  }
  return table;
}

Table parse_with_header(std::string_view text, const std::vector<std::string>& expected)
{
  auto table = parse(text);
  if (table.header != expected) {
    throw Error(ErrorKind::parse, "unexpected CSV header '" + join_row(table.header) +
                                    "', expected '" + join_row(expected) + "'");
  }
  return table;
}

std::string escape(std::string_view field)
{
  if (field.find_first_of(",\"\n\r") == std::string_view::npos) {
    return std::string(field);
  }
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') {
      out.push_back('"');
    }
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

std::string join_row(const std::vector<std::string>& fields)
{
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i != 0) {
      out.push_back(',');
    }
    out += escape(fields[i]);
  }
  return out;
}

} // namespace arena::csv
