#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace arena {

// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view bytes);
bool is_sha256_hex(std::string_view text);

std::vector<std::uint8_t> random_bytes(std::size_t n);
std::string base32_encode(std::span<const std::uint8_t> bytes);
std::string hex_encode(std::span<const std::uint8_t> bytes);

bool constant_time_equal(std::string_view a, std::string_view b);

// File helpers shared by every on-disk store.

std::string read_file(const std::filesystem::path& path);

// Writes to a sibling temporary file, fsyncs, then renames over the target so
// readers see either the old or the new content, never a mix.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

// Appends one line and fsyncs before returning.
void append_line_durable(const std::filesystem::path& path, std::string_view line);

} // namespace arena
