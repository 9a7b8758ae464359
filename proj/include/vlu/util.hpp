#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>

namespace spdlog {
class logger;
}

namespace vlu {

std::array<std::uint8_t, 32> sha256(std::string_view data);
std::string to_hex(const std::uint8_t* data, std::size_t size);
std::string sha256_hex(std::string_view data);
std::string base64_encode(std::string_view data);

std::string read_file(const std::filesystem::path& path);
/// Writes to a sibling temp file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view data);

/// Current UTC time as ISO-8601, or SOURCE_DATE_EPOCH when set.
std::string utc_timestamp();

std::string trim(std::string_view s);
/// Number of UTF-8 code points.
std::size_t utf8_length(std::string_view s);
/// Shortest round-trip decimal, always with a fractional part ("1.0", "0.6", "-40.0").
std::string format_degree(double value);
/// Replaces every "{name}" in the template.
std::string substitute(std::string_view tmpl, std::string_view name, std::string_view value);

/// Library logger, writes to stderr. Level from VLU_LOG_LEVEL (default "warn").
spdlog::logger& log();

}  // namespace vlu
