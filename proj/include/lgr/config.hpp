#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace lgr {

// Plain-text configuration: "key = value" lines, '#' comments, optional
// "[section]" headers (used by ablation plans).

struct ConfigEntry {
  std::string key;
  std::string value;
  int line = 0;
};

struct ConfigSection {
  std::string name;  // empty for entries before the first header
  int line = 0;
  std::vector<ConfigEntry> entries;
};

/// Throws ConfigError on lines that are neither comments, headers nor key = value.
std::vector<ConfigSection> parse_config_sections(const std::string& text);
/// Like parse_config_sections but rejects section headers.
std::vector<ConfigEntry> parse_config(const std::string& text);
std::string read_text_file(const std::string& path);

// Value conversions; each throws ConfigError naming the key.
std::size_t parse_size(const std::string& key, const std::string& value);
std::uint64_t parse_u64(const std::string& key, const std::string& value);
double parse_double(const std::string& key, const std::string& value);
bool parse_bool(const std::string& key, const std::string& value);
std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& value);

std::string format_double(double v);
std::string format_size_list(const std::vector<std::size_t>& v);

}  // namespace lgr
