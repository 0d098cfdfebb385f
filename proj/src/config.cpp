#include "lgr/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "lgr/errors.hpp"

namespace lgr {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* what) {
  throw ConfigError("config key '" + key + "': expected " + what + ", got '" + value + "'");
}

}  // namespace

std::vector<ConfigSection> parse_config_sections(const std::string& text) {
  std::vector<ConfigSection> sections(1);
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) {
        throw ConfigError("config line " + std::to_string(line_no) + ": malformed section header '" + line + "'");
      }
      sections.push_back({trim(line.substr(1, line.size() - 2)), line_no, {}});
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value', got '" + line + "'");
    }
    ConfigEntry e{trim(line.substr(0, eq)), trim(line.substr(eq + 1)), line_no};
    if (e.key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    sections.back().entries.push_back(std::move(e));
  }
  return sections;
}

std::vector<ConfigEntry> parse_config(const std::string& text) {
  auto sections = parse_config_sections(text);
  if (sections.size() > 1) {
    throw ConfigError("config line " + std::to_string(sections[1].line) + ": sections are only allowed in ablation plans");
  }
  return std::move(sections.front().entries);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t parse_size(const std::string& key, const std::string& value) {
  return static_cast<std::size_t>(parse_u64(key, value));
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  if (value.empty() || value.front() == '-') bad_value(key, value, "a non-negative integer");
  try {
    std::size_t used = 0;
    const auto v = std::stoull(value, &used);
    if (used != value.size()) bad_value(key, value, "a non-negative integer");
    return v;
  } catch (const std::logic_error&) {
    bad_value(key, value, "a non-negative integer");
  }
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size() || !std::isfinite(v)) bad_value(key, value, "a finite number");
    return v;
  } catch (const std::logic_error&) {
    bad_value(key, value, "a finite number");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  bad_value(key, value, "true or false");
}

std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& value) {
  std::vector<std::size_t> out;
  std::istringstream in(value);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(parse_size(key, trim(item)));
  if (out.empty()) bad_value(key, value, "a comma-separated list of integers");
  return out;
}

std::string format_double(double v) {
  // Shortest text that parses back to the same double.
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string format_size_list(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

}  // namespace lgr
