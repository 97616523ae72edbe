#pragma once

#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sketchgrad/common.hpp"

namespace sketchgrad {

// Flat config format: '[section]' headers, 'key = value' pairs, '#' comments.
// Sections may repeat ([method] once per curve). Grammar is documented in
// the README.
struct ConfigEntry {
  std::string key;
  std::string value;
  int line = 0;
};

struct ConfigSection {
  std::string name;
  int line = 0;
  std::vector<ConfigEntry> entries;

  const ConfigEntry* find(const std::string& key) const {
    for (const auto& e : entries)
      if (e.key == key) return &e;
    return nullptr;
  }
  std::string get_str(const std::string& key, const std::string& fallback) const {
    const ConfigEntry* e = find(key);
    return e ? e->value : fallback;
  }
  std::string require_str(const std::string& key) const {
    const ConfigEntry* e = find(key);
    if (!e)
      throw ConfigError("config section [" + name + "] (line " + std::to_string(line) +
                        "): missing required field '" + key + "'");
    return e->value;
  }
  double get_num(const std::string& key, double fallback) const {
    const ConfigEntry* e = find(key);
    if (!e) return fallback;
    return parse_num(*e);
  }
  double require_num(const std::string& key) const {
    const ConfigEntry* e = find(key);
    if (!e)
      throw ConfigError("config section [" + name + "] (line " + std::to_string(line) +
                        "): missing required field '" + key + "'");
    return parse_num(*e);
  }
  long long get_int(const std::string& key, long long fallback) const {
    const ConfigEntry* e = find(key);
    if (!e) return fallback;
    return parse_int(*e);
  }

  static double parse_num(const ConfigEntry& e) {
    try {
      std::size_t pos = 0;
      double v = std::stod(e.value, &pos);
      if (pos != e.value.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config line " + std::to_string(e.line) + ": field '" + e.key +
                        "' is not a number: '" + e.value + "'");
    }
  }
  static long long parse_int(const ConfigEntry& e) {
    try {
      std::size_t pos = 0;
      long long v = std::stoll(e.value, &pos);
      if (pos != e.value.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config line " + std::to_string(e.line) + ": field '" + e.key +
                        "' is not an integer: '" + e.value + "'");
    }
  }
};

struct ConfigFile {
  std::vector<ConfigSection> sections;

  const ConfigSection* first(const std::string& name) const {
    for (const auto& s : sections)
      if (s.name == name) return &s;
    return nullptr;
  }
  std::vector<const ConfigSection*> all(const std::string& name) const {
    std::vector<const ConfigSection*> out;
    for (const auto& s : sections)
      if (s.name == name) out.push_back(&s);
    return out;
  }
};

namespace detail {
inline std::string strip(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}
}  // namespace detail

inline ConfigFile parse_config_text(const std::string& text) {
  ConfigFile cfg;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::size_t hash = raw.find('#');
    if (hash != std::string::npos) raw = raw.substr(0, hash);
    std::string line = detail::strip(raw);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config line " + std::to_string(line_no) +
                          ": unterminated section header");
      ConfigSection s;
      s.name = detail::strip(line.substr(1, line.size() - 2));
      s.line = line_no;
      if (s.name.empty())
        throw ConfigError("config line " + std::to_string(line_no) + ": empty section name");
      cfg.sections.push_back(std::move(s));
      continue;
    }
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": expected 'key = value', got '" + line + "'");
    if (cfg.sections.empty())
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": key/value pair before any [section]");
    ConfigEntry e;
    e.key = detail::strip(line.substr(0, eq));
    e.value = detail::strip(line.substr(eq + 1));
    e.line = line_no;
    if (e.key.empty())
      throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    cfg.sections.back().entries.push_back(std::move(e));
  }
  return cfg;
}

inline ConfigFile parse_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str());
}

inline std::vector<std::uint64_t> parse_seed_list(const std::string& value, int line) {
  std::vector<std::uint64_t> seeds;
  std::string item;
  std::istringstream in(value);
  while (std::getline(in, item, ',')) {
    item = detail::strip(item);
    if (item.empty()) continue;
    try {
      seeds.push_back(std::stoull(item));
    } catch (const std::exception&) {
      throw ConfigError("config line " + std::to_string(line) + ": bad seed '" + item + "'");
    }
  }
  if (seeds.empty())
    throw ConfigError("config line " + std::to_string(line) +
                      ": field 'seeds' must list at least one seed");
  return seeds;
}

}  // namespace sketchgrad
