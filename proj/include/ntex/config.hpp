#pragma once

// "key = value" text configuration. Blank lines and lines starting with '#'
// are ignored; later keys override earlier ones.

#include <charconv>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ntex/errors.hpp"

namespace ntex {

class KeyValues {
 public:
  static KeyValues parse(std::istream& in) {
    KeyValues kv;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos || line[first] == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ParseError("expected 'key = value'", line_no);
      const std::string key = trim(line.substr(0, eq));
      if (key.empty()) throw ParseError("empty key", line_no);
      kv.values_[key] = trim(line.substr(eq + 1));
    }
    return kv;
  }

  static KeyValues parse(const std::string& text) {
    std::istringstream in(text);
    return parse(in);
  }

  std::string serialize() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  void set(const std::string& key, double value) { values_[key] = format_double(value); }
  void set(const std::string& key, long long value) { values_[key] = std::to_string(value); }
  void set(const std::string& key, std::size_t value) { values_[key] = std::to_string(value); }
  void set(const std::string& key, int value) { values_[key] = std::to_string(value); }
  void set(const std::string& key, bool value) { values_[key] = value ? "true" : "false"; }
  void set(const std::string& key, const char* value) { values_[key] = value; }

  void merge(const KeyValues& other) {
    for (const auto& [k, v] : other.values_) values_[k] = v;
  }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      std::size_t used = 0;
      const double v = std::stod(it->second, &used);
      if (used != it->second.size()) throw std::invalid_argument(key);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "' is not a number: " + it->second);
    }
  }

  long long get_int(const std::string& key, long long fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      std::size_t used = 0;
      const long long v = std::stoll(it->second, &used);
      if (used != it->second.size()) throw std::invalid_argument(key);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "' is not an integer: " + it->second);
    }
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second == "true" || it->second == "1" || it->second == "on") return true;
    if (it->second == "false" || it->second == "0" || it->second == "off") return false;
    throw ConfigError("config key '" + key + "' is not a boolean: " + it->second);
  }

  std::vector<double> get_list(const std::string& key, const std::vector<double>& fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<double> out;
    std::stringstream ss(it->second);
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        out.push_back(std::stod(item));
      } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' has a non-numeric list entry: " + item);
      }
    }
    return out;
  }

  const std::map<std::string, std::string>& entries() const { return values_; }

  /// Shortest representation that parses back to the same double.
  static std::string format_double(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
};

template <typename Int>
std::string join_list(const std::vector<Int>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) out += (i ? "," : "") + std::to_string(values[i]);
  return out;
}

}  // namespace ntex
