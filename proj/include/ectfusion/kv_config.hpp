#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ectfusion/error.hpp"

namespace ectfusion {

/// Flat `key = value` text configuration. Blank lines and `#` comments are
/// ignored; list values are comma separated.
class KeyValueConfig {
 public:
  static KeyValueConfig from_string(const std::string& text,
                                    const std::string& source = "<config>") {
    KeyValueConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const std::string t = trim(line);
      if (t.empty()) continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos) {
        throw ConfigError(source + ":" + std::to_string(line_no) +
                          ": expected key = value");
      }
      const std::string key = trim(t.substr(0, eq));
      if (key.empty()) {
        throw ConfigError(source + ":" + std::to_string(line_no) + ": empty key");
      }
      if (cfg.values_.contains(key)) {
        throw ConfigError(source + ": duplicate key '" + key + "'");
      }
      cfg.values_[key] = trim(t.substr(eq + 1));
      cfg.order_.push_back(key);
    }
    cfg.source_ = source;
    return cfg;
  }

  static KeyValueConfig from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return from_string(ss.str(), path);
  }

  bool contains(const std::string& key) const { return values_.contains(key); }
  const std::vector<std::string>& keys() const { return order_; }

  void set(const std::string& key, const std::string& value) {
    if (!values_.contains(key)) order_.push_back(key);
    values_[key] = value;
  }

  std::string get_string(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError(source_ + ": missing key '" + key + "'");
    return it->second;
  }
  std::string get_string(const std::string& key, const std::string& fallback) const {
    return contains(key) ? get_string(key) : fallback;
  }

  double get_double(const std::string& key) const { return to_double(key, get_string(key)); }
  double get_double(const std::string& key, double fallback) const {
    return contains(key) ? get_double(key) : fallback;
  }

  long long get_int(const std::string& key) const {
    const std::string s = get_string(key);
    long long v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
      throw ConfigError(source_ + ": key '" + key + "' is not an integer: '" + s + "'");
    }
    return v;
  }
  long long get_int(const std::string& key, long long fallback) const {
    return contains(key) ? get_int(key) : fallback;
  }

  bool get_bool(const std::string& key, bool fallback) const {
    if (!contains(key)) return fallback;
    const std::string s = get_string(key);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ConfigError(source_ + ": key '" + key + "' is not a boolean: '" + s + "'");
  }

  std::vector<std::string> get_list(const std::string& key) const {
    std::vector<std::string> out;
    const std::string s = get_string(key);
    std::size_t start = 0;
    while (start <= s.size()) {
      const auto pos = s.find(',', start);
      const std::string item =
          trim(s.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
      if (!item.empty()) out.push_back(item);
      if (pos == std::string::npos) break;
      start = pos + 1;
    }
    return out;
  }

  std::vector<double> get_doubles(const std::string& key) const {
    std::vector<double> out;
    for (const auto& item : get_list(key)) out.push_back(to_double(key, item));
    return out;
  }

  /// Rejects keys outside `allowed` so typos do not pass silently.
  void require_all_used(const std::vector<std::string>& allowed) const {
    for (const auto& k : order_) {
      if (std::find(allowed.begin(), allowed.end(), k) == allowed.end()) {
        throw ConfigError(source_ + ": unknown key '" + k + "'");
      }
    }
  }

  std::string to_text() const {
    std::string out;
    for (const auto& k : order_) out += k + " = " + values_.at(k) + "\n";
    return out;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  double to_double(const std::string& key, const std::string& s) const {
    double v = 0.0;
    const char* b = s.data();
    if (!s.empty() && *b == '+') ++b;
    auto [ptr, ec] = std::from_chars(b, s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
      throw ConfigError(source_ + ": key '" + key + "' is not a number: '" + s + "'");
    }
    return v;
  }

  std::map<std::string, std::string> values_;
  std::vector<std::string> order_;
  std::string source_ = "<config>";
};

}  // namespace ectfusion
