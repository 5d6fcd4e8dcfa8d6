#pragma once

// Declarative key = value configuration files.
//
//   # comment
//   key = value
//   list_key = [a, b, c]
//
// Keys may contain dots for grouping. Later assignments override earlier ones.

#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gue/core.hpp"

namespace gue {

class ConfigFile {
 public:
  static ConfigFile parse(std::istream& in, const std::string& source = "<config>") {
    ConfigFile cfg;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw Error(ErrorCode::config_error, source + ":" + std::to_string(lineno) + ": expected key = value");
      }
      const std::string key = trim(line.substr(0, eq));
      std::string value = trim(line.substr(eq + 1));
      if (key.empty()) throw Error(ErrorCode::config_error, source + ":" + std::to_string(lineno) + ": empty key");
      std::vector<std::string> items;
      if (!value.empty() && value.front() == '[') {
        if (value.back() != ']') {
          throw Error(ErrorCode::config_error, source + ":" + std::to_string(lineno) + ": unterminated list");
        }
        std::stringstream ss(value.substr(1, value.size() - 2));
        std::string item;
        while (std::getline(ss, item, ',')) {
          item = trim(item);
          if (!item.empty()) items.push_back(item);
        }
        cfg.lists_.insert(key);
      } else {
        items.push_back(value);
        cfg.lists_.erase(key);
      }
      cfg.values_[key] = std::move(items);
    }
    return cfg;
  }

  static ConfigFile parse_string(const std::string& text) {
    std::istringstream in(text);
    return parse(in);
  }

  static ConfigFile load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::io_error, "cannot open config file " + path);
    return parse(in, path);
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::vector<std::string> keys() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_) out.push_back(k);
    return out;
  }

  /// Throws one error naming every key outside `allowed`.
  void require_known(const std::set<std::string>& allowed) const {
    std::vector<std::string> bad;
    for (const auto& [k, v] : values_) {
      if (!allowed.count(k)) bad.push_back(k);
    }
    if (!bad.empty()) throw Error(ErrorCode::config_error, "unknown config keys: " + join(bad));
  }

  void require(const std::vector<std::string>& keys) const {
    std::vector<std::string> missing;
    for (const auto& k : keys) {
      if (!has(k)) missing.push_back(k);
    }
    if (!missing.empty()) throw Error(ErrorCode::config_error, "missing config keys: " + join(missing));
  }

  std::string get_string(const std::string& key, const std::string& fallback = "") const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (lists_.count(key) || it->second.size() != 1) {
      throw Error(ErrorCode::config_error, "config key '" + key + "' must be a single value");
    }
    return it->second.front();
  }

  double get_double(const std::string& key, double fallback) const {
    if (!has(key)) return fallback;
    return to_double(key, get_string(key));
  }

  std::size_t get_size(const std::string& key, std::size_t fallback) const {
    if (!has(key)) return fallback;
    const std::string s = get_string(key);
    std::size_t v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) {
      throw Error(ErrorCode::config_error, "config key '" + key + "' expects a nonnegative integer, got '" + s + "'");
    }
    return v;
  }

  std::vector<std::string> get_list(const std::string& key) const {
    const auto it = values_.find(key);
    return it == values_.end() ? std::vector<std::string>{} : it->second;
  }

  std::vector<double> get_doubles(const std::string& key) const {
    std::vector<double> out;
    for (const auto& s : get_list(key)) out.push_back(to_double(key, s));
    return out;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  static std::string join(const std::vector<std::string>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + v[i];
    return out;
  }

  static double to_double(const std::string& key, const std::string& s) {
    try {
      std::size_t pos = 0;
      const double v = std::stod(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw Error(ErrorCode::config_error, "config key '" + key + "' expects a number, got '" + s + "'");
    }
  }

  std::map<std::string, std::vector<std::string>> values_;
  std::set<std::string> lists_;
};

}  // namespace gue
