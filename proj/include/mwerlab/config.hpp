#pragma once

// key=value settings with typed getters. Later sources override earlier ones;
// every key must be declared, so typos fail loudly with the key named.

#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mwerlab/errors.hpp"

namespace mwerlab {

class KeyValues {
 public:
  KeyValues() = default;
  explicit KeyValues(std::map<std::string, std::string> defaults) : values_(std::move(defaults)) {
    for (const auto& [k, _] : values_) known_.insert(k);
  }

  const std::set<std::string>& known() const { return known_; }
  bool has(const std::string& k) const { return values_.count(k) != 0; }

  void set(const std::string& key, const std::string& value, const std::string& origin = "") {
    if (!known_.count(key))
      throw ConfigError("unknown key '" + key + "'" + (origin.empty() ? "" : " in " + origin), key);
    values_[key] = value;
  }

  /// Lines of key=value; '#' starts a comment; blank lines ignored.
  void merge_text(const std::string& text, const std::string& origin) {
    std::istringstream is(text);
    std::string line;
    int n = 0;
    while (std::getline(is, line)) {
      ++n;
      if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError(origin + ":" + std::to_string(n) + ": expected key=value", trim(line));
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)), origin);
    }
  }

  void merge_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config file " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    merge_text(ss.str(), path);
  }

  /// PREFIX_SOME_KEY overrides some_key for every declared key that has a variable set.
  void merge_env(const std::string& prefix) {
    for (const auto& k : known_) {
      std::string var = prefix;
      for (char c : k) var += (c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
      if (const char* v = std::getenv(var.c_str())) values_[k] = v;
    }
  }

  const std::string& str(const std::string& k) const {
    auto it = values_.find(k);
    if (it == values_.end()) throw ConfigError("missing key '" + k + "'", k);
    return it->second;
  }

  double real(const std::string& k) const {
    const std::string& s = str(k);
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || *end != '\0') throw ConfigError("key '" + k + "': expected a number, got '" + s + "'", k);
    return v;
  }

  long long integer(const std::string& k) const {
    const std::string& s = str(k);
    char* end = nullptr;
    const long long v = std::strtoll(s.c_str(), &end, 10);
    if (s.empty() || *end != '\0') throw ConfigError("key '" + k + "': expected an integer, got '" + s + "'", k);
    return v;
  }

  std::size_t count(const std::string& k) const {
    const long long v = integer(k);
    if (v < 0) throw ConfigError("key '" + k + "': must be >= 0", k);
    return static_cast<std::size_t>(v);
  }

  std::vector<std::string> list(const std::string& k) const {
    std::vector<std::string> out;
    std::istringstream is(str(k));
    for (std::string part; std::getline(is, part, ',');) {
      part = trim(part);
      if (!part.empty()) out.push_back(part);
    }
    return out;
  }

  std::vector<double> real_list(const std::string& k) const {
    std::vector<double> out;
    for (const auto& s : list(k)) {
      char* end = nullptr;
      const double v = std::strtod(s.c_str(), &end);
      if (*end != '\0') throw ConfigError("key '" + k + "': bad number '" + s + "'", k);
      out.push_back(v);
    }
    return out;
  }

  std::string to_text() const {
    std::ostringstream os;
    for (const auto& [k, v] : values_) os << k << "=" << v << "\n";
    return os.str();
  }

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
  }

 private:
  std::map<std::string, std::string> values_;
  std::set<std::string> known_;
};

}  // namespace mwerlab
