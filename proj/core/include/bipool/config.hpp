#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "bipool/tensor.hpp"

namespace bipool {

/// Line-oriented `key = value` configuration; '#' starts a comment. Keys are
/// validated against an allow-list before any work starts.
class KvConfig {
 public:
  static KvConfig parse(const std::string& text, const std::string& origin = "<config>");
  static KvConfig parse_file(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  std::string get_string(const std::string& key, const std::string& fallback) const;
  std::string require_string(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  long get_int(const std::string& key, long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_double_list(const std::string& key,
                                      std::vector<double> fallback) const;
  std::vector<std::string> get_string_list(const std::string& key) const;

  /// Throws ConfigError naming every key outside the allowed set.
  void reject_unknown(const std::set<std::string>& allowed) const;

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  const std::map<std::string, std::string>& values() const { return values_; }
  std::string to_text() const;

 private:
  std::map<std::string, std::string> values_;
  std::string origin_;
};

}  // namespace bipool
