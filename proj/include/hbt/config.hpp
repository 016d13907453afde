#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace hbt {

/// Flat key/value configuration read from a TOML-like text file.
///
/// Supported syntax: `key = value` lines, `[section]` headers that prefix the
/// following keys with `section.`, `#` comments, quoted strings, and flat
/// arrays `[1, 2, 3]`. Later assignments override earlier ones, which is how
/// command-line overrides are layered on top of a file.
class KeyValueConfig {
public:
  static KeyValueConfig parse(const std::string& text);
  static KeyValueConfig load(const std::string& path);

  void set(const std::string& key, const std::string& raw_value);
  /// Applies an override of the form `key=value`.
  void apply_override(const std::string& assignment);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_list(const std::string& key) const;

  const std::map<std::string, std::string>& values() const { return values_; }

private:
  std::map<std::string, std::string> values_; // raw, unquoted values
};

} // namespace hbt
