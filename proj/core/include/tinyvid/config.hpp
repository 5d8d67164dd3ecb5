// Copyright 2026 The tinyvid Authors
// SPDX-License-Identifier: Apache-2.0

// Flat run configuration: namespaced "module.key = value" pairs read from a
// text file plus command-line overrides. Only registered keys are accepted.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace tinyvid {

class Config {
 public:
  /// Every registered key with its default value.
  static Config defaults();

  /// Lines of "key = value"; '#' starts a comment, blank lines are skipped.
  /// ConfigError names the line of an unknown key or malformed entry.
  void load_text(std::istream& in, const std::string& source = "<config>");
  void load_file(const std::string& path);
  /// "key=value" as given to --set.
  void apply_override(const std::string& assignment);
  void set(const std::string& key, const std::string& value);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& get(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  /// Comma-separated list; empty string gives an empty list.
  std::vector<std::int64_t> get_ints(const std::string& key) const;
  std::vector<double> get_doubles(const std::string& key) const;

  /// Key-values under "prefix." (prefix included in the keys).
  std::map<std::string, std::string> section(const std::string& prefix) const;
  const std::map<std::string, std::string>& values() const { return values_; }

  /// Sorted "key = value" lines.
  void write(std::ostream& out) const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace tinyvid
