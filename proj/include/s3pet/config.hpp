#pragma once

#include <map>
#include <string>
#include <vector>

#include "s3pet/common.hpp"

namespace s3pet {

/// Flat `key = value` configuration with a fixed key registry. Unknown keys
/// are rejected, `#` lines are comments, later keys override earlier ones,
/// absent keys fall back to defaults.
class Config {
 public:
  enum class Type { integer, number, text, number_list };

  struct KeySpec {
    std::string name;
    Type type;
    std::string default_value;
    std::string doc;
  };

  static const std::vector<KeySpec>& known_keys();

  /// All defaults, no file.
  static Config defaults();

  /// Defaults overlaid with the file's assignments.
  static Config parse_file(const std::string& path);

  /// Parses from already-loaded text (line numbers refer to it).
  static Config parse_text(const std::string& text, const std::string& origin);

  long long get_int(const std::string& key) const;
  double get_num(const std::string& key) const;
  const std::string& get_str(const std::string& key) const;
  std::vector<double> get_list(const std::string& key) const;

  /// Canonical `key = value` serialization of every key, sorted.
  std::string canonical() const;
  std::string hash() const;

 private:
  const KeySpec& spec(const std::string& key) const;
  void set(const std::string& key, const std::string& raw, const std::string& origin,
           int line);
  std::map<std::string, std::string> values_;
};

}  // namespace s3pet
