#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

// Flat key=value run configuration. Files hold one pair per line ('#'
// comments allowed); command-line --set pairs override file values. Keys
// outside the known set are rejected up front, and every getter records the
// effective value so a run can dump the fully resolved configuration next
// to its outputs.

namespace fbsr {

class RunConfig {
 public:
  RunConfig() = default;

  /// Throws config_error if the file is unreadable or malformed.
  void load_file(const std::filesystem::path& path);
  /// One "key=value" pair; later calls win.
  void set_pair(const std::string& pair);
  void set(const std::string& key, const std::string& value);
  /// Rejects any key outside the known set, naming the offender.
  void validate_keys() const;

  bool has(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& def) const;
  long get_long(const std::string& key, long def) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t def) const;
  double get_double(const std::string& key, double def) const;
  bool get_bool(const std::string& key, bool def) const;

  /// Every value the getters resolved (explicit or default), sorted.
  void write_resolved(const std::filesystem::path& path) const;

 private:
  std::map<std::string, std::string> values_;
  mutable std::map<std::string, std::string> resolved_;
};

}  // namespace fbsr
