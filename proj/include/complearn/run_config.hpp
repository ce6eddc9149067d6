#pragma once

// Flat key = value run configuration. The file must declare
// `schema_version = 1`; '#' starts a comment. Command-line flags override
// file values through set().

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "complearn/embedpack.hpp"
#include "complearn/trainer.hpp"

namespace complearn {

inline constexpr int kConfigSchemaVersion = 1;

class RunConfig {
 public:
  static RunConfig parse(const std::string& text, const std::string& source = "<config>");
  static RunConfig load(const std::filesystem::path& path);

  /// Known keys only; throws ConfigError otherwise.
  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const { return values_.contains(key); }
  std::optional<std::string> get(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  /// Throws ConfigError naming the key when absent.
  std::string require(const std::string& key) const;

  TrainConfig train_config() const;
  SyntheticConfig synthetic_config() const;

  /// FNV-1a over the sorted training-relevant key = value lines.
  std::uint64_t training_hash() const;

  std::string to_text() const;
  const std::map<std::string, std::string>& values() const { return values_; }

  static const std::vector<std::string>& known_keys();

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace complearn
