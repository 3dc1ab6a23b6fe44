#ifndef EFMCA_CLI_RUN_CONFIG_HPP
#define EFMCA_CLI_RUN_CONFIG_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "efmca/efmca.hpp"

namespace efmca::cli {

/// Bad flags or config values; exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Unreadable or domain-incompatible input data; exit code 3.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum ExitCode : int { kExitOk = 0, kExitUsage = 2, kExitData = 3, kExitCapacity = 4 };

/// Resolved command configuration: profile, then config file, then flags.
/// Every layer is checked against the schema before anything runs.
class RunConfig {
 public:
  RunConfig() : j_(nlohmann::json::object()) {}

  /// Throws UsageError on unknown keys or wrongly typed values.
  static void check(const nlohmann::json& j, const std::string& where);

  void merge(const nlohmann::json& layer, const std::string& where);
  void merge_file(const std::filesystem::path& path);
  /// Resolves `name` as a path or as configs/<name>.json.
  void merge_profile(const std::string& name);

  template <class T>
  void set(const nlohmann::json::json_pointer& ptr, const T& v) {
    j_[ptr] = v;
  }
  bool has(const std::string& ptr) const { return j_.contains(nlohmann::json::json_pointer(ptr)); }

  std::uint64_t seed() const { return get<std::uint64_t>("/seed", 0); }
  std::string str(const std::string& ptr, const std::string& fallback = {}) const {
    return get<std::string>(ptr, fallback);
  }
  std::size_t size(const std::string& ptr, std::size_t fallback) const { return get<std::size_t>(ptr, fallback); }
  double num(const std::string& ptr, double fallback) const { return get<double>(ptr, fallback); }
  bool flag(const std::string& ptr, bool fallback = false) const { return get<bool>(ptr, fallback); }
  std::optional<double> opt_num(const std::string& ptr) const;

  DistKind distribution(const std::string& ptr = "/distribution") const;
  LinkMode link_mode() const;
  InitConfig init() const;
  EvoConfig evo() const;

  const nlohmann::json& json() const { return j_; }
  /// The config without the output location, which never affects results.
  nlohmann::json echo() const;
  /// FNV-1a of the canonical dump of echo().
  std::string hash() const;
  /// {seed, config_hash, version, config} for embedding in outputs.
  nlohmann::json meta() const;

 private:
  template <class T>
  T get(const std::string& ptr, const T& fallback) const {
    const nlohmann::json::json_pointer p(ptr);
    return j_.contains(p) ? j_.at(p).get<T>() : fallback;
  }

  nlohmann::json j_;
};

std::filesystem::path config_dir();

}  // namespace efmca::cli

#endif  // EFMCA_CLI_RUN_CONFIG_HPP
