#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "ectfusion/kv_config.hpp"

namespace ectfusion::cli {

inline constexpr const char* kVersion = "0.1.0";

/// Hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

/// Record of one command invocation, written as manifest.json next to the
/// outputs.
class RunManifest {
 public:
  explicit RunManifest(std::string command);

  void set_seed(std::uint64_t seed) { seed_ = seed; has_seed_ = true; }
  void add_argument(const std::string& arg) { arguments_.push_back(arg); }
  void add_config(const std::string& name, const KeyValueConfig& kv);
  void add_input(const std::filesystem::path& path);
  void add_output(const std::filesystem::path& path);
  void set_result(const std::string& key, nlohmann::json value) { results_[key] = std::move(value); }

  const std::vector<std::filesystem::path>& outputs() const { return outputs_; }

  /// Digests every listed file; wall time is measured from construction.
  nlohmann::json to_json() const;

 private:
  std::string command_;
  std::chrono::steady_clock::time_point start_;
  std::uint64_t seed_ = 0;
  bool has_seed_ = false;
  std::vector<std::string> arguments_;
  nlohmann::json config_ = nlohmann::json::object();
  std::vector<std::filesystem::path> inputs_;
  std::vector<std::filesystem::path> outputs_;
  nlohmann::json results_ = nlohmann::json::object();
};

}  // namespace ectfusion::cli
