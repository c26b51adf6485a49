#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace neon::cli {

std::string sha256_file(const std::filesystem::path& path);
std::string utc_now();

/// Record of one command run: arguments, seeds, inputs and outputs with
/// their SHA-256 digests.
class RunManifest {
 public:
  RunManifest(std::string command, std::vector<std::string> argv);

  void set(const std::string& key, nlohmann::json value) { extra_[key] = std::move(value); }
  void input(const std::string& name, const std::filesystem::path& path);
  void output(const std::string& name, const std::filesystem::path& path);
  void write(const std::filesystem::path& path);

 private:
  std::string command_;
  std::vector<std::string> argv_;
  std::string started_at_;
  nlohmann::json inputs_ = nlohmann::json::object();
  nlohmann::json outputs_ = nlohmann::json::object();
  nlohmann::json extra_ = nlohmann::json::object();
};

}  // namespace neon::cli
