#include "manifest.hpp"

#include <openssl/evp.h>

#include <array>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>

#include "ectfusion/error.hpp"

namespace ectfusion::cli {

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read '" + path.string() + "' for hashing");
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md.data(), &len);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) {
    os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  }
  return os.str();
}

RunManifest::RunManifest(std::string command)
    : command_(std::move(command)), start_(std::chrono::steady_clock::now()) {}

void RunManifest::add_config(const std::string& name, const KeyValueConfig& kv) {
  nlohmann::json obj = nlohmann::json::object();
  for (const auto& k : kv.keys()) obj[k] = kv.get_string(k);
  config_[name] = std::move(obj);
}

void RunManifest::add_input(const std::filesystem::path& path) { inputs_.push_back(path); }

void RunManifest::add_output(const std::filesystem::path& path) { outputs_.push_back(path); }

nlohmann::json RunManifest::to_json() const {
  nlohmann::json j;
  j["command"] = command_;
  j["version"] = kVersion;
  j["arguments"] = arguments_;
  j["seed"] = has_seed_ ? nlohmann::json(seed_) : nlohmann::json(nullptr);
  j["config"] = config_;
  auto files = [](const std::vector<std::filesystem::path>& paths) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& p : paths) arr.push_back({{"path", p.string()}, {"sha256", sha256_file(p)}});
    return arr;
  };
  j["inputs"] = files(inputs_);
  j["outputs"] = files(outputs_);
  j["results"] = results_;
  j["wall_time_seconds"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  return j;
}

}  // namespace ectfusion::cli
