#ifndef PRICELAB_MANIFEST_HPP_
#define PRICELAB_MANIFEST_HPP_

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace pricelab {

std::string sha256_hex(std::string_view bytes);
// Throws Error when the file cannot be read.
std::string sha256_file(const std::filesystem::path& p);

// Per-stage provenance record, written as <stage dir>/manifest.json. Holds
// content hashes only (no timestamps), so identical runs give identical
// manifests.
struct Manifest {
  std::string stage;
  nlohmann::json config;
  std::map<std::string, std::string> inputs;   // upstream file -> sha256
  std::map<std::string, std::string> outputs;  // file in stage dir -> sha256
  nlohmann::json details = nlohmann::json::object();

  nlohmann::json to_json() const;
  static Manifest from_json(const nlohmann::json& j);
};

inline constexpr const char* kManifestFile = "manifest.json";

// Hashes `outputs` (relative to `dir`) into the manifest and writes it.
void write_manifest(Manifest m, const std::filesystem::path& dir,
                    const std::vector<std::string>& outputs);
Manifest read_manifest(const std::filesystem::path& dir);

// Re-hashes every output recorded in `dir`'s manifest. Throws Error telling
// the user to rerun `stage` when the manifest is missing or any file changed.
// Returns the verified hashes keyed "<stage>/<file>".
std::map<std::string, std::string> verify_stage(const std::filesystem::path& dir,
                                                std::string_view stage);

}  // namespace pricelab

#endif  // PRICELAB_MANIFEST_HPP_
