#include "pricelab/manifest.hpp"

#include <openssl/evp.h>

#include <array>
#include <fstream>
#include <memory>

#include "pricelab/error.hpp"

namespace pricelab {

namespace {

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new(), EVP_MD_CTX_free) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) {
      throw Error("sha256: digest initialization failed");
    }
  }
  void update(const char* data, std::size_t n) {
    if (EVP_DigestUpdate(ctx_.get(), data, n) != 1) throw Error("sha256: update failed");
  }
  std::string hex() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx_.get(), md.data(), &len) != 1) {
      throw Error("sha256: finalization failed");
    }
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
      out += kDigits[md[i] >> 4];
      out += kDigits[md[i] & 0xf];
    }
    return out;
  }

 private:
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

}  // namespace

std::string sha256_hex(std::string_view bytes) {
  Sha256 h;
  h.update(bytes.data(), bytes.size());
  return h.hex();
}

std::string sha256_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot read " + p.string());
  Sha256 h;
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  return h.hex();
}

nlohmann::json Manifest::to_json() const {
  return {{"stage", stage},
          {"config", config},
          {"inputs", inputs},
          {"outputs", outputs},
          {"details", details}};
}

Manifest Manifest::from_json(const nlohmann::json& j) {
  Manifest m;
  m.stage = j.at("stage").get<std::string>();
  m.config = j.value("config", nlohmann::json::object());
  m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
  m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
  m.details = j.value("details", nlohmann::json::object());
  return m;
}

void write_manifest(Manifest m, const std::filesystem::path& dir,
                    const std::vector<std::string>& outputs) {
  for (const auto& f : outputs) m.outputs[f] = sha256_file(dir / f);
  std::ofstream out(dir / kManifestFile);
  if (!out) throw Error("cannot write " + (dir / kManifestFile).string());
  out << m.to_json().dump(2) << '\n';
}

Manifest read_manifest(const std::filesystem::path& dir) {
  const auto p = dir / kManifestFile;
  std::ifstream in(p);
  if (!in) throw Error("missing manifest " + p.string());
  try {
    return Manifest::from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("manifest " + p.string() + ": " + e.what());
  }
}

std::map<std::string, std::string> verify_stage(const std::filesystem::path& dir,
                                                std::string_view stage) {
  const std::string rerun = "; rerun `pricelab " + std::string(stage) + "`";
  if (!std::filesystem::exists(dir / kManifestFile)) {
    throw Error("upstream stage '" + std::string(stage) + "' has no manifest in " +
                dir.string() + rerun);
  }
  const Manifest m = read_manifest(dir);
  std::map<std::string, std::string> out;
  for (const auto& [file, hash] : m.outputs) {
    const auto p = dir / file;
    if (!std::filesystem::exists(p)) {
      throw Error("upstream artifact " + p.string() + " is missing" + rerun);
    }
    if (sha256_file(p) != hash) {
      throw Error("stale upstream artifact " + p.string() +
                  " (content hash differs from its manifest)" + rerun);
    }
    out[std::string(stage) + "/" + file] = hash;
  }
  return out;
}

}  // namespace pricelab
