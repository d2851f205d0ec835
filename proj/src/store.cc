#include "interpalg/store.h"

#include <openssl/evp.h>

#include <array>
#include <cstdlib>
#include <system_error>

#include "interpalg/error.h"

namespace interpalg {

namespace fs = std::filesystem;

std::string sha256_hex(std::string_view bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw IoError("SHA-256 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[md[i] >> 4]);
    out.push_back(kHex[md[i] & 0xf]);
  }
  return out;
}

namespace {

bool valid_component(std::string_view s) {
  if (s.empty() || s.size() > 128) return false;
  for (char c : s) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '-' || c == '_';
    if (!ok) return false;
  }
  return true;
}

void require_component(std::string_view s, const char* what) {
  if (!valid_component(s)) {
    throw NotFoundError(std::string(what) + " '" + std::string(s) + "' is not a valid store ref");
  }
}

Json truncation_key(const std::string& model_ref, std::size_t stage,
                    const std::string& dataset_ref, const HeadHyper& hyper) {
  return {{"model", model_ref}, {"stage", stage}, {"dataset", dataset_ref},
          {"hyper", hyper_to_json(hyper)}};
}

}  // namespace

Store::Store(fs::path root) : root_(std::move(root)) {
  std::error_code ec;
  fs::create_directories(root_ / "objects", ec);
  if (!ec) fs::create_directories(root_ / "index" / "truncations", ec);
  if (!ec) fs::create_directories(root_ / "index" / "stages", ec);
  if (ec) throw IoError("cannot create store at " + root_.string() + ": " + ec.message());
}

fs::path Store::path_of(std::string_view kind, std::string_view ref) const {
  require_component(kind, "kind");
  require_component(ref, "ref");
  return root_ / "objects" / std::string(kind) / (std::string(ref) + ".json");
}

std::string Store::put(std::string_view kind, const Json& doc) {
  const std::string ref = sha256_hex(canonical(doc));
  const fs::path path = path_of(kind, ref);
  std::error_code ec;
  if (fs::exists(path, ec)) return ref;
  fs::create_directories(path.parent_path(), ec);
  if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
  write_json_file(path, doc);
  return ref;
}

bool Store::contains(std::string_view kind, std::string_view ref) const {
  if (!valid_component(kind) || !valid_component(ref)) return false;
  std::error_code ec;
  return fs::exists(path_of(kind, ref), ec);
}

Json Store::get(std::string_view kind, std::string_view ref) const {
  if (!contains(kind, ref)) {
    throw NotFoundError(std::string(kind) + " '" + std::string(ref) + "' is not in the store");
  }
  return read_json_file(path_of(kind, ref));
}

void Store::put_truncation(const std::string& model_ref, std::size_t stage,
                           const std::string& dataset_ref, const HeadHyper& hyper,
                           const std::string& truncated_ref, double train_accuracy) {
  Json key = truncation_key(model_ref, stage, dataset_ref, hyper);
  const fs::path path = root_ / "index" / "truncations" / (sha256_hex(canonical(key)) + ".json");
  key["ref"] = truncated_ref;
  key["train_accuracy"] = train_accuracy;
  write_json_file(path, key);
  write_json_file(stage_path(model_ref, stage), key);
}

fs::path Store::stage_path(const std::string& model_ref, std::size_t stage) const {
  require_component(model_ref, "model ref");
  return root_ / "index" / "stages" / (model_ref + "-" + std::to_string(stage) + ".json");
}

std::optional<Store::TruncationEntry> Store::latest_truncation(const std::string& model_ref,
                                                               std::size_t stage) const {
  const fs::path path = stage_path(model_ref, stage);
  std::error_code ec;
  if (!fs::exists(path, ec)) return std::nullopt;
  const Json j = read_json_file(path);
  return TruncationEntry{j.at("ref").get<std::string>(), j.value("train_accuracy", 0.0)};
}

std::optional<Store::TruncationEntry> Store::find_truncation(const std::string& model_ref,
                                                             std::size_t stage,
                                                             const std::string& dataset_ref,
                                                             const HeadHyper& hyper) const {
  const Json key = truncation_key(model_ref, stage, dataset_ref, hyper);
  const fs::path path = root_ / "index" / "truncations" / (sha256_hex(canonical(key)) + ".json");
  std::error_code ec;
  if (!fs::exists(path, ec)) return std::nullopt;
  const Json j = read_json_file(path);
  return TruncationEntry{j.at("ref").get<std::string>(), j.value("train_accuracy", 0.0)};
}

fs::path default_store_path() {
  if (const char* env = std::getenv("INTERPALG_STORE"); env != nullptr && *env != '\0') {
    return env;
  }
  return ".interpalg-store";
}

}  // namespace interpalg
