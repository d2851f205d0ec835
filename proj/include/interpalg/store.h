#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "interpalg/json_io.h"

namespace interpalg {

// Lowercase hex SHA-256 of `bytes`.
std::string sha256_hex(std::string_view bytes);

// Content-addressed object directory:
//   <root>/objects/<kind>/<sha256 of canonical json>.json
//   <root>/index/truncations/<key>.json  -> {model, stage, dataset, hyper, ref}
//   <root>/index/stages/<model>-<stage>.json -> most recent truncation
// Objects are immutable; writing an existing object is a no-op.
class Store {
 public:
  // Creates the directory layout. Throws IoError when it cannot.
  explicit Store(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }

  std::string put(std::string_view kind, const Json& doc);
  // Throws NotFoundError for an unknown ref and IoError for a corrupt object.
  Json get(std::string_view kind, std::string_view ref) const;
  bool contains(std::string_view kind, std::string_view ref) const;
  std::filesystem::path path_of(std::string_view kind, std::string_view ref) const;

  // Truncated model produced from (model, stage, dataset, hyper).
  void put_truncation(const std::string& model_ref, std::size_t stage,
                      const std::string& dataset_ref, const HeadHyper& hyper,
                      const std::string& truncated_ref, double train_accuracy);
  struct TruncationEntry {
    std::string ref;
    double train_accuracy = 0.0;
  };
  std::optional<TruncationEntry> find_truncation(const std::string& model_ref,
                                                 std::size_t stage,
                                                 const std::string& dataset_ref,
                                                 const HeadHyper& hyper) const;
  // Most recently stored truncation of (model, stage), any dataset.
  std::optional<TruncationEntry> latest_truncation(const std::string& model_ref,
                                                   std::size_t stage) const;

 private:
  std::filesystem::path stage_path(const std::string& model_ref, std::size_t stage) const;

  std::filesystem::path root_;
};

// Default store location: $INTERPALG_STORE, else ./.interpalg-store.
std::filesystem::path default_store_path();

}  // namespace interpalg
