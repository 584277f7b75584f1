#pragma once

// Feature files (OHFS), their JSON manifests, and the known/unknown split.
//
// OHFS layout, little-endian:
//   magic "OHFS" | version u16 = 1 | dtype u8 = 1 (f32) | reserved u8 |
//   N u64 | d u64 | features N*d f32 row-major | labels N i64
// The manifest lives next to the file as "<path>.manifest.json".

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ohz/common.hpp"

namespace ohz {

enum class SplitRole { id_train, id_test, ood_test, raw };

std::string to_string(SplitRole role);
SplitRole split_role_from_string(const std::string& name);

struct Manifest {
  std::string backbone_id;
  SplitRole split_role = SplitRole::raw;
  std::uint64_t feature_dim = 0;
  std::optional<std::vector<std::string>> class_names;
  std::string source_dataset;
  std::int64_t extraction_seed = 0;

  bool operator==(const Manifest&) const = default;
};

/// Label used for OOD rows whose class is not used.
inline constexpr std::int64_t kUnlabeled = -1;

struct FeatureSet {
  MatrixF features;
  std::vector<std::int64_t> labels;
  Manifest manifest;

  std::size_t rows() const { return static_cast<std::size_t>(features.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(features.cols()); }

  /// Features widened to 64-bit for computation.
  Matrix features_f64() const { return features.cast<double>(); }

  /// Throws FormatError when an invariant does not hold.
  void validate() const;
};

enum class FormatErrc {
  io,
  bad_magic,
  version_mismatch,
  bad_dtype,
  truncated,
  label_count_mismatch,
  dimension_mismatch,
  non_finite,
  bad_manifest,
};

std::string to_string(FormatErrc code);

class FormatError : public Error {
 public:
  FormatError(FormatErrc code, const std::string& what)
      : Error(Category::io, to_string(code) + ": " + what), code_(code) {}

  FormatErrc code() const noexcept { return code_; }

 private:
  FormatErrc code_;
};

/// Writes the OHFS file and its manifest sidecar. Output goes to temporary
/// files that are renamed into place, so a failure leaves nothing behind.
void write_feature_file(const FeatureSet& set, const std::filesystem::path& path);

/// OHFS bytes and manifest JSON text, for callers that stage several
/// outputs together.
std::string encode_feature_file(const FeatureSet& set);
std::string encode_manifest(const Manifest& manifest);

/// Reads an OHFS file. The manifest sidecar is optional; when absent a
/// `raw` manifest with the file's dimension is synthesized.
FeatureSet read_feature_file(const std::filesystem::path& path);

std::filesystem::path manifest_path(const std::filesystem::path& feature_path);

struct SplitSpec {
  std::vector<std::int64_t> known_original_ids;  // ascending
  std::map<std::int64_t, std::int64_t> remap;    // original -> 0..K-1
  std::set<std::int64_t> unknown_original_ids;

  std::size_t known_count() const { return known_original_ids.size(); }
  bool operator==(const SplitSpec&) const = default;
};

/// Known ids are remapped to 0..K-1 in ascending original-id order; every
/// other id in `all_class_ids` is unknown.
SplitSpec build_open_split(const std::set<std::int64_t>& all_class_ids,
                           const std::set<std::int64_t>& known_ids);

/// Known set made of the `k` smallest ids.
SplitSpec build_first_k_split(const std::set<std::int64_t>& all_class_ids, std::size_t k);

/// Rows for one role, in source order. id roles carry remapped labels;
/// ood_test carries kUnlabeled. An empty result adds a warning instead of
/// failing. `role` must not be raw.
FeatureSet select(const FeatureSet& set, const SplitSpec& split, SplitRole role,
                  std::vector<std::string>* warnings = nullptr);

/// Distinct labels present in a set, excluding kUnlabeled.
std::set<std::int64_t> class_ids(const FeatureSet& set);

}  // namespace ohz
