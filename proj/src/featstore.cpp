#include "ohz/featstore.hpp"

#include <cmath>
#include <json.hpp>

#include "ohz/io.hpp"

namespace ohz {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'O', 'H', 'F', 'S'};
constexpr std::uint16_t kVersion = 1;
constexpr std::uint8_t kDtypeF32 = 1;
constexpr std::size_t kHeaderBytes = 4 + 2 + 1 + 1 + 8 + 8;

json manifest_to_json(const Manifest& m) {
  json j;
  j["backbone_id"] = m.backbone_id;
  j["split_role"] = to_string(m.split_role);
  j["feature_dim"] = m.feature_dim;
  j["class_names"] = m.class_names ? json(*m.class_names) : json(nullptr);
  j["source_dataset"] = m.source_dataset;
  j["extraction_seed"] = m.extraction_seed;
  return j;
}

Manifest manifest_from_json(const json& j) {
  Manifest m;
  try {
    m.backbone_id = j.value("backbone_id", std::string{});
    m.split_role = split_role_from_string(j.value("split_role", std::string{"raw"}));
    m.feature_dim = j.at("feature_dim").get<std::uint64_t>();
    if (j.contains("class_names") && !j["class_names"].is_null()) {
      m.class_names = j["class_names"].get<std::vector<std::string>>();
    }
    m.source_dataset = j.value("source_dataset", std::string{});
    m.extraction_seed = j.value("extraction_seed", std::int64_t{0});
  } catch (const json::exception& e) {
    throw FormatError(FormatErrc::bad_manifest, e.what());
  } catch (const UsageError& e) {
    throw FormatError(FormatErrc::bad_manifest, e.what());
  }
  return m;
}

}  // namespace

std::string to_string(SplitRole role) {
  switch (role) {
    case SplitRole::id_train: return "id_train";
    case SplitRole::id_test: return "id_test";
    case SplitRole::ood_test: return "ood_test";
    case SplitRole::raw: return "raw";
  }
  return "raw";
}

SplitRole split_role_from_string(const std::string& name) {
  if (name == "id_train") return SplitRole::id_train;
  if (name == "id_test") return SplitRole::id_test;
  if (name == "ood_test") return SplitRole::ood_test;
  if (name == "raw") return SplitRole::raw;
  throw UsageError("unknown split role: " + name);
}

std::string to_string(FormatErrc code) {
  switch (code) {
    case FormatErrc::io: return "io error";
    case FormatErrc::bad_magic: return "bad magic";
    case FormatErrc::version_mismatch: return "version mismatch";
    case FormatErrc::bad_dtype: return "unsupported dtype";
    case FormatErrc::truncated: return "truncated payload";
    case FormatErrc::label_count_mismatch: return "label count mismatch";
    case FormatErrc::dimension_mismatch: return "dimension mismatch";
    case FormatErrc::non_finite: return "non-finite feature";
    case FormatErrc::bad_manifest: return "bad manifest";
  }
  return "format error";
}

void FeatureSet::validate() const {
  if (features.cols() < 1) {
    throw FormatError(FormatErrc::dimension_mismatch, "feature dimension must be >= 1");
  }
  if (labels.size() != rows()) {
    throw FormatError(FormatErrc::label_count_mismatch,
                      std::to_string(labels.size()) + " labels for " +
                          std::to_string(rows()) + " rows");
  }
  if (manifest.feature_dim != dim()) {
    throw FormatError(FormatErrc::dimension_mismatch,
                      "manifest feature_dim " + std::to_string(manifest.feature_dim) +
                          " != matrix width " + std::to_string(dim()));
  }
  if (!features.allFinite()) {
    throw FormatError(FormatErrc::non_finite, "features contain NaN or infinity");
  }
}

fs::path manifest_path(const fs::path& feature_path) {
  fs::path p = feature_path;
  p += ".manifest.json";
  return p;
}

std::string encode_feature_file(const FeatureSet& set) {
  set.validate();
  std::string bytes;
  bytes.reserve(kHeaderBytes + set.rows() * set.dim() * 4 + set.rows() * 8);
  bytes.append(kMagic, 4);
  io::put_u16(bytes, kVersion);
  io::put_u8(bytes, kDtypeF32);
  io::put_u8(bytes, 0);
  io::put_u64(bytes, set.rows());
  io::put_u64(bytes, set.dim());
  const float* data = set.features.data();
  for (Eigen::Index i = 0; i < set.features.size(); ++i) io::put_f32(bytes, data[i]);
  for (std::int64_t label : set.labels) io::put_i64(bytes, label);
  return bytes;
}

std::string encode_manifest(const Manifest& manifest) {
  return manifest_to_json(manifest).dump(2) + "\n";
}

void write_feature_file(const FeatureSet& set, const fs::path& path) {
  const std::string bytes = encode_feature_file(set);
  io::StagedOutputs out;
  try {
    out.stage(path, bytes);
    out.stage(manifest_path(path), encode_manifest(set.manifest));
    out.commit();
  } catch (const fs::filesystem_error& e) {
    throw FormatError(FormatErrc::io, e.what());
  } catch (const IoError& e) {
    throw FormatError(FormatErrc::io, e.what());
  }
}

FeatureSet read_feature_file(const fs::path& path) {
  std::string bytes;
  try {
    bytes = io::read_file(path);
  } catch (const IoError& e) {
    throw FormatError(FormatErrc::io, e.what());
  }

  if (bytes.size() < 4 || std::string_view(bytes.data(), 4) != std::string_view(kMagic, 4)) {
    throw FormatError(FormatErrc::bad_magic, path.string());
  }
  if (bytes.size() < kHeaderBytes) {
    throw FormatError(FormatErrc::truncated, "header shorter than " +
                                                 std::to_string(kHeaderBytes) + " bytes");
  }
  io::ByteReader in(bytes);
  in.bytes(4);
  const std::uint16_t version = in.u16();
  if (version != kVersion) {
    throw FormatError(FormatErrc::version_mismatch, "file version " + std::to_string(version));
  }
  const std::uint8_t dtype = in.u8();
  if (dtype != kDtypeF32) {
    throw FormatError(FormatErrc::bad_dtype, "dtype code " + std::to_string(dtype));
  }
  in.u8();
  const std::uint64_t n = in.u64();
  const std::uint64_t d = in.u64();
  if (d < 1) throw FormatError(FormatErrc::dimension_mismatch, "feature dimension is 0");

  // Guard the multiplication before trusting header values.
  if (n > in.remaining() / 4 / d) {
    throw FormatError(FormatErrc::truncated, "matrix payload shorter than N*d");
  }
  const std::uint64_t matrix_bytes = n * d * 4;
  const std::uint64_t label_bytes = in.remaining() - matrix_bytes;
  if (label_bytes != n * 8) {
    if (label_bytes % 8 == 0) {
      throw FormatError(FormatErrc::label_count_mismatch,
                        std::to_string(label_bytes / 8) + " labels for " + std::to_string(n) +
                            " rows");
    }
    throw FormatError(FormatErrc::truncated, "label payload has a partial entry");
  }

  FeatureSet set;
  set.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  float* data = set.features.data();
  for (std::uint64_t i = 0; i < n * d; ++i) data[i] = in.f32();
  set.labels.resize(n);
  for (std::uint64_t i = 0; i < n; ++i) set.labels[i] = in.i64();

  const fs::path mpath = manifest_path(path);
  if (fs::exists(mpath)) {
    json j;
    try {
      j = json::parse(io::read_file(mpath));
    } catch (const json::exception& e) {
      throw FormatError(FormatErrc::bad_manifest, e.what());
    }
    set.manifest = manifest_from_json(j);
  } else {
    set.manifest.feature_dim = d;
  }
  set.validate();
  return set;
}

SplitSpec build_open_split(const std::set<std::int64_t>& all_class_ids,
                           const std::set<std::int64_t>& known_ids) {
  if (known_ids.empty()) throw UsageError("known class set is empty");
  SplitSpec split;
  for (std::int64_t id : known_ids) {
    if (!all_class_ids.contains(id)) {
      throw UsageError("known class " + std::to_string(id) + " is not in the dataset");
    }
    split.remap.emplace(id, static_cast<std::int64_t>(split.known_original_ids.size()));
    split.known_original_ids.push_back(id);
  }
  for (std::int64_t id : all_class_ids) {
    if (!known_ids.contains(id)) split.unknown_original_ids.insert(id);
  }
  return split;
}

SplitSpec build_first_k_split(const std::set<std::int64_t>& all_class_ids, std::size_t k) {
  if (k == 0 || k > all_class_ids.size()) {
    throw UsageError("known class count " + std::to_string(k) + " outside [1, " +
                     std::to_string(all_class_ids.size()) + "]");
  }
  std::set<std::int64_t> known;
  for (auto it = all_class_ids.begin(); known.size() < k; ++it) known.insert(*it);
  return build_open_split(all_class_ids, known);
}

FeatureSet select(const FeatureSet& set, const SplitSpec& split, SplitRole role,
                  std::vector<std::string>* warnings) {
  if (role == SplitRole::raw) throw UsageError("select: role must be id_train, id_test or ood_test");
  const bool want_known = role != SplitRole::ood_test;

  std::vector<Eigen::Index> rows;
  std::vector<std::int64_t> labels;
  for (std::size_t i = 0; i < set.rows(); ++i) {
    const std::int64_t label = set.labels[i];
    const auto known = split.remap.find(label);
    if (known != split.remap.end()) {
      if (want_known) {
        rows.push_back(static_cast<Eigen::Index>(i));
        labels.push_back(known->second);
      }
    } else if (label == kUnlabeled || split.unknown_original_ids.contains(label)) {
      if (!want_known) {
        rows.push_back(static_cast<Eigen::Index>(i));
        labels.push_back(kUnlabeled);
      }
    } else {
      throw UsageError("label " + std::to_string(label) + " is neither known nor unknown");
    }
  }

  FeatureSet out;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), set.features.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out.features.row(static_cast<Eigen::Index>(r)) = set.features.row(rows[r]);
  }
  out.labels = std::move(labels);
  out.manifest = set.manifest;
  out.manifest.split_role = role;
  if (want_known && set.manifest.class_names) {
    std::vector<std::string> names;
    for (std::int64_t id : split.known_original_ids) {
      const auto idx = static_cast<std::size_t>(id);
      names.push_back(id >= 0 && idx < set.manifest.class_names->size()
                          ? (*set.manifest.class_names)[idx]
                          : std::to_string(id));
    }
    out.manifest.class_names = std::move(names);
  } else if (!want_known) {
    out.manifest.class_names.reset();
  }
  if (out.rows() == 0 && warnings != nullptr) {
    warnings->push_back("select(" + to_string(role) + "): no matching rows");
  }
  return out;
}

std::set<std::int64_t> class_ids(const FeatureSet& set) {
  std::set<std::int64_t> ids;
  for (std::int64_t label : set.labels) {
    if (label != kUnlabeled) ids.insert(label);
  }
  return ids;
}

}  // namespace ohz
