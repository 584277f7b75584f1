#pragma once

// Model/statistics checkpoints: a JSON header followed by f64 blocks.
//
//   magic "OHCK" | version u16 = 1 | dtype u8 = 2 (f64) | reserved u8 |
//   header_len u64 | header JSON (UTF-8) | blocks, f64 row-major
//
// header["blocks"] lists {name, rows, cols} in payload order.

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ohz/common.hpp"

namespace ohz {

struct Checkpoint {
  std::string kind;
  nlohmann::json header;
  std::vector<std::pair<std::string, Matrix>> blocks;

  const Matrix& block(const std::string& name) const;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);

/// Throws IoError when the file is malformed or its kind differs from
/// `expected_kind`.
Checkpoint read_checkpoint(const std::filesystem::path& path, const std::string& expected_kind);

}  // namespace ohz
