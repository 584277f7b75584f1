#include "ohz/checkpoint.hpp"

#include "ohz/io.hpp"

namespace ohz {

namespace {
constexpr char kMagic[4] = {'O', 'H', 'C', 'K'};
constexpr std::uint16_t kVersion = 1;
constexpr std::uint8_t kDtypeF64 = 2;
}  // namespace

const Matrix& Checkpoint::block(const std::string& name) const {
  for (const auto& [n, m] : blocks) {
    if (n == name) return m;
  }
  throw IoError("checkpoint '" + kind + "' has no block '" + name + "'");
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json header = ckpt.header;
  header["kind"] = ckpt.kind;
  nlohmann::json layout = nlohmann::json::array();
  for (const auto& [name, m] : ckpt.blocks) {
    layout.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
  }
  header["blocks"] = layout;
  const std::string text = header.dump();

  std::string bytes(kMagic, 4);
  io::put_u16(bytes, kVersion);
  io::put_u8(bytes, kDtypeF64);
  io::put_u8(bytes, 0);
  io::put_u64(bytes, text.size());
  bytes += text;
  for (const auto& [name, m] : ckpt.blocks) {
    for (Eigen::Index i = 0; i < m.size(); ++i) io::put_f64(bytes, m.data()[i]);
  }
  return bytes;
}

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  io::write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint read_checkpoint(const std::filesystem::path& path, const std::string& expected_kind) {
  const std::string bytes = io::read_file(path);
  if (bytes.size() < 16 || std::string_view(bytes.data(), 4) != std::string_view(kMagic, 4)) {
    throw IoError("not a checkpoint file: " + path.string());
  }
  io::ByteReader in(bytes);
  in.bytes(4);
  if (in.u16() != kVersion) throw IoError("checkpoint version mismatch: " + path.string());
  if (in.u8() != kDtypeF64) throw IoError("checkpoint dtype mismatch: " + path.string());
  in.u8();
  const std::uint64_t header_len = in.u64();
  if (!in.can_read(header_len)) throw IoError("checkpoint header truncated: " + path.string());

  Checkpoint ckpt;
  try {
    ckpt.header = nlohmann::json::parse(in.bytes(header_len));
    ckpt.kind = ckpt.header.at("kind").get<std::string>();
    if (ckpt.kind != expected_kind) {
      throw IoError("checkpoint kind '" + ckpt.kind + "', expected '" + expected_kind + "'");
    }
    for (const auto& entry : ckpt.header.at("blocks")) {
      const auto rows = entry.at("rows").get<Eigen::Index>();
      const auto cols = entry.at("cols").get<Eigen::Index>();
      if (rows < 0 || cols < 0 ||
          static_cast<std::uint64_t>(rows) * static_cast<std::uint64_t>(cols) >
              in.remaining() / 8) {
        throw IoError("checkpoint payload truncated: " + path.string());
      }
      Matrix m(rows, cols);
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = in.f64();
      ckpt.blocks.emplace_back(entry.at("name").get<std::string>(), std::move(m));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad checkpoint header in " + path.string() + ": " + e.what());
  }
  if (in.remaining() != 0) throw IoError("trailing bytes in checkpoint: " + path.string());
  return ckpt;
}

}  // namespace ohz
