#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace ohz::io {

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

/// Renames every staged temp file into place. Used when several outputs
/// must appear together.
class StagedOutputs {
 public:
  StagedOutputs() = default;
  StagedOutputs(const StagedOutputs&) = delete;
  StagedOutputs& operator=(const StagedOutputs&) = delete;
  ~StagedOutputs();

  void stage(const std::filesystem::path& path, std::string_view bytes);
  void commit();

 private:
  std::vector<std::pair<std::filesystem::path, std::filesystem::path>> staged_;
};

std::string read_file(const std::filesystem::path& path);

/// Fixed 6-decimal formatting used for every CSV number.
std::string fixed6(double value);

/// Splits one CSV line on commas (no quoting; fields never contain commas).
std::vector<std::string> split_csv_line(std::string_view line);

// Little-endian scalar encoding.
void put_u8(std::string& out, std::uint8_t v);
void put_u16(std::string& out, std::uint16_t v);
void put_u64(std::string& out, std::uint64_t v);
void put_i64(std::string& out, std::int64_t v);
void put_f32(std::string& out, float v);
void put_f64(std::string& out, double v);

class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  std::size_t remaining() const { return data_.size() - pos_; }
  std::size_t position() const { return pos_; }
  bool can_read(std::size_t n) const { return remaining() >= n; }

  std::uint8_t u8();
  std::uint16_t u16();
  std::uint64_t u64();
  std::int64_t i64();
  float f32();
  double f64();
  std::string_view bytes(std::size_t n);

 private:
  template <typename T>
  T read_le();

  std::string_view data_;
  std::size_t pos_ = 0;
};

}  // namespace ohz::io
