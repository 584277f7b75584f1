#include "ohz/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ohz/common.hpp"

namespace ohz::io {

namespace fs = std::filesystem;

namespace {

fs::path temp_sibling(const fs::path& path) {
  fs::path tmp = path;
  tmp += ".tmp";
  return tmp;
}

void write_raw(const fs::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw IoError("write failed: " + path.string());
}

template <typename T>
void put_le(std::string& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(buf, buf + sizeof(T));
  }
  out.append(buf, sizeof(T));
}

}  // namespace

void write_file_atomic(const fs::path& path, std::string_view bytes) {
  const fs::path tmp = temp_sibling(path);
  try {
    write_raw(tmp, bytes);
    fs::rename(tmp, path);
  } catch (...) {
    std::error_code ec;
    fs::remove(tmp, ec);
    throw;
  }
}

StagedOutputs::~StagedOutputs() {
  for (const auto& [tmp, final_path] : staged_) {
    std::error_code ec;
    fs::remove(tmp, ec);
  }
}

void StagedOutputs::stage(const fs::path& path, std::string_view bytes) {
  const fs::path tmp = temp_sibling(path);
  write_raw(tmp, bytes);
  staged_.emplace_back(tmp, path);
}

void StagedOutputs::commit() {
  for (const auto& [tmp, final_path] : staged_) {
    fs::rename(tmp, final_path);
  }
  staged_.clear();
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fixed6(double value) {
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  if (std::isnan(value)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", value);
  // "-0.000000" would make equal values compare unequal in golden diffs.
  if (std::strcmp(buf, "-0.000000") == 0) return "0.000000";
  return buf;
}

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.emplace_back(line.substr(start));
      break;
    }
    fields.emplace_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  if (!fields.empty() && !fields.back().empty() && fields.back().back() == '\r') {
    fields.back().pop_back();
  }
  return fields;
}

void put_u8(std::string& out, std::uint8_t v) { out.push_back(static_cast<char>(v)); }
void put_u16(std::string& out, std::uint16_t v) { put_le(out, v); }
void put_u64(std::string& out, std::uint64_t v) { put_le(out, v); }
void put_i64(std::string& out, std::int64_t v) { put_le(out, v); }
void put_f32(std::string& out, float v) { put_le(out, v); }
void put_f64(std::string& out, double v) { put_le(out, v); }

template <typename T>
T ByteReader::read_le() {
  if (!can_read(sizeof(T))) throw IoError("read past end of buffer");
  char buf[sizeof(T)];
  std::memcpy(buf, data_.data() + pos_, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(buf, buf + sizeof(T));
  }
  pos_ += sizeof(T);
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

std::uint8_t ByteReader::u8() { return read_le<std::uint8_t>(); }
std::uint16_t ByteReader::u16() { return read_le<std::uint16_t>(); }
std::uint64_t ByteReader::u64() { return read_le<std::uint64_t>(); }
std::int64_t ByteReader::i64() { return read_le<std::int64_t>(); }
float ByteReader::f32() { return read_le<float>(); }
double ByteReader::f64() { return read_le<double>(); }

std::string_view ByteReader::bytes(std::size_t n) {
  if (!can_read(n)) throw IoError("read past end of buffer");
  auto view = data_.substr(pos_, n);
  pos_ += n;
  return view;
}

}  // namespace ohz::io
