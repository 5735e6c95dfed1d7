#include "routenav/binary_io.hpp"

#include <bit>
#include <fstream>
#include <iterator>

#include "routenav/error.hpp"

namespace routenav {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config: return "config";
    case ErrorKind::format: return "format";
    case ErrorKind::io: return "io";
    case ErrorKind::alignment: return "alignment";
    case ErrorKind::shape: return "shape";
    case ErrorKind::bounds: return "bounds";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::rank: return "rank";
    case ErrorKind::degenerate_data: return "degenerate-data";
    case ErrorKind::contract: return "contract";
    case ErrorKind::schema: return "schema";
    case ErrorKind::usage: return "usage";
  }
  return "unknown";
}

namespace {

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
  }
}

template <typename U>
U get_le(const std::uint8_t* p) {
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(p[i]) << (8 * i);
  return value;
}

}  // namespace

BinaryWriter::BinaryWriter(std::array<char, 4> magic, std::uint32_t version) {
  for (char c : magic) bytes_.push_back(static_cast<std::uint8_t>(c));
  u32(version);
}

void BinaryWriter::u32(std::uint32_t value) { put_le(bytes_, value); }

void BinaryWriter::f32(std::span<const float> values) {
  bytes_.reserve(bytes_.size() + 4 * values.size());
  for (float v : values) put_le(bytes_, std::bit_cast<std::uint32_t>(v));
}

void BinaryWriter::f32(std::span<const double> values) {
  bytes_.reserve(bytes_.size() + 4 * values.size());
  for (double v : values) put_le(bytes_, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

void BinaryWriter::f64(std::span<const double> values) {
  bytes_.reserve(bytes_.size() + 8 * values.size());
  for (double v : values) put_le(bytes_, std::bit_cast<std::uint64_t>(v));
}

void BinaryWriter::save(const std::filesystem::path& path) const { write_file_bytes(path, bytes_); }

BinaryReader::BinaryReader(const std::filesystem::path& path, std::array<char, 4> magic,
                           std::uint32_t version)
    : path_(path), bytes_(read_file_bytes(path)) {
  if (bytes_.size() < 4 || !std::equal(magic.begin(), magic.end(), bytes_.begin())) {
    fail(ErrorKind::format, path_.string() + ": bad magic");
  }
  pos_ = 4;
  const std::uint32_t v = u32("version");
  if (v != version) {
    fail(ErrorKind::format, path_.string() + ": unsupported version " + std::to_string(v));
  }
}

void BinaryReader::need(std::size_t n, const char* field) const {
  if (remaining() < n) {
    fail(ErrorKind::format, path_.string() + ": truncated payload reading '" + field + "' (need " +
                                std::to_string(n) + " bytes, have " +
                                std::to_string(remaining()) + ")");
  }
}

std::uint32_t BinaryReader::u32(const char* field) {
  need(4, field);
  const auto v = get_le<std::uint32_t>(bytes_.data() + pos_);
  pos_ += 4;
  return v;
}

void BinaryReader::f32(std::span<float> out, const char* field) {
  need(4 * out.size(), field);
  for (float& v : out) {
    v = std::bit_cast<float>(get_le<std::uint32_t>(bytes_.data() + pos_));
    pos_ += 4;
  }
}

void BinaryReader::f32(std::span<double> out, const char* field) {
  need(4 * out.size(), field);
  for (double& v : out) {
    v = std::bit_cast<float>(get_le<std::uint32_t>(bytes_.data() + pos_));
    pos_ += 4;
  }
}

void BinaryReader::f64(std::span<double> out, const char* field) {
  need(8 * out.size(), field);
  for (double& v : out) {
    v = std::bit_cast<double>(get_le<std::uint64_t>(bytes_.data() + pos_));
    pos_ += 8;
  }
}

double BinaryReader::f64(const char* field) {
  double v = 0.0;
  f64(std::span<double>(&v, 1), field);
  return v;
}

void BinaryReader::expect_end() const {
  if (remaining() != 0) {
    fail(ErrorKind::format, path_.string() + ": " + std::to_string(remaining()) +
                                " trailing bytes after declared payload");
  }
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::io, "short write to " + path.string());
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace routenav
