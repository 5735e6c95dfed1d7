#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace routenav {

// Little-endian container used by descriptor tables (CLDT), projections
// (CLPJ) and checkpoints (CLCK): 4-byte ASCII magic, u32 version, payload.
class BinaryWriter {
 public:
  BinaryWriter(std::array<char, 4> magic, std::uint32_t version);

  void u32(std::uint32_t value);
  void f32(std::span<const float> values);
  void f32(std::span<const double> values);  // rounds to float32
  void f64(std::span<const double> values);
  void f64(double value) { f64(std::span<const double>(&value, 1)); }

  const std::vector<std::uint8_t>& bytes() const { return bytes_; }
  void save(const std::filesystem::path& path) const;

 private:
  std::vector<std::uint8_t> bytes_;
};

class BinaryReader {
 public:
  // Throws format error "bad magic" / "unsupported version" on mismatch.
  BinaryReader(const std::filesystem::path& path, std::array<char, 4> magic,
               std::uint32_t version);

  std::uint32_t u32(const char* field);
  void f32(std::span<float> out, const char* field);
  void f32(std::span<double> out, const char* field);
  void f64(std::span<double> out, const char* field);
  double f64(const char* field);

  std::size_t remaining() const { return bytes_.size() - pos_; }
  void expect_end() const;

 private:
  void need(std::size_t n, const char* field) const;

  std::filesystem::path path_;
  std::vector<std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace routenav
