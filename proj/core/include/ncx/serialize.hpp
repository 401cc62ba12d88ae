#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ncx/errors.hpp"

namespace ncx {

/// CRC-32 (IEEE polynomial) of a byte range.
std::uint32_t crc32(const void* bytes, std::size_t len, std::uint32_t seed = 0);

/// Little-endian binary file writer with a running CRC over everything
/// written. Call `finish` to append the CRC trailer and close.
class BinaryWriter {
public:
  explicit BinaryWriter(const std::filesystem::path& path);
  ~BinaryWriter();
  BinaryWriter(const BinaryWriter&) = delete;
  BinaryWriter& operator=(const BinaryWriter&) = delete;

  void bytes(const void* p, std::size_t len);
  void u8(std::uint8_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void i64(std::int64_t v);
  void f64(double v);
  void str(std::string_view s);  // u32 length prefix + raw bytes
  void f64_array(std::span<const double> v);
  void u64_array(std::span<const std::uint64_t> v);

  std::size_t offset() const { return offset_; }
  void finish();  // writes CRC trailer; further writes are invalid

private:
  struct Impl;
  Impl* impl_;
  std::size_t offset_ = 0;
};

/// Reads a whole file into memory and decodes it sequentially. Every
/// decode checks bounds and reports the byte offset on failure. The CRC
/// trailer is verified up front so a corrupt file never half-loads.
class BinaryReader {
public:
  explicit BinaryReader(const std::filesystem::path& path);

  void verify_crc_trailer();  // must be called before reading past the trailer
  void expect_magic(std::string_view magic);

  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  std::int64_t i64();
  double f64();
  std::string str();
  std::vector<double> f64_array(std::size_t n);
  std::vector<std::uint64_t> u64_array(std::size_t n);

  std::size_t offset() const { return pos_; }
  std::size_t payload_size() const { return payload_end_; }
  bool at_payload_end() const { return pos_ == payload_end_; }

private:
  void need(std::size_t n) const;
  std::vector<std::uint8_t> buf_;
  std::size_t pos_ = 0;
  std::size_t payload_end_ = 0;
  std::string path_;
};

}  // namespace ncx
