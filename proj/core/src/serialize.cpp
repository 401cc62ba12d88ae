#include "ncx/serialize.hpp"

#include <array>
#include <cstring>
#include <fstream>

namespace ncx {

namespace {

std::array<std::uint32_t, 256> make_crc_table() {
  std::array<std::uint32_t, 256> t{};
  for (std::uint32_t i = 0; i < 256; ++i) {
    std::uint32_t c = i;
    for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
    t[i] = c;
  }
  return t;
}

const std::array<std::uint32_t, 256>& crc_table() {
  static const auto table = make_crc_table();
  return table;
}

}  // namespace

std::uint32_t crc32(const void* bytes, std::size_t len, std::uint32_t seed) {
  const auto* p = static_cast<const std::uint8_t*>(bytes);
  std::uint32_t c = seed ^ 0xffffffffu;
  for (std::size_t i = 0; i < len; ++i) c = crc_table()[(c ^ p[i]) & 0xffu] ^ (c >> 8);
  return c ^ 0xffffffffu;
}

struct BinaryWriter::Impl {
  std::ofstream out;
  std::uint32_t crc = 0;
  bool finished = false;
  std::string path;
};

BinaryWriter::BinaryWriter(const std::filesystem::path& path) : impl_(new Impl) {
  impl_->path = path.string();
  impl_->out.open(path, std::ios::binary | std::ios::trunc);
  if (!impl_->out) throw FormatError("cannot open '" + impl_->path + "' for writing");
}

BinaryWriter::~BinaryWriter() {
  if (impl_ && !impl_->finished) {
    // abandoned writer: close without trailer so the file fails CRC on load
    impl_->out.close();
  }
  delete impl_;
}

void BinaryWriter::bytes(const void* p, std::size_t len) {
  impl_->out.write(static_cast<const char*>(p), static_cast<std::streamsize>(len));
  // incremental CRC: fold the new block into the running value
  const auto* b = static_cast<const std::uint8_t*>(p);
  std::uint32_t c = impl_->crc ^ 0xffffffffu;
  for (std::size_t i = 0; i < len; ++i) c = crc_table()[(c ^ b[i]) & 0xffu] ^ (c >> 8);
  impl_->crc = c ^ 0xffffffffu;
  offset_ += len;
}

void BinaryWriter::u8(std::uint8_t v) { bytes(&v, 1); }
void BinaryWriter::u32(std::uint32_t v) { bytes(&v, 4); }
void BinaryWriter::u64(std::uint64_t v) { bytes(&v, 8); }
void BinaryWriter::i64(std::int64_t v) { bytes(&v, 8); }
void BinaryWriter::f64(double v) { bytes(&v, 8); }

void BinaryWriter::str(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  bytes(s.data(), s.size());
}

void BinaryWriter::f64_array(std::span<const double> v) { bytes(v.data(), v.size() * 8); }
void BinaryWriter::u64_array(std::span<const std::uint64_t> v) { bytes(v.data(), v.size() * 8); }

void BinaryWriter::finish() {
  const std::uint32_t crc = impl_->crc;
  impl_->out.write(reinterpret_cast<const char*>(&crc), 4);
  impl_->out.close();
  if (!impl_->out) throw FormatError("write failed for '" + impl_->path + "'");
  impl_->finished = true;
}

BinaryReader::BinaryReader(const std::filesystem::path& path) : path_(path.string()) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw FormatError("cannot open '" + path_ + "' for reading");
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  buf_.resize(size);
  if (size > 0) in.read(reinterpret_cast<char*>(buf_.data()), static_cast<std::streamsize>(size));
  if (!in) throw FormatError("read failed for '" + path_ + "'");
  payload_end_ = size;
}

void BinaryReader::verify_crc_trailer() {
  if (buf_.size() < 4)
    throw FormatError("'" + path_ + "': truncated, no CRC trailer (size " +
                      std::to_string(buf_.size()) + ")");
  payload_end_ = buf_.size() - 4;
  std::uint32_t stored;
  std::memcpy(&stored, buf_.data() + payload_end_, 4);
  const std::uint32_t actual = crc32(buf_.data(), payload_end_);
  if (stored != actual)
    throw FormatError("'" + path_ + "': CRC mismatch over " + std::to_string(payload_end_) +
                      " payload bytes");
}

void BinaryReader::need(std::size_t n) const {
  if (pos_ + n > payload_end_)
    throw FormatError("'" + path_ + "': truncated record at offset " + std::to_string(pos_) +
                      " (need " + std::to_string(n) + " bytes, have " +
                      std::to_string(payload_end_ - pos_) + ")");
}

void BinaryReader::expect_magic(std::string_view magic) {
  need(magic.size());
  if (std::memcmp(buf_.data() + pos_, magic.data(), magic.size()) != 0)
    throw FormatError("'" + path_ + "': bad magic at offset " + std::to_string(pos_));
  pos_ += magic.size();
}

std::uint8_t BinaryReader::u8() {
  need(1);
  return buf_[pos_++];
}

std::uint32_t BinaryReader::u32() {
  need(4);
  std::uint32_t v;
  std::memcpy(&v, buf_.data() + pos_, 4);
  pos_ += 4;
  return v;
}

std::uint64_t BinaryReader::u64() {
  need(8);
  std::uint64_t v;
  std::memcpy(&v, buf_.data() + pos_, 8);
  pos_ += 8;
  return v;
}

std::int64_t BinaryReader::i64() {
  need(8);
  std::int64_t v;
  std::memcpy(&v, buf_.data() + pos_, 8);
  pos_ += 8;
  return v;
}

double BinaryReader::f64() {
  need(8);
  double v;
  std::memcpy(&v, buf_.data() + pos_, 8);
  pos_ += 8;
  return v;
}

std::string BinaryReader::str() {
  const std::uint32_t len = u32();
  need(len);
  std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), len);
  pos_ += len;
  return s;
}

std::vector<double> BinaryReader::f64_array(std::size_t n) {
  need(n * 8);
  std::vector<double> v(n);
  std::memcpy(v.data(), buf_.data() + pos_, n * 8);
  pos_ += n * 8;
  return v;
}

std::vector<std::uint64_t> BinaryReader::u64_array(std::size_t n) {
  need(n * 8);
  std::vector<std::uint64_t> v(n);
  std::memcpy(v.data(), buf_.data() + pos_, n * 8);
  pos_ += n * 8;
  return v;
}

}  // namespace ncx
