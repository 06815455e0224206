#include "declip/binio.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

static_assert(std::endian::native == std::endian::little, "container format assumes a little-endian host");

namespace declip {

namespace {

std::uint32_t crc_of(const std::string& buf, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  const auto* p = reinterpret_cast<const Bytef*>(buf.data());
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, p, chunk);
    p += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

BinaryWriter::BinaryWriter(std::string_view magic, std::uint32_t version) {
  if (magic.size() != 8) throw std::logic_error("container magic must be 8 bytes");
  buf_.append(magic);
  u32(version);
}

void BinaryWriter::raw(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
void BinaryWriter::u8(std::uint8_t v) { raw(&v, 1); }
void BinaryWriter::u32(std::uint32_t v) { raw(&v, 4); }
void BinaryWriter::u64(std::uint64_t v) { raw(&v, 8); }
void BinaryWriter::f64(double v) { raw(&v, 8); }

void BinaryWriter::str(std::string_view s) {
  u64(s.size());
  raw(s.data(), s.size());
}

void BinaryWriter::reals(const Eigen::VectorXd& v) {
  u64(static_cast<std::uint64_t>(v.size()));
  raw(v.data(), sizeof(double) * static_cast<std::size_t>(v.size()));
}

void BinaryWriter::save(const std::filesystem::path& path) {
  std::string out = buf_;
  const std::uint32_t crc = crc_of(out, out.size());
  out.append(reinterpret_cast<const char*>(&crc), 4);

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

BinaryReader::BinaryReader(const std::filesystem::path& path, std::string_view magic) : origin_(path.string()) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + origin_);
  buf_.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
  if (buf_.size() < magic.size() + 8 || buf_.compare(0, magic.size(), magic) != 0) {
    throw FormatError(origin_ + ": not a '" + std::string(magic) + "' container");
  }
  end_ = buf_.size() - 4;
  std::uint32_t stored = 0;
  std::memcpy(&stored, buf_.data() + end_, 4);
  if (stored != crc_of(buf_, end_)) throw FormatError(origin_ + ": checksum mismatch (file corrupted)");
  pos_ = magic.size();
  version_ = u32();
}

void BinaryReader::raw(void* p, std::size_t n) {
  if (n > end_ - pos_) throw FormatError(origin_ + ": truncated container");
  std::memcpy(p, buf_.data() + pos_, n);
  pos_ += n;
}

std::uint8_t BinaryReader::u8() {
  std::uint8_t v;
  raw(&v, 1);
  return v;
}

std::uint32_t BinaryReader::u32() {
  std::uint32_t v;
  raw(&v, 4);
  return v;
}

std::uint64_t BinaryReader::u64() {
  std::uint64_t v;
  raw(&v, 8);
  return v;
}

double BinaryReader::f64() {
  double v;
  raw(&v, 8);
  return v;
}

std::string BinaryReader::str() {
  const std::uint64_t n = u64();
  if (n > end_ - pos_) throw FormatError(origin_ + ": truncated string");
  std::string s(buf_.data() + pos_, n);
  pos_ += n;
  return s;
}

Eigen::VectorXd BinaryReader::reals() {
  const std::uint64_t n = u64();
  if (n > (end_ - pos_) / sizeof(double)) throw FormatError(origin_ + ": truncated array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(n));
  raw(v.data(), sizeof(double) * n);
  return v;
}

}  // namespace declip
