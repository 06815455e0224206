// Little-endian binary container with a trailing CRC-32 over all preceding bytes.
//
// Layout: 8-byte magic, u32 version, payload, u32 crc32. Strings are a u64
// byte count followed by the bytes; reals are raw IEEE-754 binary64.

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

namespace declip {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class BinaryWriter {
 public:
  BinaryWriter(std::string_view magic, std::uint32_t version);

  void u8(std::uint8_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void str(std::string_view s);
  void reals(const Eigen::VectorXd& v);  // count + values

  // Appends the checksum and writes atomically (temp file + rename).
  void save(const std::filesystem::path& path);

 private:
  void raw(const void* p, std::size_t n);
  std::string buf_;
};

class BinaryReader {
 public:
  // Reads the file, checks magic and checksum; throws FormatError on mismatch.
  BinaryReader(const std::filesystem::path& path, std::string_view magic);

  std::uint32_t version() const { return version_; }
  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  std::string str();
  Eigen::VectorXd reals();
  bool at_end() const { return pos_ == end_; }

 private:
  void raw(void* p, std::size_t n);
  std::string buf_;
  std::size_t pos_ = 0;
  std::size_t end_ = 0;
  std::uint32_t version_ = 0;
  std::string origin_;
};

}  // namespace declip
