#pragma once

// Internal little-endian binary I/O helpers shared by the epoch-file and
// checkpoint containers. Values are written little-endian regardless of the
// host byte order; short reads raise TruncatedFileError.

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>

#include "posr/errors.hpp"

namespace posr::binio {

class LeWriter {
 public:
  explicit LeWriter(const std::string& path)
      : out_(path, std::ios::binary), path_(path) {
    if (!out_) throw FileIoError("cannot open '" + path + "' for writing");
  }

  void u8(std::uint8_t v) { uint_le(v, 1); }
  void u16(std::uint16_t v) { uint_le(v, 2); }
  void u32(std::uint32_t v) { uint_le(v, 4); }
  void f32(float v) { uint_le(std::bit_cast<std::uint32_t>(v), 4); }
  void f64(double v) { uint_le(std::bit_cast<std::uint64_t>(v), 8); }
  void raw(const char* p, std::size_t n) {
    out_.write(p, static_cast<std::streamsize>(n));
  }
  void finish() {
    out_.flush();
    if (!out_) throw FileIoError("write to '" + path_ + "' failed");
  }

 private:
  void uint_le(std::uint64_t x, std::size_t n) {
    unsigned char buf[8];
    for (std::size_t i = 0; i < n; ++i)
      buf[i] = static_cast<unsigned char>(x >> (8 * i));
    out_.write(reinterpret_cast<const char*>(buf),
               static_cast<std::streamsize>(n));
  }

  std::ofstream out_;
  std::string path_;
};

class LeReader {
 public:
  // `what` names the container kind in error messages ("epoch file", ...).
  LeReader(const std::string& path, const char* what)
      : in_(path, std::ios::binary), path_(path), what_(what) {
    if (!in_) throw FileIoError("cannot open '" + path + "' for reading");
  }

  std::uint8_t u8() { return static_cast<std::uint8_t>(uint_n(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(uint_n(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(uint_n(4)); }
  float f32() {
    return std::bit_cast<float>(static_cast<std::uint32_t>(uint_n(4)));
  }
  double f64() { return std::bit_cast<double>(uint_n(8)); }

  void raw(char* p, std::size_t n) {
    in_.read(p, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n)
      throw TruncatedFileError(std::string(what_) + " '" + path_ +
                               "' is truncated");
  }

  bool at_eof() {
    in_.peek();
    return in_.eof();
  }

  const std::string& path() const { return path_; }

 private:
  std::uint64_t uint_n(std::size_t n) {
    unsigned char buf[8];
    raw(reinterpret_cast<char*>(buf), n);
    std::uint64_t x = 0;
    for (std::size_t i = 0; i < n; ++i)
      x |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return x;
  }

  std::ifstream in_;
  std::string path_;
  const char* what_;
};

}  // namespace posr::binio
