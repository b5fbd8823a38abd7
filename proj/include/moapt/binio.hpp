// SPDX-License-Identifier: Apache-2.0
//
// Little-endian binary record helpers shared by dataset and checkpoint files.
// Doubles are stored as their IEEE-754 bit pattern so round trips are exact.

#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace moapt::binio {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path)
      : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw FormatError("cannot open " + path.string() + " for writing");
  }

  void bytes(const std::string& s) { out_.write(s.data(), static_cast<std::streamsize>(s.size())); }
  void u64(std::uint64_t v) {
    char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out_.write(buf, 8);
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    bytes(s);
  }
  void f64s(std::span<const double> v) {
    u64(v.size());
    for (double x : v) f64(x);
  }
  void finish() {
    out_.flush();
    if (!out_) throw FormatError("write failed for " + path_.string());
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path)
      : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw FormatError("cannot open " + path.string());
  }

  void expect(const std::string& magic) {
    std::string got(magic.size(), '\0');
    in_.read(got.data(), static_cast<std::streamsize>(got.size()));
    if (!in_ || got != magic)
      throw FormatError(path_.string() + ": bad magic, expected '" + magic + "'");
  }
  std::uint64_t u64() {
    unsigned char buf[8];
    in_.read(reinterpret_cast<char*>(buf), 8);
    if (!in_) throw FormatError(path_.string() + ": truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const auto n = u64();
    if (n > (1u << 20)) throw FormatError(path_.string() + ": implausible string length");
    std::string s(n, '\0');
    in_.read(s.data(), static_cast<std::streamsize>(n));
    if (!in_) throw FormatError(path_.string() + ": truncated file");
    return s;
  }
  std::vector<double> f64s(std::size_t expected) {
    const auto n = u64();
    if (n != expected)
      throw FormatError(path_.string() + ": array of " + std::to_string(n) +
                        " values, expected " + std::to_string(expected));
    std::vector<double> v(n);
    for (auto& x : v) x = f64();
    return v;
  }
  void expect_end() {
    if (in_.peek() != std::char_traits<char>::eof())
      throw FormatError(path_.string() + ": trailing bytes");
  }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
};

}  // namespace moapt::binio
