#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "tpdr/error.hpp"

namespace tpdr::detail {

static_assert(std::endian::native == std::endian::little,
              "binary artifacts are written little-endian");

class BinaryWriter {
 public:
  explicit BinaryWriter(const std::filesystem::path& path)
      : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw IoError("cannot write " + path.string());
  }

  void bytes(const void* data, std::size_t n) {
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  }
  void u64(std::uint64_t v) { bytes(&v, sizeof v); }
  void string(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  void doubles(std::span<const double> v) {
    bytes(v.data(), v.size() * sizeof(double));
  }
  void finish() {
    out_.flush();
    if (!out_) throw IoError("write failed: " + path_.string());
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

/// Reads a whole file and hands out bounds-checked pieces of it.
class BinaryReader {
 public:
  explicit BinaryReader(const std::filesystem::path& path) : path_(path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    buf_.assign(std::istreambuf_iterator<char>(in), {});
  }

  void bytes(void* dst, std::size_t n) {
    if (n > buf_.size() - pos_) {
      throw FormatError(path_.string() + ": truncated file");
    }
    std::memcpy(dst, buf_.data() + pos_, n);
    pos_ += n;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    bytes(&v, sizeof v);
    return v;
  }
  std::string string(std::size_t max_len = 1u << 24) {
    const auto n = u64();
    if (n > max_len) throw FormatError(path_.string() + ": corrupt string length");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  void doubles(std::span<double> dst) {
    bytes(dst.data(), dst.size() * sizeof(double));
  }
  void expect_magic(const char (&magic)[9]) {
    char got[8];
    bytes(got, 8);
    if (std::memcmp(got, magic, 8) != 0) {
      throw FormatError(path_.string() + ": bad magic, not a " +
                        std::string(magic, 8) + " file");
    }
  }
  void expect_end() const {
    if (pos_ != buf_.size()) {
      throw FormatError(path_.string() + ": trailing bytes");
    }
  }
  std::size_t remaining() const { return buf_.size() - pos_; }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

}  // namespace tpdr::detail
