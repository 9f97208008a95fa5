#pragma once

// Little-endian readers/writers for the project's flat binary formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "advmix/errors.hpp"

namespace advmix::io {

class ByteWriter {
 public:
  void magic(std::string_view tag) { bytes_.insert(bytes_.end(), tag.begin(), tag.end()); }

  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void f64s(const std::vector<double>& values) {
    for (double v : values) f64(v);
  }

  const std::vector<char>& bytes() const { return bytes_; }

  void write_file(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
    out.write(bytes_.data(), static_cast<std::streamsize>(bytes_.size()));
    if (!out) throw DataError("write failed for '" + path.string() + "'");
  }

 private:
  std::vector<char> bytes_;
};

class ByteReader {
 public:
  ByteReader(std::vector<char> bytes, std::string source)
      : bytes_(std::move(bytes)), source_(std::move(source)) {}

  static ByteReader from_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path.string() + "'");
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return ByteReader(std::move(bytes), path.string());
  }

  void expect_magic(std::string_view tag) {
    need(tag.size(), "magic");
    if (std::string_view(bytes_.data() + pos_, tag.size()) != tag) {
      throw DataError(source_ + ": wrong magic at offset " + std::to_string(pos_) +
                      ", expected \"" + std::string(tag) + "\"");
    }
    pos_ += tag.size();
  }

  std::uint32_t u32(const char* what = "u32") {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::int32_t i32(const char* what = "i32") { return static_cast<std::int32_t>(u32(what)); }
  std::uint64_t u64(const char* what = "u64") {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64(const char* what = "f64") { return std::bit_cast<double>(u64(what)); }
  std::vector<double> f64s(std::size_t count, const char* what = "f64 array") {
    need(count * 8, what);
    std::vector<double> out(count);
    for (auto& v : out) v = f64(what);
    return out;
  }

  std::size_t offset() const { return pos_; }
  bool at_end() const { return pos_ == bytes_.size(); }
  const std::string& source() const { return source_; }

  void expect_end() const {
    if (!at_end()) {
      throw DataError(source_ + ": " + std::to_string(bytes_.size() - pos_) +
                      " trailing bytes at offset " + std::to_string(pos_));
    }
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (pos_ + n > bytes_.size()) {
      throw DataError(source_ + ": truncated while reading " + what + " at offset " +
                      std::to_string(pos_) + " (need " + std::to_string(n) + " bytes, have " +
                      std::to_string(bytes_.size() - pos_) + ")");
    }
  }

  std::vector<char> bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

inline std::int32_t checked_i32(std::size_t v, const char* what) {
  if (v > static_cast<std::size_t>(INT32_MAX)) {
    throw DataError(std::string(what) + " does not fit in int32: " + std::to_string(v));
  }
  return static_cast<std::int32_t>(v);
}

}  // namespace advmix::io
