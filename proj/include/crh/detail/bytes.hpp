#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "crh/error.hpp"

namespace crh::detail {

static_assert(std::endian::native == std::endian::little,
              "file formats assume a little-endian host");

class ByteWriter {
public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }
  void magic(std::string_view tag) { bytes(tag.data(), tag.size()); }
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) { bytes(&v, sizeof v); }
  void u64(std::uint64_t v) { bytes(&v, sizeof v); }
  void f32(float v) { bytes(&v, sizeof v); }
  void f64(double v) { bytes(&v, sizeof v); }

  const std::vector<std::uint8_t>& buffer() const noexcept { return buf_; }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail_data("cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
    if (!out) fail_data("write to '" + path + "' failed");
  }

private:
  std::vector<std::uint8_t> buf_;
};

/// Sequential reader; every failure reports the byte offset it happened at.
class ByteReader {
public:
  ByteReader(std::vector<std::uint8_t> data, std::string source)
      : data_(std::move(data)), source_(std::move(source)) {}

  static ByteReader open(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail_data("cannot open '" + path + "'");
    std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return ByteReader(std::move(data), path);
  }

  std::size_t offset() const noexcept { return pos_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t remaining() const noexcept { return data_.size() - pos_; }

  [[noreturn]] void fail(const std::string& msg) const {
    fail_data(source_ + ": " + msg + " at byte offset " + std::to_string(pos_));
  }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n)
      fail(std::string("truncated ") + what + ": expected " + std::to_string(n) +
           " bytes, only " + std::to_string(remaining()) + " available");
  }

  void expect_magic(std::string_view tag) {
    need(tag.size(), "magic");
    if (std::memcmp(data_.data() + pos_, tag.data(), tag.size()) != 0)
      fail("bad magic, expected '" + std::string(tag) + "'");
    pos_ += tag.size();
  }

  void read(void* out, std::size_t n, const char* what) {
    need(n, what);
    std::memcpy(out, data_.data() + pos_, n);
    pos_ += n;
  }

  std::uint8_t u8(const char* what) { std::uint8_t v; read(&v, 1, what); return v; }
  std::uint32_t u32(const char* what) { std::uint32_t v; read(&v, 4, what); return v; }
  std::uint64_t u64(const char* what) { std::uint64_t v; read(&v, 8, what); return v; }
  float f32(const char* what) { float v; read(&v, 4, what); return v; }
  double f64(const char* what) { double v; read(&v, 8, what); return v; }

  const std::uint8_t* cursor() const noexcept { return data_.data() + pos_; }
  void skip(std::size_t n, const char* what) { need(n, what); pos_ += n; }

  void expect_end() const {
    if (remaining() != 0) fail(std::to_string(remaining()) + " trailing bytes");
  }

private:
  std::vector<std::uint8_t> data_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace crh::detail
