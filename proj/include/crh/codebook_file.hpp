#pragma once

#include <string>

#include "crh/detail/bytes.hpp"
#include "crh/hamming.hpp"

namespace crh {

// CRHC layout: "CRHC", u32 version=1, u32 K, u32 M, then M records of
// ceil(K/8) bytes; bit j of a record sits in byte j/8 at bit j%8.

inline constexpr std::uint32_t kCodebookFileVersion = 1;

inline std::vector<std::uint8_t> encode_codebook(const Codebook& book) {
  detail::ByteWriter w;
  w.magic("CRHC");
  w.u32(kCodebookFileVersion);
  w.u32(static_cast<std::uint32_t>(book.bits()));
  w.u32(static_cast<std::uint32_t>(book.size()));
  const std::size_t record = (book.bits() + 7) / 8;
  for (const auto& code : book.codes()) {
    for (std::size_t byte = 0; byte < record; ++byte) {
      std::uint8_t v = 0;
      for (std::size_t b = 0; b < 8 && byte * 8 + b < book.bits(); ++b)
        if (code.bit(byte * 8 + b)) v |= static_cast<std::uint8_t>(1u << b);
      w.u8(v);
    }
  }
  return w.buffer();
}

inline Codebook decode_codebook(detail::ByteReader& r) {
  r.expect_magic("CRHC");
  const auto version = r.u32("version");
  if (version != kCodebookFileVersion) r.fail("unsupported version " + std::to_string(version));
  const auto bits = r.u32("K");
  const auto count = r.u32("M");
  if (bits == 0 || count == 0) r.fail("K and M must be positive");
  const std::size_t record = (bits + 7) / 8;
  r.need(record * count, "codebook records");
  std::vector<BinaryCode> codes;
  codes.reserve(count);
  for (std::uint32_t m = 0; m < count; ++m) {
    BinaryCode code(bits);
    for (std::size_t byte = 0; byte < record; ++byte) {
      const std::uint8_t v = r.u8("record");
      for (std::size_t b = 0; b < 8; ++b) {
        const std::size_t j = byte * 8 + b;
        const bool set = (v >> b) & 1u;
        if (j < bits) {
          code.set(j, set);
        } else if (set) {
          r.fail("nonzero padding bit in record " + std::to_string(m));
        }
      }
    }
    codes.push_back(std::move(code));
  }
  r.expect_end();
  return Codebook(bits, std::move(codes));
}

inline void write_codebook(const Codebook& book, const std::string& path) {
  detail::ByteWriter w;
  const auto bytes = encode_codebook(book);
  w.bytes(bytes.data(), bytes.size());
  w.save(path);
}

inline Codebook read_codebook(const std::string& path) {
  auto r = detail::ByteReader::open(path);
  return decode_codebook(r);
}

}  // namespace crh
