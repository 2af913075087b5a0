#pragma once

#include <algorithm>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "crh/error.hpp"
#include "crh/random.hpp"

namespace crh {

/// A K-bit code over {-1,+1}. Bit i lives in word i/64 at position i%64;
/// a set bit means +1. Storage past bit K-1 is always zero.
class BinaryCode {
public:
  BinaryCode() = default;

  explicit BinaryCode(std::size_t length)
      : length_(length), words_((length + 63) / 64, 0) {
    if (length == 0) fail_argument("BinaryCode: length must be >= 1");
  }

  static BinaryCode from_signs(std::span<const int> signs) {
    BinaryCode code(signs.size());
    for (std::size_t i = 0; i < signs.size(); ++i) {
      if (signs[i] == 1) {
        code.set(i, true);
      } else if (signs[i] != -1) {
        fail_argument("BinaryCode::from_signs: entries must be -1 or +1");
      }
    }
    return code;
  }

  /// Binarizes with sign(0) = +1.
  static BinaryCode from_real(std::span<const double> values) {
    BinaryCode code(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) code.set(i, values[i] >= 0.0);
    return code;
  }

  /// Parses "0101..." with bit 0 first, '1' meaning +1.
  static BinaryCode from_string(std::string_view bits) {
    BinaryCode code(bits.size());
    for (std::size_t i = 0; i < bits.size(); ++i) {
      if (bits[i] == '1') {
        code.set(i, true);
      } else if (bits[i] != '0') {
        fail_argument("BinaryCode::from_string: expected only '0' and '1'");
      }
    }
    return code;
  }

  /// Low K bits of an integer, bit i of the value becoming bit i of the code.
  static BinaryCode from_integer(std::uint64_t value, std::size_t length) {
    BinaryCode code(length);
    if (length < 64) value &= (std::uint64_t{1} << length) - 1;
    code.words_[0] = value;
    return code;
  }

  std::size_t length() const noexcept { return length_; }
  std::span<const std::uint64_t> words() const noexcept { return words_; }

  bool bit(std::size_t i) const { return (words_[i / 64] >> (i % 64)) & 1u; }
  int sign(std::size_t i) const { return bit(i) ? 1 : -1; }

  void set(std::size_t i, bool value) {
    const std::uint64_t mask = std::uint64_t{1} << (i % 64);
    if (value) {
      words_[i / 64] |= mask;
    } else {
      words_[i / 64] &= ~mask;
    }
  }

  void flip(std::size_t i) { words_[i / 64] ^= std::uint64_t{1} << (i % 64); }

  std::vector<int> to_signs() const {
    std::vector<int> out(length_);
    for (std::size_t i = 0; i < length_; ++i) out[i] = sign(i);
    return out;
  }

  std::vector<double> to_real() const {
    std::vector<double> out(length_);
    for (std::size_t i = 0; i < length_; ++i) out[i] = sign(i);
    return out;
  }

  std::string to_string() const {
    std::string out(length_, '0');
    for (std::size_t i = 0; i < length_; ++i)
      if (bit(i)) out[i] = '1';
    return out;
  }

  /// Bits [first, first + count) as a new code.
  BinaryCode slice(std::size_t first, std::size_t count) const {
    if (count == 0 || first + count > length_)
      fail_argument("BinaryCode::slice: range out of bounds");
    BinaryCode out(count);
    for (std::size_t i = 0; i < count; ++i) out.set(i, bit(first + i));
    return out;
  }

  friend bool operator==(const BinaryCode&, const BinaryCode&) = default;

  /// Orders by the bit string (bit 0 first, '0' < '1').
  friend bool lexicographic_less(const BinaryCode& a, const BinaryCode& b) {
    const std::size_t n = std::min(a.length_, b.length_);
    for (std::size_t i = 0; i < n; ++i) {
      if (a.bit(i) != b.bit(i)) return !a.bit(i);
    }
    return a.length_ < b.length_;
  }

private:
  std::size_t length_ = 0;
  std::vector<std::uint64_t> words_;
};

struct BinaryCodeHash {
  std::size_t operator()(const BinaryCode& code) const noexcept {
    std::uint64_t h = 0xcbf29ce484222325ull ^ code.length();
    for (std::uint64_t w : code.words()) {
      h ^= w;
      h *= 0x100000001b3ull;
      h ^= h >> 29;
    }
    return static_cast<std::size_t>(h);
  }
};

inline std::size_t hamming_distance(const BinaryCode& a, const BinaryCode& b) {
  if (a.length() != b.length())
    fail_argument("hamming_distance: length mismatch (" + std::to_string(a.length()) +
                  " vs " + std::to_string(b.length()) + ")");
  const auto wa = a.words();
  const auto wb = b.words();
  std::size_t count = 0;
  for (std::size_t i = 0; i < wa.size(); ++i) count += std::popcount(wa[i] ^ wb[i]);
  return count;
}

/// Squared Euclidean distance between the ±1 vectors: each differing bit adds (±2)^2.
inline std::size_t sq_euclidean(const BinaryCode& a, const BinaryCode& b) {
  return 4 * hamming_distance(a, b);
}

/// Ordered list of candidate codes sharing one length.
class Codebook {
public:
  Codebook() = default;

  Codebook(std::size_t bits, std::vector<BinaryCode> codes)
      : bits_(bits), codes_(std::move(codes)) {
    if (bits_ == 0) fail_argument("Codebook: K must be >= 1");
    if (codes_.empty()) fail_argument("Codebook: M must be >= 1");
    for (const auto& c : codes_)
      if (c.length() != bits_) fail_argument("Codebook: code length differs from K");
  }

  std::size_t bits() const noexcept { return bits_; }
  std::size_t size() const noexcept { return codes_.size(); }
  const BinaryCode& operator[](std::size_t i) const { return codes_.at(i); }
  const std::vector<BinaryCode>& codes() const noexcept { return codes_; }

  /// Indices m whose code repeats an earlier entry.
  std::vector<std::size_t> duplicate_indices() const {
    std::unordered_set<BinaryCode, BinaryCodeHash> seen;
    std::vector<std::size_t> dups;
    for (std::size_t m = 0; m < codes_.size(); ++m)
      if (!seen.insert(codes_[m]).second) dups.push_back(m);
    return dups;
  }

  bool all_distinct() const { return duplicate_indices().empty(); }

  friend bool operator==(const Codebook&, const Codebook&) = default;

private:
  std::size_t bits_ = 0;
  std::vector<BinaryCode> codes_;
};

inline BinaryCode random_code(std::size_t bits, Rng& rng) {
  BinaryCode code(bits);
  std::bernoulli_distribution coin(0.5);
  for (std::size_t i = 0; i < bits; ++i) code.set(i, coin(rng));
  return code;
}

struct BernoulliCodebook {
  Codebook codebook;
  std::vector<std::size_t> duplicates;  // see Codebook::duplicate_indices
};

/// Every bit drawn independently with P(+1) = 0.5. Duplicates are reported, not removed.
inline BernoulliCodebook sample_codebook_bernoulli(std::size_t bits, std::size_t count,
                                                   std::uint64_t seed) {
  if (bits == 0 || count == 0) fail_argument("sample_codebook_bernoulli: K and M must be >= 1");
  Rng rng = make_rng(seed, Stream::codebook);
  std::vector<BinaryCode> codes;
  codes.reserve(count);
  for (std::size_t m = 0; m < count; ++m) codes.push_back(random_code(bits, rng));
  Codebook book(bits, std::move(codes));
  auto dups = book.duplicate_indices();
  return {std::move(book), std::move(dups)};
}

inline constexpr std::size_t kMaxEnumeratedBits = 20;

/// M pairwise-distinct codes, uniform over M-subsets. Small spaces are
/// enumerated and shuffled; larger ones use rejection against a seen-set.
inline Codebook sample_codebook_unique(std::size_t bits, std::size_t count, std::uint64_t seed) {
  if (bits == 0 || count == 0) fail_argument("sample_codebook_unique: K and M must be >= 1");
  if (bits < 64 && count > (std::uint64_t{1} << bits))
    fail_argument("sample_codebook_unique: M=" + std::to_string(count) + " exceeds 2^K=" +
                  std::to_string(std::uint64_t{1} << bits));
  Rng rng = make_rng(seed, Stream::codebook);
  std::vector<BinaryCode> codes;
  codes.reserve(count);
  if (bits <= kMaxEnumeratedBits) {
    std::vector<std::uint32_t> space(std::size_t{1} << bits);
    std::iota(space.begin(), space.end(), 0u);
    // partial Fisher-Yates: only the first M slots are needed
    for (std::size_t i = 0; i < count; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, space.size() - 1);
      std::swap(space[i], space[pick(rng)]);
      codes.push_back(BinaryCode::from_integer(space[i], bits));
    }
  } else {
    std::unordered_set<BinaryCode, BinaryCodeHash> seen;
    while (codes.size() < count) {
      BinaryCode code = random_code(bits, rng);
      if (seen.insert(code).second) codes.push_back(std::move(code));
    }
  }
  return Codebook(bits, std::move(codes));
}

/// H heads of d contiguous bits each.
struct HeadLayout {
  std::size_t heads = 1;
  std::size_t width = 0;

  std::size_t bits() const noexcept { return heads * width; }

  static HeadLayout split(std::size_t bits, std::size_t heads) {
    if (heads == 0 || bits == 0 || bits % heads != 0)
      fail_argument("HeadLayout: H=" + std::to_string(heads) + " does not divide K=" +
                    std::to_string(bits));
    return {heads, bits / heads};
  }

  friend bool operator==(const HeadLayout&, const HeadLayout&) = default;
};

/// floor(K / ceil(log2 M)): the most heads whose d-bit sub-codebooks can
/// still hold M distinct entries. May be 0 when even one head cannot.
inline std::size_t max_heads(std::size_t bits, std::size_t count) {
  if (count < 2) fail_argument("max_heads: M must be >= 2");
  const std::size_t log2_ceil = std::bit_width(count - 1);
  return bits / log2_ceil;
}

/// Throws when strict collision-free heads are impossible for this layout.
inline void check_strict_layout(const HeadLayout& layout, std::size_t count) {
  if (count >= 2 && layout.heads > max_heads(layout.bits(), count))
    fail_argument("HeadLayout: H=" + std::to_string(layout.heads) + " exceeds max_heads(K=" +
                  std::to_string(layout.bits()) + ", M=" + std::to_string(count) +
                  ")=" + std::to_string(max_heads(layout.bits(), count)));
}

inline BinaryCode head_slice(const BinaryCode& code, const HeadLayout& layout, std::size_t head) {
  if (layout.bits() != code.length())
    fail_argument("head_slice: layout covers " + std::to_string(layout.bits()) +
                  " bits but code has " + std::to_string(code.length()));
  if (head >= layout.heads)
    fail_argument("head_slice: head " + std::to_string(head) + " out of range [0," +
                  std::to_string(layout.heads) + ")");
  return code.slice(head * layout.width, layout.width);
}

inline BinaryCode concat_heads(std::span<const BinaryCode> parts) {
  if (parts.empty()) fail_argument("concat_heads: no parts");
  const std::size_t width = parts.front().length();
  BinaryCode out(width * parts.size());
  for (std::size_t h = 0; h < parts.size(); ++h) {
    if (parts[h].length() != width)
      fail_argument("concat_heads: part " + std::to_string(h) + " has length " +
                    std::to_string(parts[h].length()) + ", expected " + std::to_string(width));
    for (std::size_t i = 0; i < width; ++i) out.set(h * width + i, parts[h].bit(i));
  }
  return out;
}

/// Minimum and mean pairwise Hamming distance. The mean is kept as the
/// exact ratio sum / pairs.
struct DistanceStats {
  std::size_t d_min = 0;
  std::uint64_t distance_sum = 0;
  std::uint64_t pair_count = 0;

  double d_avg() const { return static_cast<double>(distance_sum) / static_cast<double>(pair_count); }
};

inline DistanceStats codebook_distance_stats(std::span<const BinaryCode> centers) {
  if (centers.size() < 2) fail_argument("codebook_distance_stats: need at least 2 centers");
  DistanceStats stats;
  stats.d_min = centers.front().length() + 1;
  for (std::size_t i = 0; i < centers.size(); ++i) {
    for (std::size_t j = i + 1; j < centers.size(); ++j) {
      const std::size_t d = hamming_distance(centers[i], centers[j]);
      stats.d_min = std::min(stats.d_min, d);
      stats.distance_sum += d;
      ++stats.pair_count;
    }
  }
  return stats;
}

}  // namespace crh
