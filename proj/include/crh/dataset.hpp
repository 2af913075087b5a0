#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "crh/detail/bytes.hpp"
#include "crh/error.hpp"
#include "crh/random.hpp"

namespace crh {

/// Class indices carried by one sample, sorted and unique (the nonzero
/// positions of its multi-hot label).
using LabelSet = std::vector<std::uint32_t>;

struct Dataset {
  std::size_t dim = 0;
  std::size_t classes = 0;
  std::vector<float> features;  // size() x dim, row-major
  std::vector<LabelSet> labels;
  bool single_label = false;

  std::size_t size() const noexcept { return labels.size(); }

  std::span<const float> feature(std::size_t n) const {
    return std::span<const float>(features).subspan(n * dim, dim);
  }

  /// Enforces the invariants every consumer relies on.
  void validate() const {
    if (dim == 0) fail_data("dataset: D must be >= 1");
    if (classes == 0) fail_data("dataset: C must be >= 1");
    if (features.size() != labels.size() * dim)
      fail_data("dataset: feature buffer holds " + std::to_string(features.size()) +
                " values, expected " + std::to_string(labels.size() * dim));
    for (std::size_t n = 0; n < labels.size(); ++n) {
      const auto& y = labels[n];
      if (y.empty()) fail_data("dataset: sample " + std::to_string(n) + " has no label");
      if (single_label && y.size() != 1)
        fail_data("dataset: sample " + std::to_string(n) + " has " + std::to_string(y.size()) +
                  " labels but the dataset is flagged single-label");
      for (std::size_t i = 0; i < y.size(); ++i) {
        if (y[i] >= classes)
          fail_data("dataset: sample " + std::to_string(n) + " label " + std::to_string(y[i]) +
                    " out of range (C=" + std::to_string(classes) + ")");
        if (i > 0 && y[i] <= y[i - 1])
          fail_data("dataset: sample " + std::to_string(n) + " labels not sorted/unique");
      }
    }
    for (float v : features)
      if (!std::isfinite(v)) fail_data("dataset: non-finite feature value");
  }

  /// Number of samples carrying each class.
  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> counts(classes, 0);
    for (const auto& y : labels)
      for (auto c : y) ++counts[c];
    return counts;
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// CRHF layout: "CRHF", u32 version=1, u64 N, u32 D, u32 C, u8 flags
// (bit0 = single_label), then per sample D float32 followed by a
// ceil(C/8)-byte label bitmap (bit c = class c, padding zero).

inline constexpr std::uint32_t kDatasetFileVersion = 1;

inline std::vector<std::uint8_t> encode_dataset(const Dataset& ds) {
  ds.validate();
  detail::ByteWriter w;
  w.magic("CRHF");
  w.u32(kDatasetFileVersion);
  w.u64(ds.size());
  w.u32(static_cast<std::uint32_t>(ds.dim));
  w.u32(static_cast<std::uint32_t>(ds.classes));
  w.u8(ds.single_label ? 1 : 0);
  const std::size_t label_bytes = (ds.classes + 7) / 8;
  std::vector<std::uint8_t> bitmap(label_bytes);
  for (std::size_t n = 0; n < ds.size(); ++n) {
    for (float v : ds.feature(n)) w.f32(v);
    std::fill(bitmap.begin(), bitmap.end(), 0);
    for (auto c : ds.labels[n]) bitmap[c / 8] |= static_cast<std::uint8_t>(1u << (c % 8));
    w.bytes(bitmap.data(), bitmap.size());
  }
  return w.buffer();
}

inline Dataset decode_dataset(detail::ByteReader& r) {
  r.expect_magic("CRHF");
  const auto version = r.u32("version");
  if (version != kDatasetFileVersion) r.fail("unsupported version " + std::to_string(version));
  Dataset ds;
  const auto count = r.u64("N");
  ds.dim = r.u32("D");
  ds.classes = r.u32("C");
  const auto flags = r.u8("flags");
  if (ds.dim == 0 || ds.classes == 0) r.fail("D and C must be positive");
  if (flags & ~1u) r.fail("unknown flag bits");
  ds.single_label = flags & 1u;
  const std::size_t label_bytes = (ds.classes + 7) / 8;
  const std::size_t record = ds.dim * 4 + label_bytes;
  if (count > r.remaining() / record || count * record != r.remaining())
    r.fail("record section holds " + std::to_string(r.remaining()) + " bytes, expected " +
           std::to_string(count * record) + " for N=" + std::to_string(count));
  ds.features.resize(count * ds.dim);
  ds.labels.resize(count);
  for (std::size_t n = 0; n < count; ++n) {
    r.read(ds.features.data() + n * ds.dim, ds.dim * 4, "features");
    const std::size_t bitmap_at = r.offset();
    LabelSet y;
    for (std::size_t byte = 0; byte < label_bytes; ++byte) {
      const std::uint8_t v = r.u8("labels");
      for (std::size_t b = 0; b < 8; ++b) {
        if (!((v >> b) & 1u)) continue;
        const std::size_t c = byte * 8 + b;
        if (c >= ds.classes)
          fail_data("label " + std::to_string(c) + " out of range (C=" + std::to_string(ds.classes) +
                    ") in sample " + std::to_string(n) + " at byte offset " + std::to_string(bitmap_at + byte));
        y.push_back(static_cast<std::uint32_t>(c));
      }
    }
    if (y.empty())
      fail_data("sample " + std::to_string(n) + " has no label at byte offset " + std::to_string(bitmap_at));
    if (ds.single_label && y.size() != 1)
      fail_data("sample " + std::to_string(n) + " has multiple labels in a single-label file at byte offset " +
                std::to_string(bitmap_at));
    ds.labels[n] = std::move(y);
  }
  for (std::size_t i = 0; i < ds.features.size(); ++i)
    if (!std::isfinite(ds.features[i]))
      fail_data("non-finite feature in sample " + std::to_string(i / ds.dim));
  return ds;
}

inline void write_dataset(const Dataset& ds, const std::string& path) {
  detail::ByteWriter w;
  const auto bytes = encode_dataset(ds);
  w.bytes(bytes.data(), bytes.size());
  w.save(path);
}

inline Dataset read_dataset(const std::string& path) {
  auto r = detail::ByteReader::open(path);
  return decode_dataset(r);
}

// CRHE layout: "CRHE", u32 version=1, u64 N, u32 E, then N*E float32.

struct Embeddings {
  std::size_t dim = 0;
  std::vector<float> values;  // count() x dim

  std::size_t count() const noexcept { return dim == 0 ? 0 : values.size() / dim; }
  std::span<const float> row(std::size_t n) const {
    return std::span<const float>(values).subspan(n * dim, dim);
  }

  friend bool operator==(const Embeddings&, const Embeddings&) = default;
};

inline void write_embeddings(const Embeddings& emb, const std::string& path) {
  if (emb.dim == 0 || emb.values.size() % emb.dim != 0) fail_argument("write_embeddings: inconsistent shape");
  detail::ByteWriter w;
  w.magic("CRHE");
  w.u32(kDatasetFileVersion);
  w.u64(emb.count());
  w.u32(static_cast<std::uint32_t>(emb.dim));
  for (float v : emb.values) w.f32(v);
  w.save(path);
}

/// expected_count of 0 accepts any record count.
inline Embeddings read_embeddings(const std::string& path, std::size_t expected_count = 0) {
  auto r = detail::ByteReader::open(path);
  r.expect_magic("CRHE");
  const auto version = r.u32("version");
  if (version != kDatasetFileVersion) r.fail("unsupported version " + std::to_string(version));
  const auto count = r.u64("N");
  Embeddings emb;
  emb.dim = r.u32("E");
  if (emb.dim == 0) r.fail("E must be positive");
  if (expected_count != 0 && count != expected_count)
    r.fail("embedding count " + std::to_string(count) + " does not match expected " +
           std::to_string(expected_count));
  if (count > r.remaining() / (emb.dim * 4) || count * emb.dim * 4 != r.remaining())
    r.fail("payload holds " + std::to_string(r.remaining()) + " bytes, expected " +
           std::to_string(count * emb.dim * 4));
  emb.values.resize(count * emb.dim);
  r.read(emb.values.data(), emb.values.size() * 4, "embeddings");
  return emb;
}

/// CSV rows: feature columns, then a last column of ';'-separated class
/// indices. A first row whose leading field is not numeric is a header.
/// classes of 0 infers C as max label + 1.
inline Dataset import_csv(std::istream& in, std::size_t classes = 0) {
  Dataset ds;
  std::string line;
  std::size_t line_no = 0;
  std::uint32_t max_label = 0;
  bool all_single = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (line.back() == ',') fields.emplace_back();
    auto parse_double = [&](const std::string& s, double& out) {
      char* end = nullptr;
      out = std::strtod(s.c_str(), &end);
      return !s.empty() && end == s.c_str() + s.size();
    };
    double probe = 0;
    if (ds.labels.empty() && ds.dim == 0 && !fields.empty() && !parse_double(fields[0], probe))
      continue;  // header
    if (fields.size() < 2) fail_data("csv line " + std::to_string(line_no) + ": need features and a label column");
    const std::size_t dim = fields.size() - 1;
    if (ds.dim == 0) ds.dim = dim;
    if (dim != ds.dim)
      fail_data("csv line " + std::to_string(line_no) + ": " + std::to_string(dim) +
                " feature columns, expected " + std::to_string(ds.dim));
    for (std::size_t i = 0; i < dim; ++i) {
      double v = 0;
      if (!parse_double(fields[i], v) || !std::isfinite(v))
        fail_data("csv line " + std::to_string(line_no) + " column " + std::to_string(i + 1) +
                  ": bad number '" + fields[i] + "'");
      ds.features.push_back(static_cast<float>(v));
    }
    LabelSet y;
    std::stringstream ls(fields.back());
    std::string tok;
    while (std::getline(ls, tok, ';')) {
      if (tok.empty()) continue;
      char* end = nullptr;
      const long c = std::strtol(tok.c_str(), &end, 10);
      if (end != tok.c_str() + tok.size() || c < 0)
        fail_data("csv line " + std::to_string(line_no) + ": bad label '" + tok + "'");
      y.push_back(static_cast<std::uint32_t>(c));
    }
    std::sort(y.begin(), y.end());
    y.erase(std::unique(y.begin(), y.end()), y.end());
    if (y.empty()) fail_data("csv line " + std::to_string(line_no) + ": no label");
    max_label = std::max(max_label, y.back());
    all_single = all_single && y.size() == 1;
    ds.labels.push_back(std::move(y));
  }
  if (ds.labels.empty()) fail_data("csv: no records");
  ds.classes = classes == 0 ? max_label + 1 : classes;
  ds.single_label = all_single;
  ds.validate();
  return ds;
}

/// Parameters of the hierarchical Gaussian generator.
struct SynthSpec {
  std::size_t classes = 16;
  std::size_t superclasses = 4;
  std::size_t dim = 32;
  std::size_t samples_per_class = 100;
  double sigma_super = 4.0;
  double sigma_class = 1.0;
  double sigma_noise = 0.5;
  std::uint64_t seed = 0;
  double cooccurrence = 0.0;

  void validate() const {
    if (classes < 1 || dim < 1 || samples_per_class < 1) fail_argument("SynthSpec: C, D and samples must be >= 1");
    if (superclasses < 1 || superclasses > classes) fail_argument("SynthSpec: need 1 <= G <= C");
    if (!(sigma_super > 0) || !(sigma_class > 0)) fail_argument("SynthSpec: sigma_super and sigma_class must be > 0");
    if (!(sigma_noise >= 0)) fail_argument("SynthSpec: sigma_noise must be >= 0");
    if (!(cooccurrence >= 0 && cooccurrence < 1)) fail_argument("SynthSpec: rho must be in [0,1)");
  }

  /// Contiguous blocks: class c belongs to superclass floor(c*G/C).
  std::size_t superclass_of(std::size_t c) const { return c * superclasses / classes; }
};

struct SyntheticData {
  Dataset dataset;
  std::vector<std::vector<double>> prototypes;  // ground-truth class prototypes, E = D
};

inline SyntheticData generate_synthetic(const SynthSpec& spec) {
  spec.validate();
  Rng rng = make_rng(spec.seed, Stream::synthetic);
  std::normal_distribution<double> unit(0.0, 1.0);
  const std::size_t D = spec.dim;

  std::vector<std::vector<double>> super(spec.superclasses, std::vector<double>(D));
  for (auto& p : super)
    for (auto& v : p) v = spec.sigma_super * unit(rng);

  SyntheticData out;
  out.prototypes.assign(spec.classes, std::vector<double>(D));
  for (std::size_t c = 0; c < spec.classes; ++c)
    for (std::size_t i = 0; i < D; ++i)
      out.prototypes[c][i] = super[spec.superclass_of(c)][i] + spec.sigma_class * unit(rng);

  Dataset& ds = out.dataset;
  ds.dim = D;
  ds.classes = spec.classes;
  ds.single_label = spec.cooccurrence == 0.0;
  ds.features.reserve(spec.classes * spec.samples_per_class * D);
  std::bernoulli_distribution extra(spec.cooccurrence);
  for (std::size_t c = 0; c < spec.classes; ++c) {
    std::vector<std::uint32_t> siblings;
    for (std::size_t o = 0; o < spec.classes; ++o)
      if (o != c && spec.superclass_of(o) == spec.superclass_of(c)) siblings.push_back(static_cast<std::uint32_t>(o));
    for (std::size_t s = 0; s < spec.samples_per_class; ++s) {
      for (std::size_t i = 0; i < D; ++i) {
        const double noise = spec.sigma_noise > 0 ? spec.sigma_noise * unit(rng) : 0.0;
        ds.features.push_back(static_cast<float>(out.prototypes[c][i] + noise));
      }
      LabelSet y{static_cast<std::uint32_t>(c)};
      if (spec.cooccurrence > 0 && !siblings.empty() && extra(rng)) {
        std::uniform_int_distribution<std::size_t> pick(0, siblings.size() - 1);
        y.push_back(siblings[pick(rng)]);
        std::sort(y.begin(), y.end());
      }
      ds.labels.push_back(std::move(y));
    }
  }
  ds.single_label = std::all_of(ds.labels.begin(), ds.labels.end(), [](const LabelSet& y) { return y.size() == 1; });
  return out;
}

}  // namespace crh
