#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "crh/dataset.hpp"
#include "crh/error.hpp"
#include "crh/hamming.hpp"

namespace crh {

inline bool shares_label(const LabelSet& a, const LabelSet& b) {
  auto i = a.begin();
  auto j = b.begin();
  while (i != a.end() && j != b.end()) {
    if (*i == *j) return true;
    if (*i < *j) ++i; else ++j;
  }
  return false;
}

struct MapOptions {
  std::size_t top_k = 0;               // 0: rank the whole database
  bool exclude_no_relevant = false;    // drop queries with no hit in the top k
};

struct MapResult {
  double map = 0.0;
  std::size_t num_queries = 0;         // queries averaged over
  std::size_t queries_without_hits = 0;
};

/// Ranks the database by Hamming distance (stable by database index); AP is
/// the mean of precision at each hit rank within the top k.
inline double average_precision(const BinaryCode& query, const LabelSet& query_labels,
                                std::span<const BinaryCode> database, std::span<const LabelSet> database_labels,
                                std::size_t top_k, std::vector<std::size_t>& order) {
  const std::size_t K = query.length();
  // counting sort keeps equal distances in index order
  std::vector<std::size_t> bucket(K + 2, 0);
  std::vector<std::size_t> dist(database.size());
  for (std::size_t i = 0; i < database.size(); ++i) {
    dist[i] = hamming_distance(query, database[i]);
    ++bucket[dist[i] + 1];
  }
  for (std::size_t d = 1; d < bucket.size(); ++d) bucket[d] += bucket[d - 1];
  order.resize(database.size());
  for (std::size_t i = 0; i < database.size(); ++i) order[bucket[dist[i]]++] = i;

  const std::size_t limit = top_k == 0 ? database.size() : std::min(top_k, database.size());
  double precision_sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t rank = 0; rank < limit; ++rank) {
    if (shares_label(query_labels, database_labels[order[rank]])) {
      ++hits;
      precision_sum += static_cast<double>(hits) / static_cast<double>(rank + 1);
    }
  }
  return hits == 0 ? -1.0 : precision_sum / static_cast<double>(hits);
}

inline MapResult map_at_k(std::span<const BinaryCode> database, std::span<const LabelSet> database_labels,
                          std::span<const BinaryCode> queries, std::span<const LabelSet> query_labels,
                          const MapOptions& options = {}) {
  if (database.empty() || queries.empty()) fail_argument("map_at_k: empty database or query set");
  if (database.size() != database_labels.size() || queries.size() != query_labels.size())
    fail_argument("map_at_k: codes and labels differ in count");
  MapResult out;
  std::vector<std::size_t> order;
  double sum = 0.0;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const double ap = average_precision(queries[q], query_labels[q], database, database_labels, options.top_k, order);
    if (ap < 0.0) {
      ++out.queries_without_hits;
      if (options.exclude_no_relevant) continue;
      ++out.num_queries;
      continue;
    }
    sum += ap;
    ++out.num_queries;
  }
  out.map = out.num_queries == 0 ? 0.0 : sum / static_cast<double>(out.num_queries);
  return out;
}

/// Per-class weighted mean of embeddings, sample weight 1/||y||_1.
inline std::vector<std::vector<double>> class_prototypes(const Embeddings& embeddings, std::span<const LabelSet> labels,
                                                         std::size_t classes) {
  if (embeddings.count() != labels.size())
    fail_argument("class_prototypes: " + std::to_string(embeddings.count()) + " embeddings for " +
                  std::to_string(labels.size()) + " samples");
  const std::size_t E = embeddings.dim;
  std::vector<std::vector<double>> sums(classes, std::vector<double>(E, 0.0));
  std::vector<double> weights(classes, 0.0);
  for (std::size_t n = 0; n < labels.size(); ++n) {
    const double w = 1.0 / static_cast<double>(labels[n].size());
    const auto row = embeddings.row(n);
    for (auto c : labels[n]) {
      if (c >= classes) fail_argument("class_prototypes: label out of range");
      weights[c] += w;
      for (std::size_t e = 0; e < E; ++e) sums[c][e] += w * row[e];
    }
  }
  for (std::size_t c = 0; c < classes; ++c) {
    if (weights[c] == 0.0) fail_data("class_prototypes: class " + std::to_string(c) + " has no samples");
    for (auto& v : sums[c]) v /= weights[c];
  }
  return sums;
}

/// Symmetric C x C cosine matrix, row-major.
struct SimilarityMatrix {
  std::size_t size = 0;
  std::vector<double> values;

  double operator()(std::size_t i, std::size_t j) const { return values[i * size + j]; }

  std::vector<double> upper_triangle() const {
    std::vector<double> out;
    out.reserve(size * (size - 1) / 2);
    for (std::size_t i = 0; i < size; ++i)
      for (std::size_t j = i + 1; j < size; ++j) out.push_back((*this)(i, j));
    return out;
  }
};

inline SimilarityMatrix cosine_similarity_matrix(std::span<const std::vector<double>> vectors) {
  const std::size_t C = vectors.size();
  if (C == 0) fail_argument("cosine_similarity_matrix: no vectors");
  std::vector<double> norms(C);
  for (std::size_t i = 0; i < C; ++i) {
    if (vectors[i].size() != vectors[0].size()) fail_argument("cosine_similarity_matrix: vectors differ in length");
    double s = 0.0;
    for (double x : vectors[i]) s += x * x;
    norms[i] = std::sqrt(s);
    if (norms[i] == 0.0) fail_argument("cosine_similarity_matrix: vector " + std::to_string(i) + " is zero");
  }
  SimilarityMatrix m{C, std::vector<double>(C * C, 0.0)};
  for (std::size_t i = 0; i < C; ++i) {
    m.values[i * C + i] = 1.0;
    for (std::size_t j = i + 1; j < C; ++j) {
      double dot = 0.0;
      for (std::size_t e = 0; e < vectors[i].size(); ++e) dot += vectors[i][e] * vectors[j][e];
      const double cs = std::clamp(dot / (norms[i] * norms[j]), -1.0, 1.0);
      m.values[i * C + j] = cs;
      m.values[j * C + i] = cs;
    }
  }
  return m;
}

/// For +-1 codes cos(c_i, c_j) = 1 - 2 d_H / K.
inline SimilarityMatrix cosine_similarity_matrix(std::span<const BinaryCode> codes) {
  const std::size_t C = codes.size();
  if (C == 0) fail_argument("cosine_similarity_matrix: no codes");
  const double K = static_cast<double>(codes.front().length());
  SimilarityMatrix m{C, std::vector<double>(C * C, 1.0)};
  for (std::size_t i = 0; i < C; ++i)
    for (std::size_t j = i + 1; j < C; ++j) {
      const double cs = 1.0 - 2.0 * static_cast<double>(hamming_distance(codes[i], codes[j])) / K;
      m.values[i * C + j] = cs;
      m.values[j * C + i] = cs;
    }
  return m;
}

/// Pearson correlation of the strictly-upper-triangle entries.
inline double pcc(const SimilarityMatrix& a, const SimilarityMatrix& b) {
  if (a.size != b.size) fail_argument("pcc: matrices differ in size");
  if (a.size < 3) fail_argument("pcc: need C >= 3");
  const auto x = a.upper_triangle();
  const auto y = b.upper_triangle();
  auto constant = [](const std::vector<double>& v) {
    return std::adjacent_find(v.begin(), v.end(), std::not_equal_to<>()) == v.end();
  };
  if (constant(x) || constant(y)) fail_data("pcc: constant similarity matrix (zero variance)");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) fail_data("pcc: constant similarity matrix (zero variance)");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

struct AlignmentReport {
  double pcc = 0.0;
  DistanceStats distances;
};

/// PCC between the centers' cosine matrix and a reference similarity
/// matrix, plus the centers' pairwise distance statistics.
inline AlignmentReport semantic_alignment_report(std::span<const BinaryCode> centers, const SimilarityMatrix& reference) {
  if (centers.size() != reference.size)
    fail_argument("semantic_alignment_report: " + std::to_string(centers.size()) + " centers vs reference of size " +
                  std::to_string(reference.size));
  AlignmentReport r;
  r.pcc = pcc(cosine_similarity_matrix(centers), reference);
  r.distances = codebook_distance_stats(centers);
  return r;
}

inline AlignmentReport semantic_alignment_report(std::span<const BinaryCode> centers, const Embeddings& embeddings,
                                                 std::span<const LabelSet> labels) {
  const auto protos = class_prototypes(embeddings, labels, centers.size());
  return semantic_alignment_report(centers, cosine_similarity_matrix(protos));
}

}  // namespace crh
