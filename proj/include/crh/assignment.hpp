#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "crh/dataset.hpp"
#include "crh/error.hpp"
#include "crh/hamming.hpp"
#include "crh/random.hpp"

namespace crh {

__extension__ using Int128 = __int128;

/// Nonnegative ratio num/den kept unreduced; equality is by cross-product.
struct Rational {
  std::int64_t num = 0;
  std::int64_t den = 1;

  double to_double() const { return static_cast<double>(num) / static_cast<double>(den); }

  friend bool operator==(const Rational& a, const Rational& b) {
    return static_cast<Int128>(a.num) * b.den == static_cast<Int128>(b.num) * a.den;
  }
  friend bool operator<(const Rational& a, const Rational& b) {
    return static_cast<Int128>(a.num) * b.den < static_cast<Int128>(b.num) * a.den;
  }
};

namespace detail {

inline std::int64_t checked_mul(std::int64_t a, std::int64_t b) {
  std::int64_t out = 0;
  if (__builtin_mul_overflow(a, b, &out)) fail_data("cost matrix: integer overflow in exact weights");
  return out;
}

inline std::int64_t checked_add(std::int64_t a, std::int64_t b) {
  std::int64_t out = 0;
  if (__builtin_add_overflow(a, b, &out)) fail_data("cost matrix: integer overflow in exact weights");
  return out;
}

}  // namespace detail

/// Dense row-major matrix of solver costs.
struct CostGrid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  CostGrid() = default;
  CostGrid(std::size_t r, std::size_t c, std::vector<double> v) : rows(r), cols(c), values(std::move(v)) {
    if (values.size() != rows * cols) fail_argument("CostGrid: value count does not match shape");
  }
  CostGrid(std::initializer_list<std::initializer_list<double>> init) {
    rows = init.size();
    cols = rows ? init.begin()->size() : 0;
    for (const auto& row : init) {
      if (row.size() != cols) fail_argument("CostGrid: ragged rows");
      values.insert(values.end(), row.begin(), row.end());
    }
  }

  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

/// C x M' class-to-sub-code costs: entry (c,m) is the label-weighted mean of
/// ||sign(h_x) - z_m||^2 over samples x carrying class c, weight 1/||y_x||_1.
class CostMatrix {
public:
  CostMatrix(std::size_t classes, std::size_t columns, std::vector<std::int64_t> numerators,
             std::vector<std::int64_t> row_denominators)
      : classes_(classes), columns_(columns), num_(std::move(numerators)), den_(std::move(row_denominators)) {}

  std::size_t classes() const noexcept { return classes_; }
  std::size_t columns() const noexcept { return columns_; }

  Rational at(std::size_t c, std::size_t m) const { return {num_[c * columns_ + m], den_[c]}; }
  double value(std::size_t c, std::size_t m) const { return at(c, m).to_double(); }

  /// Each entry rounded once from its exact ratio.
  CostGrid to_grid() const {
    std::vector<double> v(classes_ * columns_);
    for (std::size_t c = 0; c < classes_; ++c)
      for (std::size_t m = 0; m < columns_; ++m) v[c * columns_ + m] = value(c, m);
    return CostGrid(classes_, columns_, std::move(v));
  }

  friend bool operator==(const CostMatrix& a, const CostMatrix& b) {
    if (a.classes_ != b.classes_ || a.columns_ != b.columns_) return false;
    for (std::size_t c = 0; c < a.classes_; ++c)
      for (std::size_t m = 0; m < a.columns_; ++m)
        if (!(a.at(c, m) == b.at(c, m))) return false;
    return true;
  }

private:
  std::size_t classes_;
  std::size_t columns_;
  std::vector<std::int64_t> num_;
  std::vector<std::int64_t> den_;
};

/// Streams (code, labels) pairs into integer per-class tallies bucketed by
/// label count, so the weighted means stay exact whatever order samples
/// arrive in.
class CostAccumulator {
public:
  CostAccumulator(std::size_t classes, std::vector<BinaryCode> sub_codebook)
      : classes_(classes), columns_(std::move(sub_codebook)), buckets_(classes) {
    if (classes_ == 0) fail_argument("CostAccumulator: C must be >= 1");
    if (columns_.empty()) fail_argument("CostAccumulator: empty sub-codebook");
    for (const auto& z : columns_)
      if (z.length() != columns_.front().length()) fail_argument("CostAccumulator: sub-codes differ in width");
  }

  std::size_t width() const { return columns_.front().length(); }

  void add(const BinaryCode& code, const LabelSet& labels) {
    if (code.length() != width())
      fail_argument("cost matrix: code width " + std::to_string(code.length()) + " does not match sub-codebook width " +
                    std::to_string(width()));
    if (labels.empty()) fail_argument("cost matrix: sample without labels");
    scratch_.resize(columns_.size());
    for (std::size_t m = 0; m < columns_.size(); ++m) scratch_[m] = hamming_distance(code, columns_[m]);
    const auto n = static_cast<std::uint32_t>(labels.size());
    for (auto c : labels) {
      if (c >= classes_) fail_argument("cost matrix: label " + std::to_string(c) + " out of range");
      auto& bucket = buckets_[c][n];
      if (bucket.distance_sums.empty()) bucket.distance_sums.assign(columns_.size(), 0);
      ++bucket.count;
      for (std::size_t m = 0; m < columns_.size(); ++m) bucket.distance_sums[m] += scratch_[m];
    }
  }

  bool empty_class(std::size_t c) const { return buckets_[c].empty(); }

  CostMatrix finalize() const {
    const std::size_t M = columns_.size();
    std::vector<std::int64_t> num(classes_ * M, 0);
    std::vector<std::int64_t> den(classes_, 0);
    for (std::size_t c = 0; c < classes_; ++c) {
      if (buckets_[c].empty()) fail_data("cost matrix: class " + std::to_string(c) + " has no samples");
      // common multiple of the label counts present, so 1/n becomes L/n
      std::int64_t L = 1;
      for (const auto& [n, bucket] : buckets_[c]) L = std::lcm(L, static_cast<std::int64_t>(n));
      for (const auto& [n, bucket] : buckets_[c]) {
        const std::int64_t weight = L / n;
        den[c] = detail::checked_add(den[c], detail::checked_mul(weight, static_cast<std::int64_t>(bucket.count)));
        for (std::size_t m = 0; m < M; ++m) {
          const std::int64_t sq = detail::checked_mul(4, static_cast<std::int64_t>(bucket.distance_sums[m]));
          num[c * M + m] = detail::checked_add(num[c * M + m], detail::checked_mul(weight, sq));
        }
      }
    }
    return CostMatrix(classes_, M, std::move(num), std::move(den));
  }

private:
  struct Bucket {
    std::uint64_t count = 0;
    std::vector<std::uint64_t> distance_sums;
  };

  std::size_t classes_;
  std::vector<BinaryCode> columns_;
  std::vector<std::map<std::uint32_t, Bucket>> buckets_;  // [class][label count]
  std::vector<std::size_t> scratch_;
};

inline CostMatrix build_cost_matrix(std::span<const BinaryCode> codes, std::span<const LabelSet> labels,
                                    std::size_t classes, std::span<const BinaryCode> sub_codebook) {
  if (codes.size() != labels.size()) fail_argument("build_cost_matrix: codes and labels differ in count");
  CostAccumulator acc(classes, std::vector<BinaryCode>(sub_codebook.begin(), sub_codebook.end()));
  for (std::size_t n = 0; n < codes.size(); ++n) acc.add(codes[n], labels[n]);
  return acc.finalize();
}

struct AssignmentResult {
  std::vector<std::size_t> column;  // column[c] chosen for class c
  double total_cost = 0.0;
};

namespace detail {

inline void check_shape(const CostGrid& cost, const char* who) {
  if (cost.rows == 0) fail_argument(std::string(who) + ": no classes");
  if (cost.rows > cost.cols)
    fail_infeasible(std::string(who) + ": " + std::to_string(cost.rows) + " classes but only " +
                    std::to_string(cost.cols) + " columns");
}

inline double selected_total(const CostGrid& cost, const std::vector<std::size_t>& column) {
  double total = 0.0;
  for (std::size_t c = 0; c < column.size(); ++c) total += cost(c, column[c]);
  return total;
}

}  // namespace detail

/// Exact minimum-cost injective assignment of rows to columns (Kuhn-Munkres
/// with potentials, O(C^2 M)).
inline AssignmentResult hungarian_assign(const CostGrid& cost) {
  detail::check_shape(cost, "hungarian_assign");
  const std::size_t n = cost.rows;
  const std::size_t m = cost.cols;
  constexpr double inf = std::numeric_limits<double>::infinity();
  // 1-based; row 0 and column 0 are sentinels
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> owner(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    owner[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = owner[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[owner[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (owner[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      owner[j0] = owner[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  AssignmentResult out;
  out.column.assign(n, 0);
  for (std::size_t j = 1; j <= m; ++j)
    if (owner[j] != 0) out.column[owner[j] - 1] = j - 1;
  out.total_cost = detail::selected_total(cost, out.column);
  return out;
}

/// Classes in `order` each take their cheapest free column (ties: lowest index).
inline AssignmentResult greedy_assign(const CostGrid& cost, std::span<const std::size_t> order) {
  detail::check_shape(cost, "greedy_assign");
  if (order.size() != cost.rows) fail_argument("greedy_assign: class order is not a permutation of the classes");
  std::vector<char> seen(cost.rows, 0);
  for (auto c : order) {
    if (c >= cost.rows || seen[c]) fail_argument("greedy_assign: class order is not a permutation of the classes");
    seen[c] = 1;
  }
  std::vector<char> taken(cost.cols, 0);
  AssignmentResult out;
  out.column.assign(cost.rows, 0);
  for (auto c : order) {
    std::size_t best = cost.cols;
    for (std::size_t m = 0; m < cost.cols; ++m)
      if (!taken[m] && (best == cost.cols || cost(c, m) < cost(c, best))) best = m;
    taken[best] = 1;
    out.column[c] = best;
  }
  out.total_cost = detail::selected_total(cost, out.column);
  return out;
}

inline std::vector<std::size_t> random_class_order(std::size_t classes, Rng& rng) {
  std::vector<std::size_t> order(classes);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

/// Per-head class -> codebook row mapping. The center of class c is the
/// concatenation over heads h of the h-th slice of row per_head[h][c].
struct CenterAssignment {
  HeadLayout layout;
  std::size_t codebook_size = 0;
  std::vector<std::vector<std::size_t>> per_head;  // [head][class]

  std::size_t classes() const { return per_head.empty() ? 0 : per_head.front().size(); }

  BinaryCode center(std::size_t c, const Codebook& book) const {
    std::vector<BinaryCode> parts;
    parts.reserve(layout.heads);
    for (std::size_t h = 0; h < layout.heads; ++h) parts.push_back(head_slice(book[per_head[h][c]], layout, h));
    return concat_heads(parts);
  }

  std::vector<BinaryCode> centers(const Codebook& book) const {
    std::vector<BinaryCode> out;
    out.reserve(classes());
    for (std::size_t c = 0; c < classes(); ++c) out.push_back(center(c, book));
    return out;
  }

  friend bool operator==(const CenterAssignment&, const CenterAssignment&) = default;
};

/// Distinct d-bit slices of one head, each tagged with the lowest codebook
/// row that produces it.
struct SubCodebook {
  std::vector<BinaryCode> codes;
  std::vector<std::size_t> source_row;
};

inline SubCodebook make_sub_codebook(const Codebook& book, const HeadLayout& layout, std::size_t head) {
  SubCodebook sub;
  std::unordered_map<BinaryCode, std::size_t, BinaryCodeHash> index;
  for (std::size_t m = 0; m < book.size(); ++m) {
    BinaryCode part = head_slice(book[m], layout, head);
    if (index.emplace(part, sub.codes.size()).second) {
      sub.codes.push_back(std::move(part));
      sub.source_row.push_back(m);
    }
  }
  return sub;
}

enum class Solver { greedy, hungarian };

// When the greedy class order is drawn: a fresh permutation per head, or
// one shared by all heads of a reassignment event.
enum class GreedyOrder { per_head, per_event };

struct ReassignOptions {
  Solver solver = Solver::greedy;
  GreedyOrder order = GreedyOrder::per_head;
};

struct ReassignResult {
  CenterAssignment assignment;
  std::vector<double> head_costs;
};

/// Solves each head from its precomputed cost matrix.
inline ReassignResult reassign_from_costs(std::span<const CostMatrix> costs, std::span<const SubCodebook> subs,
                                          const HeadLayout& layout, std::size_t codebook_size,
                                          const ReassignOptions& options, Rng& rng) {
  if (costs.size() != layout.heads || subs.size() != layout.heads)
    fail_argument("reassign: expected one cost matrix and sub-codebook per head");
  ReassignResult out;
  out.assignment.layout = layout;
  out.assignment.codebook_size = codebook_size;
  std::vector<std::size_t> shared_order;
  for (std::size_t h = 0; h < layout.heads; ++h) {
    const CostMatrix& cost = costs[h];
    if (cost.columns() < cost.classes())
      fail_infeasible("reassign: head " + std::to_string(h) + " has " + std::to_string(cost.columns()) +
                      " distinct sub-codes for " + std::to_string(cost.classes()) + " classes");
    const CostGrid grid = cost.to_grid();
    AssignmentResult solved;
    if (options.solver == Solver::hungarian) {
      solved = hungarian_assign(grid);
    } else if (options.order == GreedyOrder::per_event) {
      if (shared_order.empty()) shared_order = random_class_order(cost.classes(), rng);
      solved = greedy_assign(grid, shared_order);
    } else {
      const auto order = random_class_order(cost.classes(), rng);
      solved = greedy_assign(grid, order);
    }
    std::vector<std::size_t> rows(cost.classes());
    for (std::size_t c = 0; c < rows.size(); ++c) rows[c] = subs[h].source_row[solved.column[c]];
    out.assignment.per_head.push_back(std::move(rows));
    out.head_costs.push_back(solved.total_cost);
  }
  return out;
}

/// Slices full K-bit codes per head, builds every head's cost matrix, and solves.
inline ReassignResult reassign_centers(std::span<const BinaryCode> codes, std::span<const LabelSet> labels,
                                       std::size_t classes, const Codebook& book, const HeadLayout& layout,
                                       const ReassignOptions& options, Rng& rng) {
  if (layout.bits() != book.bits()) fail_argument("reassign_centers: layout does not cover the codebook's K bits");
  std::vector<SubCodebook> subs;
  std::vector<CostMatrix> costs;
  for (std::size_t h = 0; h < layout.heads; ++h) {
    subs.push_back(make_sub_codebook(book, layout, h));
    if (subs.back().codes.size() < classes)
      fail_infeasible("reassign_centers: head " + std::to_string(h) + " has " +
                      std::to_string(subs.back().codes.size()) + " distinct sub-codes for " +
                      std::to_string(classes) + " classes");
    CostAccumulator acc(classes, subs.back().codes);
    for (std::size_t n = 0; n < codes.size(); ++n) acc.add(head_slice(codes[n], layout, h), labels[n]);
    costs.push_back(acc.finalize());
  }
  return reassign_from_costs(costs, subs, layout, book.size(), options, rng);
}

/// Fraction of classes whose materialized center differs between two assignments.
inline double center_change_fraction(const CenterAssignment& before, const CenterAssignment& after,
                                     const Codebook& book) {
  if (before.classes() != after.classes() || before.classes() == 0)
    fail_argument("center_change_fraction: class counts differ");
  std::size_t changed = 0;
  for (std::size_t c = 0; c < before.classes(); ++c)
    if (!(before.center(c, book) == after.center(c, book))) ++changed;
  return static_cast<double>(changed) / static_cast<double>(before.classes());
}

namespace detail {

// Calls visit(code) for every code at exactly `radius` flips from `origin`.
// Stops early when visit returns true.
template <typename Visit>
bool for_each_at_radius(const BinaryCode& origin, std::size_t radius, Visit&& visit) {
  const std::size_t K = origin.length();
  if (radius > K) return false;
  std::vector<std::size_t> pos(radius);
  std::iota(pos.begin(), pos.end(), 0);
  while (true) {
    BinaryCode cand = origin;
    for (auto p : pos) cand.flip(p);
    if (visit(cand)) return true;
    // next combination in lexicographic order of positions
    std::size_t i = radius;
    while (i > 0 && pos[i - 1] == K - radius + i - 1) --i;
    if (i == 0) return false;
    ++pos[i - 1];
    for (std::size_t j = i; j < radius; ++j) pos[j] = pos[j - 1] + 1;
  }
}

}  // namespace detail

/// Per-class aggregate sign(sum_x sign(h_x)/||y_x||_1), with sign(0) = +1.
inline std::vector<BinaryCode> class_aggregate_codes(std::span<const BinaryCode> codes,
                                                     std::span<const LabelSet> labels, std::size_t classes) {
  if (codes.size() != labels.size() || codes.empty()) fail_argument("class_aggregate_codes: bad input sizes");
  const std::size_t K = codes.front().length();
  std::vector<std::int64_t> lcm(classes, 1);
  for (const auto& y : labels)
    for (auto c : y) {
      if (c >= classes) fail_argument("class_aggregate_codes: label out of range");
      lcm[c] = std::lcm(lcm[c], static_cast<std::int64_t>(y.size()));
    }
  std::vector<std::int64_t> tally(classes * K, 0);
  std::vector<char> populated(classes, 0);
  for (std::size_t n = 0; n < codes.size(); ++n) {
    if (codes[n].length() != K) fail_argument("class_aggregate_codes: codes differ in length");
    for (auto c : labels[n]) {
      populated[c] = 1;
      const std::int64_t w = lcm[c] / static_cast<std::int64_t>(labels[n].size());
      for (std::size_t k = 0; k < K; ++k) tally[c * K + k] += codes[n].bit(k) ? w : -w;
    }
  }
  std::vector<BinaryCode> out;
  for (std::size_t c = 0; c < classes; ++c) {
    if (!populated[c]) fail_data("class_aggregate_codes: class " + std::to_string(c) + " has no samples");
    BinaryCode z(K);
    for (std::size_t k = 0; k < K; ++k) z.set(k, tally[c * K + k] >= 0);
    out.push_back(std::move(z));
  }
  return out;
}

/// Reassignment over the whole space {-1,+1}^K without materializing it.
/// Classes in `order` take their aggregate code, or the nearest unassigned
/// code to it (ties broken by the lexicographically smallest bit string).
inline std::vector<BinaryCode> fullspace_reassign(std::span<const BinaryCode> codes, std::span<const LabelSet> labels,
                                                  std::size_t classes, std::span<const std::size_t> order) {
  const auto targets = class_aggregate_codes(codes, labels, classes);
  if (order.size() != classes) fail_argument("fullspace_reassign: class order is not a permutation");
  std::vector<char> seen(classes, 0);
  for (auto c : order) {
    if (c >= classes || seen[c]) fail_argument("fullspace_reassign: class order is not a permutation");
    seen[c] = 1;
  }
  const std::size_t K = targets.front().length();
  if (K < 64 && classes > (std::uint64_t{1} << K)) fail_infeasible("fullspace_reassign: more classes than 2^K codes");

  std::unordered_set<BinaryCode, BinaryCodeHash> assigned;
  std::vector<BinaryCode> centers(classes);
  for (auto c : order) {
    for (std::size_t radius = 0; radius <= K; ++radius) {
      std::optional<BinaryCode> best;
      detail::for_each_at_radius(targets[c], radius, [&](const BinaryCode& cand) {
        if (!assigned.contains(cand) && (!best || lexicographic_less(cand, *best))) best = cand;
        return false;
      });
      if (best) {
        assigned.insert(*best);
        centers[c] = std::move(*best);
        break;
      }
    }
  }
  return centers;
}

}  // namespace crh
