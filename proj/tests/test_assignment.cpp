#include <gtest/gtest.h>

#include <set>

#include "crh/assignment.hpp"
#include "oracles.hpp"

using namespace crh;

namespace {

BinaryCode code_at_distance(const BinaryCode& base, std::size_t d) {
  BinaryCode out = base;
  for (std::size_t i = 0; i < d; ++i) out.flip(i);
  return out;
}

CostGrid random_grid(std::size_t rows, std::size_t cols, std::mt19937_64& rng, int hi = 20) {
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = static_cast<double>(rng() % (hi + 1));
  return CostGrid(rows, cols, std::move(v));
}

std::vector<std::vector<double>> rows_of(const CostGrid& g) {
  std::vector<std::vector<double>> out(g.rows, std::vector<double>(g.cols));
  for (std::size_t r = 0; r < g.rows; ++r)
    for (std::size_t c = 0; c < g.cols; ++c) out[r][c] = g(r, c);
  return out;
}

bool injective(const std::vector<std::size_t>& cols) {
  return std::set<std::size_t>(cols.begin(), cols.end()).size() == cols.size();
}

}  // namespace

TEST(CostMatrix, ZeroCostForExactCode) {
  const auto z = BinaryCode::from_string("0110");
  const std::vector<BinaryCode> codes{z};
  const std::vector<LabelSet> labels{{0}};
  const std::vector<BinaryCode> sub{BinaryCode::from_string("1111"), z};
  const auto cost = build_cost_matrix(codes, labels, 1, sub);
  EXPECT_EQ(cost.at(0, 1), (Rational{0, 1}));
  EXPECT_EQ(cost.at(0, 0), (Rational{8, 1}));  // two bits differ
}

TEST(CostMatrix, UnweightedMeanOfSquaredDistances) {
  const auto z = BinaryCode::from_string("000000");
  const std::vector<BinaryCode> codes{code_at_distance(z, 1), code_at_distance(z, 3)};
  const std::vector<LabelSet> labels{{0}, {0}};
  const std::vector<BinaryCode> sub{z};
  const auto cost = build_cost_matrix(codes, labels, 1, sub);
  EXPECT_EQ(cost.at(0, 0), (Rational{8, 1}));
  EXPECT_DOUBLE_EQ(cost.value(0, 0), 8.0);
}

TEST(CostMatrix, MultiLabelWeighting) {
  // (1/2 * 4*2 + 1 * 0) / (1/2 + 1) = 8/3
  const auto z = BinaryCode::from_string("00000");
  const std::vector<BinaryCode> codes{code_at_distance(z, 2), z};
  const std::vector<LabelSet> labels{{0, 1}, {0}};
  const std::vector<BinaryCode> sub{z};
  const auto cost = build_cost_matrix(codes, labels, 2, sub);
  EXPECT_EQ(cost.at(0, 0), (Rational{8, 3}));
  // class 1 only has the distance-2 sample
  EXPECT_EQ(cost.at(1, 0), (Rational{8, 1}));

  std::vector<oracle::Signs> raw{codes[0].to_signs(), codes[1].to_signs()};
  const std::vector<std::vector<std::uint32_t>> lab{{0, 1}, {0}};
  EXPECT_NEAR(cost.value(0, 0), static_cast<double>(oracle::weighted_cost(raw, lab, 0, z.to_signs())), 1e-15);
}

TEST(CostMatrix, Errors) {
  const std::vector<BinaryCode> codes{BinaryCode::from_string("01")};
  const std::vector<LabelSet> labels{{0}};
  const std::vector<BinaryCode> sub{BinaryCode::from_string("00"), BinaryCode::from_string("11")};
  try {
    build_cost_matrix(codes, labels, 2, sub);
    FAIL() << "expected empty-class error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("class 1"), std::string::npos) << e.what();
  }
  const std::vector<BinaryCode> wide{BinaryCode::from_string("011")};
  EXPECT_THROW(build_cost_matrix(wide, labels, 1, sub), Error);
}

TEST(CostMatrix, RationalMatchesFloatOracleOnMultiLabelData) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t C = 2 + rng() % 4, M = C + rng() % 4, K = 4 + rng() % 12, N = 5 + rng() % 30;
    std::vector<oracle::Signs> raw;
    std::vector<BinaryCode> codes;
    std::vector<LabelSet> labels;
    for (std::size_t n = 0; n < N; ++n) {
      raw.push_back(oracle::random_signs(K, rng));
      codes.push_back(BinaryCode::from_signs(raw.back()));
      LabelSet y{static_cast<std::uint32_t>(n % C)};
      for (std::uint32_t c = 0; c < C; ++c)
        if (c != y[0] && rng() % 3 == 0) y.push_back(c);
      std::sort(y.begin(), y.end());
      labels.push_back(y);
    }
    std::vector<BinaryCode> sub;
    for (std::size_t m = 0; m < M; ++m) sub.push_back(BinaryCode::from_signs(oracle::random_signs(K, rng)));
    const auto cost = build_cost_matrix(codes, labels, C, sub);
    std::vector<std::vector<std::uint32_t>> lab(labels.begin(), labels.end());
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t m = 0; m < M; ++m) {
        const long double expect = oracle::weighted_cost(raw, lab, static_cast<std::uint32_t>(c), sub[m].to_signs());
        EXPECT_LE(std::abs(cost.value(c, m) - static_cast<double>(expect)), 1e-12);
      }
  }
}

TEST(CostMatrix, OrderIndependentAccumulation) {
  std::mt19937_64 rng(4);
  const std::size_t K = 8, C = 3;
  std::vector<BinaryCode> codes;
  std::vector<LabelSet> labels;
  for (int n = 0; n < 40; ++n) {
    codes.push_back(BinaryCode::from_signs(oracle::random_signs(K, rng)));
    labels.push_back(n % 4 == 0 ? LabelSet{0, 2} : LabelSet{static_cast<std::uint32_t>(n % C)});
  }
  const auto sub = sample_codebook_unique(K, 6, 1).codes();
  const auto forward = build_cost_matrix(codes, labels, C, sub);
  std::vector<BinaryCode> rc(codes.rbegin(), codes.rend());
  std::vector<LabelSet> rl(labels.rbegin(), labels.rend());
  EXPECT_EQ(forward, build_cost_matrix(rc, rl, C, sub));
}

TEST(Hungarian, Examples) {
  const CostGrid diag{{1, 2}, {2, 1}};
  const auto r = hungarian_assign(diag);
  EXPECT_EQ(r.column, (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(r.total_cost, 2.0);

  const CostGrid zeros{{0, 0}, {0, 0}};
  const auto z = hungarian_assign(zeros);
  EXPECT_EQ(z.total_cost, 0.0);
  EXPECT_TRUE(injective(z.column));

  const CostGrid wide{{0, 1, 2}};
  EXPECT_THROW(hungarian_assign(CostGrid{{1}, {2}}), Error);
  EXPECT_EQ(hungarian_assign(wide).column, (std::vector<std::size_t>{0}));
}

TEST(Hungarian, MatchesExhaustiveEnumeration) {
  std::mt19937_64 rng(2024);
  for (int t = 0; t < 200; ++t) {
    const auto grid = random_grid(5, 8, rng);
    const auto r = hungarian_assign(grid);
    EXPECT_TRUE(injective(r.column));
    EXPECT_EQ(r.total_cost, oracle::brute_force_assignment(rows_of(grid)));
    double sum = 0;
    for (std::size_t c = 0; c < 5; ++c) sum += grid(c, r.column[c]);
    EXPECT_EQ(sum, r.total_cost);
  }
}

TEST(Hungarian, RealValuedMatricesOptimal) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(0, 10);
  for (int t = 0; t < 100; ++t) {
    const std::size_t rows = 1 + rng() % 6, cols = rows + rng() % 3;
    std::vector<double> v(rows * cols);
    for (auto& x : v) x = u(rng);
    const CostGrid grid(rows, cols, v);
    EXPECT_NEAR(hungarian_assign(grid).total_cost, oracle::brute_force_assignment(rows_of(grid)), 1e-9);
  }
}

TEST(Greedy, OrderDependence) {
  const CostGrid grid{{0, 5}, {0, 9}};
  const std::vector<std::size_t> one_first{1, 0};
  const auto a = greedy_assign(grid, one_first);
  EXPECT_EQ(a.column, (std::vector<std::size_t>{1, 0}));
  EXPECT_EQ(a.total_cost, 5.0);
  const std::vector<std::size_t> zero_first{0, 1};
  const auto b = greedy_assign(grid, zero_first);
  EXPECT_EQ(b.column, (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(b.total_cost, 9.0);
}

TEST(Greedy, SingleRowTakesArgminWithLowestIndexTie) {
  const CostGrid grid{{4, 2, 7, 2}};
  const std::vector<std::size_t> order{0};
  EXPECT_EQ(greedy_assign(grid, order).column, (std::vector<std::size_t>{1}));
}

TEST(Greedy, RejectsBadPermutation) {
  const CostGrid grid{{0, 1}, {1, 0}};
  const std::vector<std::size_t> dup{0, 0};
  const std::vector<std::size_t> short_order{0};
  const std::vector<std::size_t> out_of_range{0, 2};
  EXPECT_THROW(greedy_assign(grid, dup), Error);
  EXPECT_THROW(greedy_assign(grid, short_order), Error);
  EXPECT_THROW(greedy_assign(grid, out_of_range), Error);
}

TEST(Greedy, DominatedByHungarian) {
  std::mt19937_64 rng(99);
  for (int t = 0; t < 300; ++t) {
    const std::size_t rows = 1 + rng() % 6, cols = rows + rng() % 4;
    const auto grid = random_grid(rows, cols, rng);
    const auto order = random_class_order(rows, rng);
    const auto g = greedy_assign(grid, order);
    const auto h = hungarian_assign(grid);
    EXPECT_TRUE(injective(g.column));
    EXPECT_GE(g.total_cost, h.total_cost);
    // row-wise argmins forming a perfect matching force equality
    std::vector<std::size_t> argmin(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      argmin[r] = 0;
      for (std::size_t c = 1; c < cols; ++c)
        if (grid(r, c) < grid(r, argmin[r])) argmin[r] = c;
    }
    if (injective(argmin)) {
      bool unique_min = true;
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c)
          if (c != argmin[r] && grid(r, c) == grid(r, argmin[r])) unique_min = false;
      if (unique_min) {
        EXPECT_EQ(g.total_cost, h.total_cost);
      }
    }
  }
}

TEST(Solvers, ScaleEquivariance) {
  std::mt19937_64 rng(12);
  for (int t = 0; t < 100; ++t) {
    const auto grid = random_grid(4, 7, rng);
    CostGrid scaled = grid;
    for (auto& x : scaled.values) x *= 4;
    const auto order = random_class_order(4, rng);
    EXPECT_EQ(greedy_assign(grid, order).column, greedy_assign(scaled, order).column);
    EXPECT_EQ(4 * hungarian_assign(grid).total_cost, hungarian_assign(scaled).total_cost);
  }
}

TEST(Reassign, SingleHeadMatchesDirectComposition) {
  std::mt19937_64 rng(5);
  const std::size_t K = 10, C = 5;
  const auto book = sample_codebook_unique(K, 9, 3);
  std::vector<BinaryCode> codes;
  std::vector<LabelSet> labels;
  for (int n = 0; n < 60; ++n) {
    codes.push_back(BinaryCode::from_signs(oracle::random_signs(K, rng)));
    labels.push_back({static_cast<std::uint32_t>(n % C)});
  }
  const auto layout = HeadLayout::split(K, 1);
  for (Solver solver : {Solver::hungarian, Solver::greedy}) {
    Rng a = make_rng(1), b = make_rng(1);
    const auto out = reassign_centers(codes, labels, C, book, layout, {solver, GreedyOrder::per_head}, a);
    const auto grid = build_cost_matrix(codes, labels, C, book.codes()).to_grid();
    AssignmentResult direct;
    if (solver == Solver::hungarian) {
      direct = hungarian_assign(grid);
    } else {
      direct = greedy_assign(grid, random_class_order(C, b));
      EXPECT_EQ(out.assignment.per_head[0], direct.column);
    }
    EXPECT_EQ(out.head_costs[0], direct.total_cost);
  }
}

TEST(Reassign, DiagonalDominantPicksNearestCode) {
  const std::size_t K = 6;
  const auto book = sample_codebook_unique(K, 4, 8);
  std::vector<BinaryCode> codes;
  std::vector<LabelSet> labels;
  // class c's samples sit on codebook row 3 - c
  for (std::uint32_t c = 0; c < 4; ++c)
    for (int i = 0; i < 3; ++i) {
      codes.push_back(book[3 - c]);
      labels.push_back({c});
    }
  Rng rng = make_rng(0);
  for (Solver solver : {Solver::hungarian, Solver::greedy}) {
    const auto out = reassign_centers(codes, labels, 4, book, HeadLayout::split(K, 1), {solver, GreedyOrder::per_head}, rng);
    EXPECT_EQ(out.assignment.per_head[0], (std::vector<std::size_t>{3, 2, 1, 0}));
    EXPECT_EQ(out.head_costs[0], 0.0);
  }
}

TEST(Reassign, MultiHeadRecoversClassMeans) {
  // Each class's samples are a codebook row; both heads must find it at zero cost.
  const std::size_t K = 16;
  const auto book = sample_codebook_unique(K, 12, 4);
  const auto layout = HeadLayout::split(K, 2);
  const std::vector<std::size_t> truth{7, 2, 10, 5};
  std::vector<BinaryCode> codes;
  std::vector<LabelSet> labels;
  for (std::uint32_t c = 0; c < 4; ++c)
    for (int i = 0; i < 5; ++i) {
      codes.push_back(book[truth[c]]);
      labels.push_back({c});
    }
  for (Solver solver : {Solver::hungarian, Solver::greedy}) {
    Rng rng = make_rng(3);
    const auto out = reassign_centers(codes, labels, 4, book, layout, {solver, GreedyOrder::per_event}, rng);
    for (std::size_t h = 0; h < 2; ++h) {
      EXPECT_EQ(out.head_costs[h], 0.0);
      for (std::uint32_t c = 0; c < 4; ++c)
        EXPECT_EQ(head_slice(book[out.assignment.per_head[h][c]], layout, h), head_slice(book[truth[c]], layout, h));
    }
    const auto centers = out.assignment.centers(book);
    for (std::uint32_t c = 0; c < 4; ++c) EXPECT_EQ(centers[c], book[truth[c]]);
  }
}

TEST(Reassign, InfeasibleHeadNamesHeadAndCounts) {
  // Head 1 slices collapse to 2 distinct values for 3 classes.
  const Codebook book(4, {BinaryCode::from_string("0000"), BinaryCode::from_string("0100"),
                          BinaryCode::from_string("1011"), BinaryCode::from_string("1100")});
  const std::vector<BinaryCode> codes{book[0], book[1], book[2]};
  const std::vector<LabelSet> labels{{0}, {1}, {2}};
  Rng rng = make_rng(0);
  try {
    reassign_centers(codes, labels, 3, book, HeadLayout::split(4, 2), {}, rng);
    FAIL() << "expected infeasible head";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::infeasible);
    const std::string what = e.what();
    EXPECT_NE(what.find("head 1"), std::string::npos) << what;
    EXPECT_NE(what.find("2 distinct"), std::string::npos) << what;
  }
}

TEST(Reassign, DuplicateSubCodesMapToLowestRow) {
  const Codebook book(4, {BinaryCode::from_string("0011"), BinaryCode::from_string("1111"),
                          BinaryCode::from_string("0000"), BinaryCode::from_string("1100")});
  const auto sub = make_sub_codebook(book, HeadLayout::split(4, 2), 0);
  ASSERT_EQ(sub.codes.size(), 2u);
  EXPECT_EQ(sub.source_row, (std::vector<std::size_t>{0, 1}));
}

TEST(Reassign, FixedPointIsIdempotent) {
  std::mt19937_64 gen(17);
  const std::size_t K = 16, C = 6;
  const auto book = sample_codebook_unique(K, 14, 9);
  const auto layout = HeadLayout::split(K, 2);
  CenterAssignment current{layout, book.size(), {{0, 3, 5, 7, 9, 11}, {0, 3, 5, 7, 9, 11}}};
  const auto centers = current.centers(book);
  std::vector<BinaryCode> codes;
  std::vector<LabelSet> labels;
  for (std::uint32_t c = 0; c < C; ++c)
    for (int i = 0; i < 4; ++i) {
      codes.push_back(centers[c]);
      labels.push_back({c});
    }
  for (Solver solver : {Solver::hungarian, Solver::greedy}) {
    Rng rng = make_rng(gen());
    const auto out = reassign_centers(codes, labels, C, book, layout, {solver, GreedyOrder::per_head}, rng);
    EXPECT_EQ(out.head_costs[0] + out.head_costs[1], 0.0);
    EXPECT_EQ(out.assignment.centers(book), centers);
    EXPECT_EQ(center_change_fraction(current, out.assignment, book), 0.0);
  }
}

TEST(Reassign, InjectiveInEveryHead) {
  std::mt19937_64 gen(41);
  for (int t = 0; t < 30; ++t) {
    const std::size_t K = 24, C = 5 + gen() % 6;
    const auto book = sample_codebook_unique(K, 2 * C, gen());
    const auto layout = HeadLayout::split(K, 1 + gen() % 3);
    std::vector<BinaryCode> codes;
    std::vector<LabelSet> labels;
    for (std::size_t n = 0; n < 8 * C; ++n) {
      codes.push_back(BinaryCode::from_signs(oracle::random_signs(K, gen)));
      labels.push_back({static_cast<std::uint32_t>(n % C)});
    }
    Rng rng = make_rng(gen());
    const auto out = reassign_centers(codes, labels, C, book, layout, {}, rng);
    for (std::size_t h = 0; h < layout.heads; ++h) {
      std::set<std::string> slices;
      for (std::size_t c = 0; c < C; ++c) slices.insert(head_slice(book[out.assignment.per_head[h][c]], layout, h).to_string());
      EXPECT_EQ(slices.size(), C);
    }
  }
}

TEST(Reassign, SingleLabelWeightedEqualsUnweighted) {
  // With every ||y||_1 = 1 the weighted entries reduce to the plain mean of 4*Hamming.
  std::mt19937_64 rng(6);
  const std::size_t K = 12, C = 4;
  std::vector<BinaryCode> codes;
  std::vector<LabelSet> labels;
  for (int n = 0; n < 50; ++n) {
    codes.push_back(BinaryCode::from_signs(oracle::random_signs(K, rng)));
    labels.push_back({static_cast<std::uint32_t>(rng() % C)});
  }
  for (std::uint32_t c = 0; c < C; ++c) labels[c] = {c};
  const auto sub = sample_codebook_unique(K, 7, 2).codes();
  const auto cost = build_cost_matrix(codes, labels, C, sub);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t m = 0; m < sub.size(); ++m) {
      std::int64_t sum = 0, count = 0;
      for (std::size_t n = 0; n < codes.size(); ++n)
        if (labels[n][0] == c) {
          sum += 4 * static_cast<std::int64_t>(hamming_distance(codes[n], sub[m]));
          ++count;
        }
      EXPECT_EQ(cost.at(c, m), (Rational{sum, count}));
    }
}

TEST(Fullspace, ConstantClassTakesItsCode) {
  const auto b = BinaryCode::from_string("1011001");
  const std::vector<BinaryCode> codes{b, b, b};
  const std::vector<LabelSet> labels{{0}, {0}, {0}};
  const std::vector<std::size_t> order{0};
  EXPECT_EQ(fullspace_reassign(codes, labels, 1, order).front(), b);
}

TEST(Fullspace, CollisionTakesLexicographicNeighbor) {
  // Both classes aggregate to 110; the second in order gets the smallest
  // unassigned distance-1 neighbor, verified by brute force over all 8 codes.
  const auto z = BinaryCode::from_string("110");
  const std::vector<BinaryCode> codes{z, z};
  const std::vector<LabelSet> labels{{0}, {1}};
  const std::vector<std::size_t> order{1, 0};
  const auto centers = fullspace_reassign(codes, labels, 2, order);
  EXPECT_EQ(centers[1], z);
  std::string best;
  for (std::uint64_t v = 0; v < 8; ++v) {
    const auto cand = BinaryCode::from_integer(v, 3);
    if (cand == z || hamming_distance(cand, z) != 1) continue;
    if (best.empty() || cand.to_string() < best) best = cand.to_string();
  }
  EXPECT_EQ(best, "010");
  EXPECT_EQ(centers[0].to_string(), best);
}

TEST(Fullspace, AggregatesWithLabelWeights) {
  // bit 0: +1 (weight 1/2) vs -1 (weight 1) -> negative; ties go to +1
  const std::vector<BinaryCode> codes{BinaryCode::from_string("11"), BinaryCode::from_string("00"),
                                      BinaryCode::from_string("11")};
  const std::vector<LabelSet> labels{{0, 1}, {0}, {1}};
  const auto agg = class_aggregate_codes(codes, labels, 2);
  EXPECT_EQ(agg[0].to_string(), "00");
  EXPECT_EQ(agg[1].to_string(), "11");
  const std::vector<BinaryCode> tie{BinaryCode::from_string("10"), BinaryCode::from_string("01")};
  const std::vector<LabelSet> tl{{0}, {0}};
  EXPECT_EQ(class_aggregate_codes(tie, tl, 1)[0].to_string(), "11");
}

TEST(Fullspace, SingleSampleAndDistinctness) {
  const std::vector<BinaryCode> one{BinaryCode::from_string("0101")};
  const std::vector<LabelSet> ol{{0}};
  const std::vector<std::size_t> o1{0};
  EXPECT_EQ(fullspace_reassign(one, ol, 1, o1)[0].to_string(), "0101");

  // many classes with the same aggregate still get distinct centers
  const std::size_t C = 9;
  std::vector<BinaryCode> codes(C, BinaryCode::from_string("0000"));
  std::vector<LabelSet> labels;
  for (std::uint32_t c = 0; c < C; ++c) labels.push_back({c});
  std::vector<std::size_t> order(C);
  std::iota(order.begin(), order.end(), 0);
  const auto centers = fullspace_reassign(codes, labels, C, order);
  std::set<std::string> uniq;
  for (const auto& c : centers) uniq.insert(c.to_string());
  EXPECT_EQ(uniq.size(), C);
  EXPECT_EQ(centers[0].to_string(), "0000");
  EXPECT_EQ(centers[1].to_string(), "0001");  // smallest at distance 1
}
