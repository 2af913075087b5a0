#include <gtest/gtest.h>

#include <cmath>

#include "crh/trainer.hpp"

using namespace crh;

namespace {

Dataset small_synthetic(std::uint64_t seed, std::size_t classes = 6, double rho = 0.0) {
  SynthSpec spec;
  spec.classes = classes;
  spec.superclasses = 2;
  spec.dim = 10;
  spec.samples_per_class = 20;
  spec.cooccurrence = rho;
  spec.seed = seed;
  return generate_synthetic(spec).dataset;
}

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.bits = 8;
  cfg.heads = 2;
  cfg.epochs = 12;
  cfg.batch_size = 32;
  cfg.seed = 3;
  cfg.optimizer.learning_rate = 1e-2;
  cfg.early_stop = false;
  return cfg;
}

// Samples sit exactly on their initial centers; with W = I, b = 0 and a zero
// learning rate every sample encodes to its own center.
struct FixedPoint {
  Dataset ds;
  TrainConfig cfg;
  HashModel model;
};

FixedPoint fixed_point(std::size_t heads) {
  FixedPoint fp;
  const std::size_t C = 4, K = 8;
  fp.cfg.bits = K;
  fp.cfg.heads = heads;
  fp.cfg.epochs = 6;
  fp.cfg.batch_size = 5;
  fp.cfg.seed = 11;
  fp.cfg.optimizer.learning_rate = 0.0;
  fp.cfg.optimizer.weight_decay = 0.0;
  fp.cfg.early_stop = false;
  fp.cfg.schedule = UpdateSchedule::every(1);

  Dataset probe;
  probe.dim = K;
  probe.classes = C;
  for (std::size_t c = 0; c < C; ++c) {
    probe.labels.push_back({static_cast<std::uint32_t>(c)});
    probe.features.resize(probe.features.size() + K, 0.0f);
  }
  const auto rc = resolve(fp.cfg, C);
  const auto init = initialize(rc, probe);
  const auto centers = init.assignment.centers(init.codebook);

  fp.ds.dim = K;
  fp.ds.classes = C;
  fp.ds.single_label = true;
  for (std::size_t c = 0; c < C; ++c)
    for (int s = 0; s < 3; ++s) {
      for (std::size_t k = 0; k < K; ++k) fp.ds.features.push_back(static_cast<float>(centers[c].sign(k)));
      fp.ds.labels.push_back({static_cast<std::uint32_t>(c)});
    }
  fp.model = HashModel(K, K);
  for (std::size_t k = 0; k < K; ++k) fp.model.weights[k * K + k] = 1.0;
  return fp;
}

}  // namespace

TEST(Schedule, DefaultScheduleExamples) {
  const UpdateSchedule s;
  EXPECT_FALSE(should_update(0, s));
  for (std::size_t e = 1; e <= 20; ++e) EXPECT_TRUE(should_update(e, s)) << e;
  EXPECT_TRUE(should_update(7, s));
  EXPECT_FALSE(should_update(21, s));
  EXPECT_FALSE(should_update(23, s));
  EXPECT_TRUE(should_update(25, s));
  EXPECT_TRUE(should_update(30, s));
}

TEST(Schedule, EveryAndNever) {
  for (std::size_t e = 0; e < 100; ++e) EXPECT_FALSE(should_update(e, UpdateSchedule::never()));
  EXPECT_TRUE(should_update(10, UpdateSchedule::every(10)));
  EXPECT_FALSE(should_update(5, UpdateSchedule::every(10)));
  EXPECT_TRUE(should_update(40, UpdateSchedule::every(10)));
  EXPECT_TRUE(should_update(3, UpdateSchedule::every(1)));
}

TEST(Resolve, Defaults) {
  TrainConfig cfg;
  const auto rc = resolve(cfg, 10);
  EXPECT_EQ(rc.codebook_size, 20u);
  EXPECT_EQ(rc.layout.heads, 1u);
  EXPECT_NEAR(rc.loss.scale, scale_factor(10), 0.0);
  EXPECT_TRUE(rc.reassign);
}

TEST(Resolve, HeadsFromWidthAndErrors) {
  TrainConfig cfg;
  cfg.head_width = 4;
  EXPECT_EQ(resolve(cfg, 8).layout.heads, 4u);
  cfg.head_width = 5;
  EXPECT_THROW(resolve(cfg, 8), Error);
  cfg.head_width = 0;
  cfg.codebook_size = 4;
  EXPECT_THROW(resolve(cfg, 8), Error);
}

TEST(Resolve, StrictLayoutRejectsNarrowHeads) {
  TrainConfig cfg;
  cfg.bits = 16;
  cfg.heads = 8;  // d = 2 cannot index M = 20 rows
  try {
    resolve(cfg, 10);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::invalid_argument);
  }
  cfg.strict_heads = false;
  EXPECT_NO_THROW(resolve(cfg, 10));
  cfg.strict_heads = true;
  cfg.mode = Mode::crh_m;
  EXPECT_EQ(resolve(cfg, 10).layout.heads, 1u);
}

TEST(Initialize, DeterministicAndDistinct) {
  const auto ds = small_synthetic(1);
  auto cfg = small_config();
  const auto rc = resolve(cfg, ds.classes);
  const auto a = initialize(rc, ds);
  const auto b = initialize(rc, ds);
  EXPECT_EQ(a.assignment, b.assignment);
  EXPECT_EQ(a.codebook, b.codebook);
  EXPECT_EQ(a.model, b.model);
  const auto& rows = a.assignment.per_head[0];
  EXPECT_EQ(std::set<std::size_t>(rows.begin(), rows.end()).size(), ds.classes);
  for (const auto& head : a.assignment.per_head) EXPECT_EQ(head, rows);
}

TEST(Initialize, FullCodebookIsAPermutation) {
  const auto ds = small_synthetic(2);
  auto cfg = small_config();
  cfg.codebook_size = ds.classes;
  cfg.heads = 1;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    cfg.seed = seed;
    auto rows = initialize(resolve(cfg, ds.classes), ds).assignment.per_head[0];
    std::sort(rows.begin(), rows.end());
    for (std::size_t i = 0; i < rows.size(); ++i) EXPECT_EQ(rows[i], i);
  }
}

TEST(Initialize, RowsAreUniformOverCodebook) {
  const std::size_t C = 8, M = 16, trials = 10000;
  Dataset ds;
  ds.dim = 2;
  ds.classes = C;
  for (std::size_t c = 0; c < C; ++c) {
    ds.labels.push_back({static_cast<std::uint32_t>(c)});
    ds.features.insert(ds.features.end(), {0.0f, 0.0f});
  }
  TrainConfig cfg;
  cfg.bits = 4;
  cfg.codebook_size = M;
  std::vector<std::size_t> hits(M, 0);
  for (std::size_t seed = 0; seed < trials; ++seed) {
    cfg.seed = seed;
    const auto init = initialize(resolve(cfg, C), ds);
    for (auto r : init.assignment.per_head[0]) ++hits[r];
  }
  const double p = static_cast<double>(C) / M;
  const double sigma = std::sqrt(p * (1 - p) / trials);
  for (std::size_t m = 0; m < M; ++m) EXPECT_NEAR(static_cast<double>(hits[m]) / trials, p, 4 * sigma) << m;
}

TEST(Initialize, EmptyClassIsADataError) {
  auto ds = small_synthetic(3);
  ds.classes += 1;
  try {
    train(small_config(), ds);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::data);
    EXPECT_NE(std::string(e.what()).find("class 6"), std::string::npos);
  }
}

TEST(Train, Deterministic) {
  const auto ds = small_synthetic(4, 6, 0.3);
  const auto a = train(small_config(), ds);
  const auto b = train(small_config(), ds);
  EXPECT_EQ(a.model, b.model);
  EXPECT_EQ(a.assignment, b.assignment);
  ASSERT_EQ(a.history.epochs.size(), b.history.epochs.size());
  for (std::size_t i = 0; i < a.history.epochs.size(); ++i)
    EXPECT_EQ(a.history.epochs[i].mean_loss, b.history.epochs[i].mean_loss);
}

TEST(Train, ThreadCountDoesNotChangeResult) {
  const auto ds = small_synthetic(5);
  auto cfg = small_config();
  cfg.batch_size = 100;
  const auto one = train(cfg, ds);
  cfg.threads = 4;
  const auto four = train(cfg, ds);
  EXPECT_EQ(one.model, four.model);
  EXPECT_EQ(one.assignment, four.assignment);
  EXPECT_EQ(one.optimizer, four.optimizer);
}

TEST(Train, HistoryFollowsScheduleAndLearningRate) {
  const auto ds = small_synthetic(6);
  auto cfg = small_config();
  cfg.epochs = 30;
  const auto r = train(cfg, ds);
  ASSERT_EQ(r.history.epochs.size(), 30u);
  for (const auto& e : r.history.epochs) {
    EXPECT_EQ(e.reassigned, should_update(e.epoch, cfg.schedule));
    EXPECT_EQ(e.change_fraction.has_value(), e.reassigned);
    EXPECT_EQ(e.head_costs.size(), e.reassigned ? cfg.heads : 0u);
    EXPECT_EQ(e.learning_rate, cosine_learning_rate(cfg.optimizer.learning_rate, e.epoch - 1, cfg.epochs));
    EXPECT_TRUE(std::isfinite(e.mean_loss));
  }
  EXPECT_LT(r.history.epochs.back().mean_loss, r.history.epochs.front().mean_loss);
}

TEST(Train, UnassignedModeKeepsInitialCenters) {
  const auto ds = small_synthetic(7);
  auto cfg = small_config();
  cfg.mode = Mode::crh_u;
  const auto r = train(cfg, ds);
  EXPECT_EQ(r.assignment, r.initial_assignment);
  for (const auto& e : r.history.epochs) EXPECT_FALSE(e.reassigned);

  auto never = small_config();
  never.schedule = UpdateSchedule::never();
  const auto n = train(never, ds);
  EXPECT_EQ(n.model, r.model);
  EXPECT_EQ(n.assignment, r.assignment);
}

TEST(Train, SingleHeadMatchesSingleHeadMode) {
  const auto ds = small_synthetic(8);
  auto one = small_config();
  one.heads = 1;
  auto m = small_config();
  m.mode = Mode::crh_m;
  const auto a = train(one, ds);
  const auto b = train(m, ds);
  EXPECT_EQ(a.model, b.model);
  EXPECT_EQ(a.assignment, b.assignment);
  EXPECT_EQ(b.assignment.layout.heads, 1u);
}

TEST(Train, ZeroEpochsReturnsInitialState) {
  const auto ds = small_synthetic(9);
  auto cfg = small_config();
  cfg.epochs = 0;
  const auto r = train(cfg, ds);
  const auto init = initialize(resolve(cfg, ds.classes), ds);
  EXPECT_TRUE(r.history.epochs.empty());
  EXPECT_EQ(r.model, init.model);
  EXPECT_EQ(r.assignment, init.assignment);
}

TEST(Train, FixedPointNeverMovesCenters) {
  for (std::size_t heads : {1u, 2u}) {
    const auto fp = fixed_point(heads);
    const auto r = train(fp.cfg, fp.ds, fp.model);
    EXPECT_EQ(r.model, fp.model);
    EXPECT_EQ(r.assignment.centers(r.codebook), r.initial_assignment.centers(r.codebook));
    for (const auto& e : r.history.epochs) {
      ASSERT_TRUE(e.change_fraction.has_value());
      EXPECT_EQ(*e.change_fraction, 0.0);
      for (double c : e.head_costs) EXPECT_EQ(c, 0.0);
    }
  }
}

TEST(Train, EarlyStopAfterTwoQuietEvents) {
  auto fp = fixed_point(1);
  fp.cfg.early_stop = true;
  const auto r = train(fp.cfg, fp.ds, fp.model);
  EXPECT_TRUE(r.history.stopped_early);
  EXPECT_EQ(r.history.epochs.size(), 2u);
}

TEST(Train, IncrementalCostsMatchExactWhenModelIsFrozen) {
  const auto ds = small_synthetic(10, 6, 0.4);
  auto cfg = small_config();
  cfg.optimizer.learning_rate = 0.0;
  cfg.cost_source = CostSource::exact_recompute;
  const auto exact = train(cfg, ds);
  cfg.cost_source = CostSource::incremental;
  const auto incremental = train(cfg, ds);
  EXPECT_EQ(exact.assignment, incremental.assignment);
  for (std::size_t i = 0; i < exact.history.epochs.size(); ++i)
    EXPECT_EQ(exact.history.epochs[i].head_costs, incremental.history.epochs[i].head_costs);
}

TEST(Train, IncrementalAccumulationIsOrderFree) {
  const auto ds = small_synthetic(11, 6, 0.4);
  const auto model = HashModel::seeded(ds.dim, 8, 1);
  const auto layout = HeadLayout::split(8, 2);
  const auto book = sample_codebook_unique(8, 12, 2);
  std::vector<SubCodebook> subs{make_sub_codebook(book, layout, 0), make_sub_codebook(book, layout, 1)};
  const auto codes = encode(model, ds);
  EpochCostAccumulator split(ds.classes, layout, subs);
  const std::size_t half = codes.size() / 2;
  split.add_batch(std::span(codes).subspan(half), std::span(ds.labels).subspan(half));
  split.add_batch(std::span(codes).first(half), std::span(ds.labels).first(half));
  const auto a = split.finalize();
  const auto b = exact_costs(model, ds, ds.classes, layout, subs);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t h = 0; h < a.size(); ++h) EXPECT_TRUE(a[h] == b[h]);
}

TEST(Train, InitialModelShapeIsChecked) {
  const auto ds = small_synthetic(12);
  EXPECT_THROW(train(small_config(), ds, HashModel(ds.dim + 1, 8)), Error);
}
