#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "crh/assignment.hpp"
#include "crh/dataset.hpp"
#include "crh/error.hpp"
#include "crh/hamming.hpp"
#include "crh/hash_model.hpp"
#include "crh/random.hpp"

namespace crh {

enum class Mode { crh, crh_m, crh_u };
enum class Sampling { bernoulli, unique };
enum class CostSource { exact_recompute, incremental };

/// Epochs are 1-based. Updates run every `warmup_interval` epochs up to
/// `warmup_epochs`, then every `later_interval` epochs counted from the end
/// of warmup. An interval of 0 means never.
struct UpdateSchedule {
  std::size_t warmup_epochs = 20;
  std::size_t warmup_interval = 1;
  std::size_t later_interval = 5;

  static UpdateSchedule every(std::size_t interval) { return {0, 0, interval}; }
  static UpdateSchedule never() { return {0, 0, 0}; }

  friend bool operator==(const UpdateSchedule&, const UpdateSchedule&) = default;
};

inline bool should_update(std::size_t epoch, const UpdateSchedule& s) {
  if (epoch == 0) return false;
  if (epoch <= s.warmup_epochs) return s.warmup_interval != 0 && epoch % s.warmup_interval == 0;
  return s.later_interval != 0 && (epoch - s.warmup_epochs) % s.later_interval == 0;
}

struct TrainConfig {
  std::size_t bits = 16;
  std::size_t codebook_size = 0;  // 0: 2C
  std::size_t heads = 0;          // 0: derived from head_width, or 1
  std::size_t head_width = 0;     // 0: K / heads
  double lambda = 0.1;
  double margin = 0.2;
  double scale = 0.0;  // <= 0: sqrt(2) ln(C-1)
  std::size_t epochs = 300;
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;
  UpdateSchedule schedule;
  Solver solver = Solver::greedy;
  GreedyOrder greedy_order = GreedyOrder::per_head;
  Mode mode = Mode::crh;
  Sampling sampling = Sampling::unique;
  CostSource cost_source = CostSource::exact_recompute;
  bool strict_heads = true;
  bool early_stop = true;
  OptimizerConfig optimizer;
  std::size_t threads = 1;
};

/// TrainConfig with every derived quantity filled in for a class count.
struct ResolvedConfig {
  TrainConfig config;
  std::size_t classes = 0;
  std::size_t codebook_size = 0;
  HeadLayout layout;
  LossConfig loss;
  bool reassign = true;
};

inline ResolvedConfig resolve(const TrainConfig& cfg, std::size_t classes) {
  if (cfg.bits == 0) fail_argument("config: K must be >= 1");
  if (cfg.batch_size == 0) fail_argument("config: batch_size must be >= 1");
  if (classes < 2) fail_argument("config: need at least 2 classes");
  ResolvedConfig r;
  r.config = cfg;
  r.classes = classes;
  r.codebook_size = cfg.codebook_size == 0 ? 2 * classes : cfg.codebook_size;
  if (r.codebook_size < classes)
    fail_argument("config: M=" + std::to_string(r.codebook_size) + " is smaller than C=" + std::to_string(classes));

  std::size_t heads = cfg.heads;
  if (heads == 0) {
    if (cfg.head_width != 0) {
      if (cfg.bits % cfg.head_width != 0)
        fail_argument("config: d=" + std::to_string(cfg.head_width) + " does not divide K=" + std::to_string(cfg.bits));
      heads = cfg.bits / cfg.head_width;
    } else {
      heads = 1;
    }
  } else if (cfg.head_width != 0 && heads * cfg.head_width != cfg.bits) {
    fail_argument("config: H*d must equal K");
  }
  if (cfg.mode == Mode::crh_m) heads = 1;
  r.layout = HeadLayout::split(cfg.bits, heads);
  if (cfg.strict_heads && heads > 1) check_strict_layout(r.layout, r.codebook_size);

  r.loss.margin = cfg.margin;
  r.loss.lambda = cfg.lambda;
  r.loss.scale = cfg.scale > 0 ? cfg.scale : scale_factor(classes);
  r.loss.validate();
  cfg.optimizer.validate();
  r.reassign = cfg.mode != Mode::crh_u;
  return r;
}

struct InitialState {
  Codebook codebook;
  std::vector<std::size_t> codebook_duplicates;
  CenterAssignment assignment;
  HashModel model;
};

/// Samples the codebook, draws C distinct rows as the initial centers (the
/// same row in every head), and seeds the model.
inline InitialState initialize(const ResolvedConfig& rc, const Dataset& ds) {
  if (ds.size() == 0) fail_data("initialize: empty dataset");
  const auto counts = ds.class_counts();
  for (std::size_t c = 0; c < counts.size(); ++c)
    if (counts[c] == 0) fail_data("initialize: class " + std::to_string(c) + " has no samples");
  if (rc.codebook_size < rc.classes) fail_argument("initialize: M < C");

  const auto& cfg = rc.config;
  InitialState s;
  if (cfg.sampling == Sampling::bernoulli) {
    auto sampled = sample_codebook_bernoulli(cfg.bits, rc.codebook_size, cfg.seed);
    s.codebook = std::move(sampled.codebook);
    s.codebook_duplicates = std::move(sampled.duplicates);
  } else {
    s.codebook = sample_codebook_unique(cfg.bits, rc.codebook_size, cfg.seed);
  }

  Rng rng = make_rng(cfg.seed, Stream::init_assignment);
  std::vector<std::size_t> rows(rc.codebook_size);
  std::iota(rows.begin(), rows.end(), 0);
  for (std::size_t i = 0; i < rc.classes; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, rows.size() - 1);
    std::swap(rows[i], rows[pick(rng)]);
  }
  rows.resize(rc.classes);
  s.assignment.layout = rc.layout;
  s.assignment.codebook_size = rc.codebook_size;
  s.assignment.per_head.assign(rc.layout.heads, rows);

  s.model = HashModel::seeded(ds.dim, cfg.bits, cfg.seed);
  return s;
}

struct EpochRecord {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double learning_rate = 0.0;
  bool reassigned = false;
  std::optional<double> change_fraction;
  std::vector<double> head_costs;
  DistanceStats centers;
};

struct RunHistory {
  std::vector<EpochRecord> epochs;
  bool stopped_early = false;
};

struct TrainResult {
  ResolvedConfig config;
  HashModel model;
  OptimizerState optimizer;
  Codebook codebook;
  std::vector<std::size_t> codebook_duplicates;
  CenterAssignment initial_assignment;
  CenterAssignment assignment;
  RunHistory history;
};

/// Per-head cost matrices built from the codes the model produced while
/// it trained through an epoch.
class EpochCostAccumulator {
public:
  EpochCostAccumulator(std::size_t classes, const HeadLayout& layout, const std::vector<SubCodebook>& subs)
      : layout_(layout) {
    for (const auto& sub : subs) heads_.emplace_back(classes, sub.codes);
  }

  void add_batch(std::span<const BinaryCode> codes, std::span<const LabelSet> labels) {
    for (std::size_t n = 0; n < codes.size(); ++n)
      for (std::size_t h = 0; h < layout_.heads; ++h) heads_[h].add(head_slice(codes[n], layout_, h), labels[n]);
  }

  std::vector<CostMatrix> finalize() const {
    std::vector<CostMatrix> out;
    for (const auto& acc : heads_) out.push_back(acc.finalize());
    return out;
  }

private:
  HeadLayout layout_;
  std::vector<CostAccumulator> heads_;
};

inline std::vector<CostMatrix> exact_costs(const HashModel& model, const Dataset& ds, std::size_t classes,
                                           const HeadLayout& layout, const std::vector<SubCodebook>& subs) {
  const auto codes = encode(model, ds);
  EpochCostAccumulator acc(classes, layout, subs);
  acc.add_batch(codes, ds.labels);
  return acc.finalize();
}

inline constexpr double kConvergenceLossDelta = 1e-6;

/// Alternates epochs of hash-function training with center reassignment.
/// Order inside an epoch: train batches, reassign if scheduled, tick the
/// learning-rate schedule.
inline TrainResult train(const TrainConfig& config, const Dataset& ds,
                         const std::optional<HashModel>& initial_model = std::nullopt) {
  ds.validate();
  TrainResult out;
  out.config = resolve(config, ds.classes);
  const ResolvedConfig& rc = out.config;
  InitialState init = initialize(rc, ds);
  if (initial_model) {
    if (initial_model->input_dim != ds.dim || initial_model->bits != config.bits)
      fail_argument("train: initial model shape does not match data and K");
    init.model = *initial_model;
  }
  out.codebook = std::move(init.codebook);
  out.codebook_duplicates = std::move(init.codebook_duplicates);
  out.initial_assignment = init.assignment;
  out.assignment = std::move(init.assignment);
  out.model = std::move(init.model);
  out.optimizer = OptimizerState(ds.dim, config.bits);

  std::vector<SubCodebook> subs;
  if (rc.reassign) {
    for (std::size_t h = 0; h < rc.layout.heads; ++h) {
      subs.push_back(make_sub_codebook(out.codebook, rc.layout, h));
      if (subs.back().codes.size() < rc.classes)
        fail_infeasible("train: head " + std::to_string(h) + " has " + std::to_string(subs.back().codes.size()) +
                        " distinct sub-codes for " + std::to_string(rc.classes) + " classes");
    }
  }

  Rng batch_rng = make_rng(config.seed, Stream::batch_order);
  Rng greedy_rng = make_rng(config.seed, Stream::greedy_order);
  const ReassignOptions reassign_options{config.solver, config.greedy_order};
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);

  std::size_t quiet_events = 0;
  std::optional<double> previous_loss;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const double lr = cosine_learning_rate(config.optimizer.learning_rate, epoch - 1, config.epochs);
    const bool update = rc.reassign && should_update(epoch, config.schedule);
    std::optional<EpochCostAccumulator> incremental;
    if (update && config.cost_source == CostSource::incremental) incremental.emplace(rc.classes, rc.layout, subs);

    const auto centers = out.assignment.centers(out.codebook);
    const CenterMatrix center_matrix(centers);
    std::shuffle(order.begin(), order.end(), batch_rng);
    double loss_sum = 0.0;
    for (std::size_t first = 0; first < ds.size(); first += config.batch_size) {
      const std::size_t last = std::min(ds.size(), first + config.batch_size);
      const Batch batch = Batch::gather(ds, std::span<const std::size_t>(order).subspan(first, last - first));
      const auto step = backward(out.model, batch, center_matrix, rc.loss, config.threads);
      loss_sum += step.loss * static_cast<double>(batch.size());
      if (incremental) {
        std::vector<BinaryCode> codes;
        codes.reserve(batch.size());
        for (std::size_t n = 0; n < batch.size(); ++n)
          codes.push_back(BinaryCode::from_real(std::span<const double>(step.forward.pre).subspan(n * config.bits, config.bits)));
        incremental->add_batch(codes, batch.labels);
      }
      optimizer_step(out.model, out.optimizer, step.grads, config.optimizer, lr);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.mean_loss = loss_sum / static_cast<double>(ds.size());
    rec.learning_rate = lr;
    if (update) {
      const auto costs = incremental ? incremental->finalize() : exact_costs(out.model, ds, rc.classes, rc.layout, subs);
      auto solved = reassign_from_costs(costs, subs, rc.layout, out.codebook.size(), reassign_options, greedy_rng);
      rec.reassigned = true;
      rec.change_fraction = center_change_fraction(out.assignment, solved.assignment, out.codebook);
      rec.head_costs = std::move(solved.head_costs);
      out.assignment = std::move(solved.assignment);
    }
    const auto now = out.assignment.centers(out.codebook);
    rec.centers = codebook_distance_stats(now);
    out.history.epochs.push_back(rec);

    if (config.early_stop && rec.reassigned) {
      quiet_events = *rec.change_fraction == 0.0 ? quiet_events + 1 : 0;
      const bool flat = previous_loss && (*previous_loss - rec.mean_loss) < kConvergenceLossDelta;
      if (quiet_events >= 2 && flat) {
        out.history.stopped_early = true;
        break;
      }
    }
    previous_loss = rec.mean_loss;
  }
  return out;
}

}  // namespace crh
