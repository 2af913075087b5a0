#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "crh/dataset.hpp"
#include "crh/error.hpp"
#include "crh/hamming.hpp"
#include "crh/random.hpp"

namespace crh {

struct LossConfig {
  double scale = 1.0;
  double margin = 0.2;
  double lambda = 0.1;

  void validate() const {
    if (!(scale > 0)) fail_argument("LossConfig: s must be > 0");
    if (!(margin >= 0 && margin < 1)) fail_argument("LossConfig: margin must be in [0,1)");
    if (!(lambda >= 0)) fail_argument("LossConfig: lambda must be >= 0");
  }
};

/// sqrt(2) * ln(C - 1), the adaptive softmax scale for C classes.
inline double scale_factor(std::size_t classes) {
  if (classes < 3) fail_argument("scale_factor: C must be >= 3, got " + std::to_string(classes));
  return std::numbers::sqrt2 * std::log(static_cast<double>(classes - 1));
}

inline constexpr double kNormFloor = 1e-12;

/// Linear + tanh hash head: v = W^T x + b, h = tanh(v).
/// W is D x K, row-major (W[d*K + k]).
struct HashModel {
  std::size_t input_dim = 0;
  std::size_t bits = 0;
  std::vector<double> weights;
  std::vector<double> bias;

  HashModel() = default;
  HashModel(std::size_t D, std::size_t K) : input_dim(D), bits(K), weights(D * K, 0.0), bias(K, 0.0) {
    if (D == 0 || K == 0) fail_argument("HashModel: D and K must be >= 1");
  }

  /// W ~ U(-1/sqrt(D), 1/sqrt(D)), b = 0.
  static HashModel seeded(std::size_t D, std::size_t K, std::uint64_t seed) {
    HashModel model(D, K);
    Rng rng = make_rng(seed, Stream::model_init);
    const double bound = 1.0 / std::sqrt(static_cast<double>(D));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& w : model.weights) w = dist(rng);
    return model;
  }

  bool finite() const {
    auto ok = [](double x) { return std::isfinite(x); };
    return std::all_of(weights.begin(), weights.end(), ok) && std::all_of(bias.begin(), bias.end(), ok);
  }

  friend bool operator==(const HashModel&, const HashModel&) = default;
};

struct Activations {
  std::vector<double> pre;   // v
  std::vector<double> code;  // h = tanh(v)
};

template <typename T>
void preactivation(const HashModel& model, std::span<const T> x, std::span<double> v) {
  if (x.size() != model.input_dim)
    fail_argument("forward: input has " + std::to_string(x.size()) + " features, model expects " +
                  std::to_string(model.input_dim));
  const std::size_t K = model.bits;
  std::copy(model.bias.begin(), model.bias.end(), v.begin());
  for (std::size_t d = 0; d < x.size(); ++d) {
    const double xd = static_cast<double>(x[d]);
    const double* row = model.weights.data() + d * K;
    for (std::size_t k = 0; k < K; ++k) v[k] += row[k] * xd;
  }
}

template <typename T>
Activations forward(const HashModel& model, std::span<const T> x) {
  Activations out;
  out.pre.resize(model.bits);
  preactivation(model, x, std::span<double>(out.pre));
  out.code.resize(model.bits);
  for (std::size_t k = 0; k < model.bits; ++k) out.code[k] = std::tanh(out.pre[k]);
  return out;
}

/// sign(h) = sign(v) with sign(0) = +1.
inline std::vector<BinaryCode> encode(const HashModel& model, const Dataset& ds) {
  std::vector<BinaryCode> codes;
  codes.reserve(ds.size());
  std::vector<double> v(model.bits);
  for (std::size_t n = 0; n < ds.size(); ++n) {
    preactivation(model, ds.feature(n), std::span<double>(v));
    codes.push_back(BinaryCode::from_real(v));
  }
  return codes;
}

inline double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

/// cos(v, c) minus the margin when c is the target.
inline double margin_sim(std::span<const double> v, std::span<const double> center, bool is_target, double margin) {
  if (v.size() != center.size()) fail_argument("margin_sim: dimension mismatch");
  const double nv = l2_norm(v);
  const double nc = l2_norm(center);
  if (nv == 0.0) fail_argument("margin_sim: zero-norm pre-activation");
  if (nc == 0.0) fail_argument("margin_sim: zero-norm center");
  double dot = 0.0;
  for (std::size_t k = 0; k < v.size(); ++k) dot += v[k] * center[k];
  return dot / (nv * nc) - (is_target ? margin : 0.0);
}

/// Class centers as dense C x K rows of +-1.
struct CenterMatrix {
  std::size_t classes = 0;
  std::size_t bits = 0;
  std::vector<double> values;

  explicit CenterMatrix(std::span<const BinaryCode> centers) : classes(centers.size()) {
    if (centers.empty()) fail_argument("CenterMatrix: no centers");
    bits = centers.front().length();
    values.reserve(classes * bits);
    for (const auto& c : centers) {
      if (c.length() != bits) fail_argument("CenterMatrix: centers differ in length");
      for (std::size_t k = 0; k < bits; ++k) values.push_back(c.sign(k));
    }
  }

  std::span<const double> row(std::size_t c) const { return std::span<const double>(values).subspan(c * bits, bits); }
  double norm() const { return std::sqrt(static_cast<double>(bits)); }
};

namespace detail {

inline double cosine_guarded(std::span<const double> v, double v_norm, std::span<const double> c, double c_norm) {
  double dot = 0.0;
  for (std::size_t k = 0; k < v.size(); ++k) dot += v[k] * c[k];
  return dot / (std::max(v_norm, kNormFloor) * c_norm);
}

inline void check_labels(const LabelSet& y, std::size_t classes) {
  if (y.empty()) fail_argument("loss: unlabeled sample");
  for (auto c : y)
    if (c >= classes) fail_argument("loss: label " + std::to_string(c) + " out of range");
}

inline bool has_label(const LabelSet& y, std::size_t c) { return std::binary_search(y.begin(), y.end(), c); }

// Logits s * (cos(v, c) - y_c * margin) for one sample.
inline void logits(std::span<const double> v, const LabelSet& y, const CenterMatrix& centers, const LossConfig& cfg,
                   std::span<double> out) {
  const double nv = l2_norm(v);
  for (std::size_t c = 0; c < centers.classes; ++c)
    out[c] = cfg.scale * (cosine_guarded(v, nv, centers.row(c), centers.norm()) - (has_label(y, c) ? cfg.margin : 0.0));
}

inline double log_sum_exp(std::span<const double> z) {
  const double top = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double x : z) s += std::exp(x - top);
  return top + std::log(s);
}

}  // namespace detail

/// Softmax probabilities p_c for one sample (margin applied to its labels).
inline std::vector<double> class_probabilities(std::span<const double> v, const LabelSet& y, const CenterMatrix& centers,
                                               const LossConfig& cfg) {
  detail::check_labels(y, centers.classes);
  std::vector<double> z(centers.classes);
  detail::logits(v, y, centers, cfg, z);
  const double lse = detail::log_sum_exp(z);
  for (auto& x : z) x = std::exp(x - lse);
  return z;
}

/// Margin cross-entropy over a batch of pre-activations (rows of `pre`,
/// each K wide), label targets spread as y_c / ||y||_1.
inline double loss_ce(std::span<const double> pre, std::span<const LabelSet> labels, const CenterMatrix& centers,
                      const LossConfig& cfg) {
  if (labels.empty()) fail_argument("loss_ce: empty batch");
  if (centers.classes < 2) fail_argument("loss_ce: need at least 2 centers");
  const std::size_t K = centers.bits;
  if (pre.size() != labels.size() * K) fail_argument("loss_ce: pre-activation shape mismatch");
  std::vector<double> z(centers.classes);
  double total = 0.0;
  for (std::size_t n = 0; n < labels.size(); ++n) {
    detail::check_labels(labels[n], centers.classes);
    detail::logits(pre.subspan(n * K, K), labels[n], centers, cfg, z);
    const double lse = detail::log_sum_exp(z);
    const double t = 1.0 / static_cast<double>(labels[n].size());
    for (auto c : labels[n]) total -= t * (z[c] - lse);
  }
  return total / static_cast<double>(labels.size());
}

/// Mean of (|h| - 1)^2 over every entry.
inline double loss_q(std::span<const double> codes) {
  if (codes.empty()) return 0.0;
  double total = 0.0;
  for (double h : codes) {
    const double e = std::abs(h) - 1.0;
    total += e * e;
  }
  return total / static_cast<double>(codes.size());
}

/// Samples of one mini-batch, features widened to double.
struct Batch {
  std::size_t dim = 0;
  std::vector<double> features;  // size() x dim
  std::vector<LabelSet> labels;

  std::size_t size() const noexcept { return labels.size(); }
  std::span<const double> feature(std::size_t n) const {
    return std::span<const double>(features).subspan(n * dim, dim);
  }

  static Batch gather(const Dataset& ds, std::span<const std::size_t> indices) {
    Batch b;
    b.dim = ds.dim;
    b.features.reserve(indices.size() * ds.dim);
    for (auto i : indices) {
      for (float x : ds.feature(i)) b.features.push_back(x);
      b.labels.push_back(ds.labels[i]);
    }
    return b;
  }

  static Batch all(const Dataset& ds) {
    std::vector<std::size_t> idx(ds.size());
    std::iota(idx.begin(), idx.end(), 0);
    return gather(ds, idx);
  }
};

struct BatchForward {
  std::vector<double> pre;
  std::vector<double> code;
};

inline BatchForward forward_batch(const HashModel& model, const Batch& batch) {
  BatchForward out;
  const std::size_t K = model.bits;
  out.pre.resize(batch.size() * K);
  out.code.resize(batch.size() * K);
  for (std::size_t n = 0; n < batch.size(); ++n) {
    std::span<double> v(out.pre.data() + n * K, K);
    preactivation(model, batch.feature(n), v);
    for (std::size_t k = 0; k < K; ++k) out.code[n * K + k] = std::tanh(v[k]);
  }
  return out;
}

inline double loss_total(const HashModel& model, const Batch& batch, const CenterMatrix& centers,
                         const LossConfig& cfg) {
  const auto fwd = forward_batch(model, batch);
  return loss_ce(fwd.pre, batch.labels, centers, cfg) + cfg.lambda * loss_q(fwd.code);
}

struct Gradients {
  std::vector<double> weights;
  std::vector<double> bias;

  Gradients() = default;
  Gradients(std::size_t D, std::size_t K) : weights(D * K, 0.0), bias(K, 0.0) {}

  void add(const Gradients& o) {
    for (std::size_t i = 0; i < weights.size(); ++i) weights[i] += o.weights[i];
    for (std::size_t i = 0; i < bias.size(); ++i) bias[i] += o.bias[i];
  }
};

struct LossAndGradients {
  double loss = 0.0;
  Gradients grads;
  BatchForward forward;  // activations the gradients were taken at
};

// Fixed reduction granularity: partial sums are formed per chunk of this
// many samples and combined in chunk order, whatever the thread count.
inline constexpr std::size_t kGradientChunk = 32;

namespace detail {

struct ChunkResult {
  double ce = 0.0;
  double q = 0.0;
  Gradients grads;
};

inline void chunk_gradients(const HashModel& model, const Batch& batch, const CenterMatrix& centers,
                            const LossConfig& cfg, std::size_t first, std::size_t last, BatchForward& fwd,
                            ChunkResult& out) {
  const std::size_t K = model.bits;
  const std::size_t D = model.input_dim;
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  const double inv_nk = inv_n / static_cast<double>(K);
  const double c_norm = centers.norm();
  std::vector<double> z(centers.classes), a(K), dv(K);
  for (std::size_t n = first; n < last; ++n) {
    std::span<double> v(fwd.pre.data() + n * K, K);
    std::span<double> h(fwd.code.data() + n * K, K);
    preactivation(model, batch.feature(n), v);
    for (std::size_t k = 0; k < K; ++k) h[k] = std::tanh(v[k]);

    const LabelSet& y = batch.labels[n];
    check_labels(y, centers.classes);
    logits(v, y, centers, cfg, z);
    const double lse = log_sum_exp(z);
    const double t = 1.0 / static_cast<double>(y.size());
    for (auto c : y) out.ce -= t * (z[c] - lse);

    // dCE/dz_c = p_c - t_c; z_c = s * cos(v, c_c) - const
    std::fill(a.begin(), a.end(), 0.0);
    for (std::size_t c = 0; c < centers.classes; ++c) {
      const double g = cfg.scale * (std::exp(z[c] - lse) - (has_label(y, c) ? t : 0.0));
      const auto row = centers.row(c);
      for (std::size_t k = 0; k < K; ++k) a[k] += g * row[k];
    }
    const double nv = l2_norm(v);
    const double r = std::max(nv, kNormFloor);
    double av = 0.0;
    for (std::size_t k = 0; k < K; ++k) av += a[k] * v[k];
    // below the floor the norm is a constant, so its derivative drops out
    const double radial = nv > kNormFloor ? av / (r * r * r * c_norm) : 0.0;
    for (std::size_t k = 0; k < K; ++k) dv[k] = (a[k] / (r * c_norm) - radial * v[k]) * inv_n;

    for (std::size_t k = 0; k < K; ++k) {
      const double e = std::abs(h[k]) - 1.0;
      out.q += e * e;
      if (cfg.lambda > 0.0) {
        const double sgn = h[k] > 0.0 ? 1.0 : (h[k] < 0.0 ? -1.0 : 0.0);
        dv[k] += cfg.lambda * 2.0 * e * sgn * (1.0 - h[k] * h[k]) * inv_nk;
      }
    }

    const auto x = batch.feature(n);
    for (std::size_t d = 0; d < D; ++d) {
      double* row = out.grads.weights.data() + d * K;
      for (std::size_t k = 0; k < K; ++k) row[k] += x[d] * dv[k];
    }
    for (std::size_t k = 0; k < K; ++k) out.grads.bias[k] += dv[k];
  }
}

}  // namespace detail

/// Loss of the batch and its exact gradient with respect to W and b.
/// Centers are constants. Result bits do not depend on `threads`.
inline LossAndGradients backward(const HashModel& model, const Batch& batch, const CenterMatrix& centers,
                                 const LossConfig& cfg, std::size_t threads = 1) {
  if (batch.size() == 0) fail_argument("backward: empty batch");
  if (batch.dim != model.input_dim) fail_argument("backward: batch feature width does not match model");
  if (centers.bits != model.bits) fail_argument("backward: center length does not match model K");
  if (centers.classes < 2) fail_argument("backward: need at least 2 centers");
  const std::size_t K = model.bits;
  const std::size_t chunks = (batch.size() + kGradientChunk - 1) / kGradientChunk;
  LossAndGradients out;
  out.forward.pre.resize(batch.size() * K);
  out.forward.code.resize(batch.size() * K);
  std::vector<detail::ChunkResult> parts(chunks);
  for (auto& p : parts) p.grads = Gradients(model.input_dim, K);

  auto run = [&](std::size_t worker, std::size_t stride) {
    for (std::size_t i = worker; i < chunks; i += stride) {
      const std::size_t first = i * kGradientChunk;
      const std::size_t last = std::min(batch.size(), first + kGradientChunk);
      detail::chunk_gradients(model, batch, centers, cfg, first, last, out.forward, parts[i]);
    }
  };
  const std::size_t workers = std::clamp<std::size_t>(threads, 1, chunks);
  if (workers == 1) {
    run(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run, w, workers);
  }

  out.grads = Gradients(model.input_dim, K);
  double ce = 0.0, q = 0.0;
  for (const auto& p : parts) {
    ce += p.ce;
    q += p.q;
    out.grads.add(p.grads);
  }
  const double n = static_cast<double>(batch.size());
  out.loss = ce / n + cfg.lambda * q / (n * static_cast<double>(K));
  return out;
}

/// Adam with bias correction and decoupled weight decay on W only.
struct OptimizerConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-5;

  void validate() const {
    if (!(learning_rate >= 0)) fail_argument("optimizer: learning rate must be >= 0");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) fail_argument("optimizer: betas must be in [0,1)");
    if (!(epsilon > 0)) fail_argument("optimizer: epsilon must be > 0");
    if (!(weight_decay >= 0)) fail_argument("optimizer: weight decay must be >= 0");
  }
};

struct OptimizerState {
  std::uint64_t step = 0;
  std::vector<double> m_weights, v_weights, m_bias, v_bias;

  OptimizerState() = default;
  OptimizerState(std::size_t D, std::size_t K)
      : m_weights(D * K, 0.0), v_weights(D * K, 0.0), m_bias(K, 0.0), v_bias(K, 0.0) {}

  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

/// Cosine annealing from `initial` at epoch 0 down to 0 at `total_epochs`.
inline double cosine_learning_rate(double initial, std::size_t epoch, std::size_t total_epochs) {
  if (total_epochs == 0) return initial;
  const double t = std::min<double>(static_cast<double>(epoch), static_cast<double>(total_epochs));
  return 0.5 * initial * (1.0 + std::cos(std::numbers::pi * t / static_cast<double>(total_epochs)));
}

inline void optimizer_step(HashModel& model, OptimizerState& state, const Gradients& grads,
                           const OptimizerConfig& opt, double learning_rate) {
  auto finite = [](const std::vector<double>& g) {
    return std::all_of(g.begin(), g.end(), [](double x) { return std::isfinite(x); });
  };
  if (!finite(grads.weights) || !finite(grads.bias)) fail_data("optimizer_step: non-finite gradient");
  if (grads.weights.size() != model.weights.size() || grads.bias.size() != model.bias.size())
    fail_argument("optimizer_step: gradient shape mismatch");
  if (state.m_weights.size() != model.weights.size()) state = OptimizerState(model.input_dim, model.bits);

  ++state.step;
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step));
  auto update = [&](std::vector<double>& p, const std::vector<double>& g, std::vector<double>& m,
                    std::vector<double>& v, double decay) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g[i];
      v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p[i] -= learning_rate * decay * p[i];
      p[i] -= learning_rate * mhat / (std::sqrt(vhat) + opt.epsilon);
    }
  };
  update(model.weights, grads.weights, state.m_weights, state.v_weights, opt.weight_decay);
  update(model.bias, grads.bias, state.m_bias, state.v_bias, 0.0);
  if (!model.finite()) fail_data("optimizer_step: parameters became non-finite at step " + std::to_string(state.step));
}

}  // namespace crh
