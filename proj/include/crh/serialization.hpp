#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include "json.hpp"

#include "crh/assignment.hpp"
#include "crh/codebook_file.hpp"
#include "crh/detail/bytes.hpp"
#include "crh/eval.hpp"
#include "crh/hash_model.hpp"
#include "crh/trainer.hpp"

namespace crh {

using Json = nlohmann::ordered_json;

// ---- enums ----------------------------------------------------------------

inline std::string to_string(Mode m) {
  switch (m) {
    case Mode::crh: return "CRH";
    case Mode::crh_m: return "CRH-M";
    case Mode::crh_u: return "CRH-U";
  }
  return "?";
}
inline std::string to_string(Solver s) { return s == Solver::greedy ? "greedy" : "hungarian"; }
inline std::string to_string(Sampling s) { return s == Sampling::bernoulli ? "bernoulli" : "unique"; }
inline std::string to_string(CostSource s) { return s == CostSource::incremental ? "incremental" : "exact_recompute"; }
inline std::string to_string(GreedyOrder o) { return o == GreedyOrder::per_head ? "per_head" : "per_event"; }

inline Mode parse_mode(const std::string& s) {
  if (s == "CRH") return Mode::crh;
  if (s == "CRH-M") return Mode::crh_m;
  if (s == "CRH-U") return Mode::crh_u;
  fail_argument("unknown mode '" + s + "' (expected CRH, CRH-M or CRH-U)");
}
inline Solver parse_solver(const std::string& s) {
  if (s == "greedy") return Solver::greedy;
  if (s == "hungarian") return Solver::hungarian;
  fail_argument("unknown solver '" + s + "' (expected greedy or hungarian)");
}
inline Sampling parse_sampling(const std::string& s) {
  if (s == "bernoulli") return Sampling::bernoulli;
  if (s == "unique") return Sampling::unique;
  fail_argument("unknown sampling '" + s + "' (expected bernoulli or unique)");
}
inline CostSource parse_cost_source(const std::string& s) {
  if (s == "exact_recompute") return CostSource::exact_recompute;
  if (s == "incremental") return CostSource::incremental;
  fail_argument("unknown cost_source '" + s + "'");
}
inline GreedyOrder parse_greedy_order(const std::string& s) {
  if (s == "per_head") return GreedyOrder::per_head;
  if (s == "per_event") return GreedyOrder::per_event;
  fail_argument("unknown greedy_order '" + s + "'");
}

// ---- TrainConfig ----------------------------------------------------------

namespace detail {

inline Json interval_to_json(std::size_t v) { return v == 0 ? Json("inf") : Json(v); }

inline std::size_t interval_from_json(const Json& j, const char* key) {
  if (j.is_string() && j.get<std::string>() == "inf") return 0;
  if (j.is_number_unsigned()) return j.get<std::size_t>();
  fail_argument(std::string("config: ") + key + " must be a non-negative integer or \"inf\"");
}

inline void check_keys(const Json& j, std::initializer_list<const char*> allowed, const char* where) {
  if (!j.is_object()) fail_argument(std::string("config: ") + where + " must be an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!ok.count(it.key())) fail_argument(std::string("config: unknown key '") + it.key() + "' in " + where);
}

template <typename T>
T get_number(const Json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    fail_argument(std::string("config: bad value for '") + key + "'");
  }
}

}  // namespace detail

inline Json to_json(const UpdateSchedule& s) {
  return Json{{"warmup_epochs", s.warmup_epochs},
              {"warmup_interval", detail::interval_to_json(s.warmup_interval)},
              {"later_interval", detail::interval_to_json(s.later_interval)}};
}

inline Json to_json(const TrainConfig& c) {
  return Json{{"K", c.bits},
              {"M", c.codebook_size},
              {"H", c.heads},
              {"d", c.head_width},
              {"lambda", c.lambda},
              {"margin", c.margin},
              {"s", c.scale > 0 ? Json(c.scale) : Json("auto")},
              {"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"seed", c.seed},
              {"update_schedule", to_json(c.schedule)},
              {"solver", to_string(c.solver)},
              {"greedy_order", to_string(c.greedy_order)},
              {"mode", to_string(c.mode)},
              {"codebook_sampling", to_string(c.sampling)},
              {"cost_source", to_string(c.cost_source)},
              {"strict_heads", c.strict_heads},
              {"early_stop", c.early_stop},
              {"learning_rate", c.optimizer.learning_rate},
              {"beta1", c.optimizer.beta1},
              {"beta2", c.optimizer.beta2},
              {"epsilon", c.optimizer.epsilon},
              {"weight_decay", c.optimizer.weight_decay}};
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline TrainConfig train_config_from_json(const Json& j) {
  detail::check_keys(j,
                     {"K", "M", "H", "d", "lambda", "margin", "s", "epochs", "batch_size", "seed", "update_schedule",
                      "solver", "greedy_order", "mode", "codebook_sampling", "cost_source", "strict_heads",
                      "early_stop", "learning_rate", "beta1", "beta2", "epsilon", "weight_decay", "threads"},
                     "config");
  TrainConfig c;
  if (j.contains("K")) c.bits = detail::get_number<std::size_t>(j, "K");
  if (j.contains("M")) c.codebook_size = detail::get_number<std::size_t>(j, "M");
  if (j.contains("H")) c.heads = detail::get_number<std::size_t>(j, "H");
  if (j.contains("d")) c.head_width = detail::get_number<std::size_t>(j, "d");
  if (j.contains("lambda")) c.lambda = detail::get_number<double>(j, "lambda");
  if (j.contains("margin")) c.margin = detail::get_number<double>(j, "margin");
  if (j.contains("s")) {
    if (j["s"].is_string()) {
      if (j["s"].get<std::string>() != "auto") fail_argument("config: s must be a number or \"auto\"");
      c.scale = 0.0;
    } else {
      c.scale = detail::get_number<double>(j, "s");
    }
  }
  if (j.contains("epochs")) c.epochs = detail::get_number<std::size_t>(j, "epochs");
  if (j.contains("batch_size")) c.batch_size = detail::get_number<std::size_t>(j, "batch_size");
  if (j.contains("seed")) c.seed = detail::get_number<std::uint64_t>(j, "seed");
  if (j.contains("update_schedule")) {
    const Json& s = j["update_schedule"];
    detail::check_keys(s, {"warmup_epochs", "warmup_interval", "later_interval"}, "update_schedule");
    if (s.contains("warmup_epochs")) c.schedule.warmup_epochs = detail::get_number<std::size_t>(s, "warmup_epochs");
    if (s.contains("warmup_interval"))
      c.schedule.warmup_interval = detail::interval_from_json(s["warmup_interval"], "warmup_interval");
    if (s.contains("later_interval"))
      c.schedule.later_interval = detail::interval_from_json(s["later_interval"], "later_interval");
  }
  auto str = [&](const char* key) {
    if (!j[key].is_string()) fail_argument(std::string("config: '") + key + "' must be a string");
    return j[key].get<std::string>();
  };
  auto flag = [&](const char* key) {
    if (!j[key].is_boolean()) fail_argument(std::string("config: '") + key + "' must be a boolean");
    return j[key].get<bool>();
  };
  if (j.contains("solver")) c.solver = parse_solver(str("solver"));
  if (j.contains("greedy_order")) c.greedy_order = parse_greedy_order(str("greedy_order"));
  if (j.contains("mode")) c.mode = parse_mode(str("mode"));
  if (j.contains("codebook_sampling")) c.sampling = parse_sampling(str("codebook_sampling"));
  if (j.contains("cost_source")) c.cost_source = parse_cost_source(str("cost_source"));
  if (j.contains("strict_heads")) c.strict_heads = flag("strict_heads");
  if (j.contains("early_stop")) c.early_stop = flag("early_stop");
  if (j.contains("learning_rate")) c.optimizer.learning_rate = detail::get_number<double>(j, "learning_rate");
  if (j.contains("beta1")) c.optimizer.beta1 = detail::get_number<double>(j, "beta1");
  if (j.contains("beta2")) c.optimizer.beta2 = detail::get_number<double>(j, "beta2");
  if (j.contains("epsilon")) c.optimizer.epsilon = detail::get_number<double>(j, "epsilon");
  if (j.contains("weight_decay")) c.optimizer.weight_decay = detail::get_number<double>(j, "weight_decay");
  if (j.contains("threads")) c.threads = detail::get_number<std::size_t>(j, "threads");
  return c;
}

// ---- synthetic spec -------------------------------------------------------

inline Json to_json(const SynthSpec& s) {
  return Json{{"C", s.classes},
              {"G", s.superclasses},
              {"D", s.dim},
              {"samples_per_class", s.samples_per_class},
              {"sigma_super", s.sigma_super},
              {"sigma_class", s.sigma_class},
              {"sigma_noise", s.sigma_noise},
              {"rho", s.cooccurrence},
              {"seed", s.seed}};
}

inline SynthSpec synth_spec_from_json(const Json& j) {
  detail::check_keys(j, {"C", "G", "D", "samples_per_class", "sigma_super", "sigma_class", "sigma_noise", "rho", "seed"},
                     "synthetic spec");
  SynthSpec s;
  if (j.contains("C")) s.classes = detail::get_number<std::size_t>(j, "C");
  if (j.contains("G")) s.superclasses = detail::get_number<std::size_t>(j, "G");
  if (j.contains("D")) s.dim = detail::get_number<std::size_t>(j, "D");
  if (j.contains("samples_per_class")) s.samples_per_class = detail::get_number<std::size_t>(j, "samples_per_class");
  if (j.contains("sigma_super")) s.sigma_super = detail::get_number<double>(j, "sigma_super");
  if (j.contains("sigma_class")) s.sigma_class = detail::get_number<double>(j, "sigma_class");
  if (j.contains("sigma_noise")) s.sigma_noise = detail::get_number<double>(j, "sigma_noise");
  if (j.contains("rho")) s.cooccurrence = detail::get_number<double>(j, "rho");
  if (j.contains("seed")) s.seed = detail::get_number<std::uint64_t>(j, "seed");
  s.validate();
  return s;
}

// ---- assignment -----------------------------------------------------------

inline Json assignment_to_json(const CenterAssignment& a, const Codebook& book) {
  Json centers = Json::array();
  for (const auto& c : a.centers(book)) centers.push_back(c.to_string());
  return Json{{"K", book.bits()},
              {"M", book.size()},
              {"H", a.layout.heads},
              {"per_head", a.per_head},
              {"centers", std::move(centers)}};
}

inline CenterAssignment assignment_from_json(const Json& j, const Codebook& book) {
  try {
    CenterAssignment a;
    const auto K = j.at("K").get<std::size_t>();
    const auto M = j.at("M").get<std::size_t>();
    if (K != book.bits() || M != book.size()) fail_data("assignment: K/M do not match the codebook");
    a.layout = HeadLayout::split(K, j.at("H").get<std::size_t>());
    a.codebook_size = M;
    a.per_head = j.at("per_head").get<std::vector<std::vector<std::size_t>>>();
    if (a.per_head.size() != a.layout.heads) fail_data("assignment: per_head has wrong number of heads");
    for (const auto& head : a.per_head) {
      if (head.size() != a.per_head.front().size()) fail_data("assignment: heads disagree on class count");
      for (auto row : head)
        if (row >= M) fail_data("assignment: codebook row out of range");
    }
    return a;
  } catch (const nlohmann::json::exception& e) {
    fail_data(std::string("assignment: malformed JSON: ") + e.what());
  }
}

/// Materialized centers stored alongside the per-head rows.
inline std::vector<BinaryCode> centers_from_json(const Json& j) {
  try {
    std::vector<BinaryCode> out;
    for (const auto& c : j.at("centers")) out.push_back(BinaryCode::from_string(c.get<std::string>()));
    if (out.empty()) fail_data("assignment: no centers");
    for (const auto& c : out)
      if (c.length() != out.front().length()) fail_data("assignment: centers differ in length");
    return out;
  } catch (const nlohmann::json::exception& e) {
    fail_data(std::string("assignment: malformed JSON: ") + e.what());
  } catch (const Error& e) {
    fail_data(std::string("assignment: ") + e.what());
  }
}

// ---- run history ----------------------------------------------------------

inline Json to_json(const EpochRecord& r) {
  Json j{{"epoch", r.epoch},
         {"mean_loss", r.mean_loss},
         {"learning_rate", r.learning_rate},
         {"reassigned", r.reassigned}};
  if (r.change_fraction) j["change_fraction"] = *r.change_fraction;
  if (!r.head_costs.empty()) j["head_costs"] = r.head_costs;
  j["d_min"] = r.centers.d_min;
  j["d_avg"] = r.centers.d_avg();
  return j;
}

inline std::string history_to_jsonl(const RunHistory& h) {
  std::string out;
  for (const auto& r : h.epochs) out += to_json(r).dump() + "\n";
  return out;
}

// ---- metrics --------------------------------------------------------------

struct Metrics {
  double map = 0.0;
  std::optional<double> pcc;
  std::optional<DistanceStats> distances;
  std::size_t top_k = 0;
  std::size_t num_queries = 0;
};

inline Json to_json(const Metrics& m) {
  Json j{{"map", m.map}};
  j["pcc"] = m.pcc ? Json(*m.pcc) : Json(nullptr);
  j["d_min"] = m.distances ? Json(m.distances->d_min) : Json(nullptr);
  j["d_avg"] = m.distances ? Json(m.distances->d_avg()) : Json(nullptr);
  j["k"] = m.top_k == 0 ? Json("all") : Json(m.top_k);
  j["num_queries"] = m.num_queries;
  return j;
}

/// Checks a metrics document against the published schema.
inline bool metrics_json_valid(const Json& j, std::string* why = nullptr) {
  auto bad = [&](const std::string& msg) {
    if (why) *why = msg;
    return false;
  };
  if (!j.is_object()) return bad("not an object");
  for (const char* key : {"map", "pcc", "d_min", "d_avg", "k", "num_queries"})
    if (!j.contains(key)) return bad(std::string("missing ") + key);
  if (j.size() != 6) return bad("unexpected keys");
  if (!j["map"].is_number() || j["map"].get<double>() < 0 || j["map"].get<double>() > 1) return bad("map not in [0,1]");
  if (!j["pcc"].is_null() && (!j["pcc"].is_number() || std::abs(j["pcc"].get<double>()) > 1)) return bad("pcc not in [-1,1]");
  if (!j["d_min"].is_null() && !j["d_min"].is_number_unsigned()) return bad("d_min not a count");
  if (!j["d_avg"].is_null() && !j["d_avg"].is_number()) return bad("d_avg not a number");
  if (!(j["k"].is_number_unsigned() || (j["k"].is_string() && j["k"] == "all"))) return bad("k not a count or \"all\"");
  if (!j["num_queries"].is_number_unsigned()) return bad("num_queries not a count");
  return true;
}

// ---- similarity matrix ----------------------------------------------------

inline Json to_json(const SimilarityMatrix& m) {
  Json rows = Json::array();
  for (std::size_t i = 0; i < m.size; ++i) {
    Json row = Json::array();
    for (std::size_t j = 0; j < m.size; ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return Json{{"C", m.size}, {"matrix", std::move(rows)}};
}

inline SimilarityMatrix similarity_from_json(const Json& j) {
  try {
    SimilarityMatrix m;
    m.size = j.at("C").get<std::size_t>();
    const auto rows = j.at("matrix").get<std::vector<std::vector<double>>>();
    if (rows.size() != m.size) fail_data("similarity matrix: row count does not match C");
    for (std::size_t i = 0; i < m.size; ++i) {
      if (rows[i].size() != m.size) fail_data("similarity matrix: row " + std::to_string(i) + " has wrong length");
      m.values.insert(m.values.end(), rows[i].begin(), rows[i].end());
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    fail_data(std::string("similarity matrix: malformed JSON: ") + e.what());
  }
}

// ---- model checkpoint -----------------------------------------------------
// "CRHM", u32 version=1, u32 header length, JSON header, then float64 LE
// arrays in header order: weights, bias, m_weights, v_weights, m_bias, v_bias.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  HashModel model;
  OptimizerState optimizer;
  std::size_t epoch = 0;
  double initial_learning_rate = 0.0;
  std::size_t total_epochs = 0;
};

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  const std::size_t D = ck.model.input_dim;
  const std::size_t K = ck.model.bits;
  OptimizerState opt = ck.optimizer;
  if (opt.m_weights.size() != D * K) opt = OptimizerState(D, K);
  Json header{{"D", D},
              {"K", K},
              {"epoch", ck.epoch},
              {"schedule",
               {{"kind", "cosine"},
                {"initial_learning_rate", ck.initial_learning_rate},
                {"total_epochs", ck.total_epochs},
                {"step", opt.step}}},
              {"arrays",
               Json::array({Json{{"name", "weights"}, {"length", D * K}}, Json{{"name", "bias"}, {"length", K}},
                            Json{{"name", "m_weights"}, {"length", D * K}}, Json{{"name", "v_weights"}, {"length", D * K}},
                            Json{{"name", "m_bias"}, {"length", K}}, Json{{"name", "v_bias"}, {"length", K}}})}};
  const std::string text = header.dump();
  detail::ByteWriter w;
  w.magic("CRHM");
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.bytes(text.data(), text.size());
  const std::array<const std::vector<double>*, 6> arrays{&ck.model.weights, &ck.model.bias, &opt.m_weights,
                                                        &opt.v_weights,   &opt.m_bias,    &opt.v_bias};
  for (const auto* arr : arrays)
    for (double v : *arr) w.f64(v);
  return w.buffer();
}

inline void write_checkpoint(const Checkpoint& ck, const std::string& path) {
  detail::ByteWriter w;
  const auto bytes = encode_checkpoint(ck);
  w.bytes(bytes.data(), bytes.size());
  w.save(path);
}

inline Checkpoint read_checkpoint(const std::string& path) {
  auto r = detail::ByteReader::open(path);
  r.expect_magic("CRHM");
  const auto version = r.u32("version");
  if (version != kCheckpointVersion) r.fail("unsupported version " + std::to_string(version));
  const auto len = r.u32("header length");
  r.need(len, "header");
  Json header;
  try {
    header = Json::parse(std::string(reinterpret_cast<const char*>(r.cursor()), len));
  } catch (const nlohmann::json::exception& e) {
    r.fail(std::string("bad checkpoint header: ") + e.what());
  }
  r.skip(len, "header");
  Checkpoint ck;
  try {
    const auto D = header.at("D").get<std::size_t>();
    const auto K = header.at("K").get<std::size_t>();
    ck.model = HashModel(D, K);
    ck.optimizer = OptimizerState(D, K);
    ck.epoch = header.at("epoch").get<std::size_t>();
    const auto& sched = header.at("schedule");
    ck.initial_learning_rate = sched.at("initial_learning_rate").get<double>();
    ck.total_epochs = sched.at("total_epochs").get<std::size_t>();
    ck.optimizer.step = sched.at("step").get<std::uint64_t>();
    std::vector<double>* targets[] = {&ck.model.weights, &ck.optimizer.m_weights, &ck.optimizer.v_weights,
                                      &ck.model.bias, &ck.optimizer.m_bias, &ck.optimizer.v_bias};
    const char* names[] = {"weights", "m_weights", "v_weights", "bias", "m_bias", "v_bias"};
    for (const auto& entry : header.at("arrays")) {
      const auto name = entry.at("name").get<std::string>();
      const auto length = entry.at("length").get<std::size_t>();
      std::vector<double>* dst = nullptr;
      for (std::size_t i = 0; i < 6; ++i)
        if (name == names[i]) dst = targets[i];
      if (!dst) r.fail("unknown array '" + name + "'");
      if (dst->size() != length) r.fail("array '" + name + "' has length " + std::to_string(length));
      r.need(length * 8, "array data");
      r.read(dst->data(), length * 8, "array data");
    }
  } catch (const nlohmann::json::exception& e) {
    r.fail(std::string("bad checkpoint header: ") + e.what());
  }
  r.expect_end();
  if (!ck.model.finite()) fail_data(path + ": checkpoint holds non-finite parameters");
  return ck;
}

// ---- misc -----------------------------------------------------------------

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail_data("cannot open '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail_data(path + ": " + e.what());
  }
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail_data("cannot open '" + path + "' for writing");
  out << text;
  if (!out) fail_data("write to '" + path + "' failed");
}

}  // namespace crh
