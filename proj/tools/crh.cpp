#include <openssl/evp.h>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "crh/crh.hpp"

namespace fs = std::filesystem;
using namespace crh;

namespace {

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument: return 2;
    case ErrorKind::data: return 3;
    case ErrorKind::infeasible: return 4;
  }
  return 3;
}

const char* kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument: return "usage";
    case ErrorKind::data: return "data";
    case ErrorKind::infeasible: return "infeasible";
  }
  return "data";
}

void report_error(const std::string& kind, const std::string& message) {
  std::cerr << Json{{"error", kind}, {"message", message}}.dump() << "\n";
}

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_data("cannot open '" + path + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr)) fail_data("sha256 failed");
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return hex.str();
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail_data("cannot create directory '" + dir + "': " + ec.message());
}

HashModel load_model(const std::string& path, const Dataset& ds) {
  auto model = read_checkpoint(path).model;
  if (model.input_dim != ds.dim)
    fail_data("model expects D=" + std::to_string(model.input_dim) + " but data has D=" + std::to_string(ds.dim));
  return model;
}

// ---- gen-codebook ---------------------------------------------------------

struct GenCodebookArgs {
  std::size_t k = 0, m = 0;
  std::string sampling = "unique";
  std::uint64_t seed = 0;
  std::string out;
};

void gen_codebook(const GenCodebookArgs& a) {
  const auto sampling = parse_sampling(a.sampling);
  Codebook book;
  std::size_t duplicates = 0;
  if (sampling == Sampling::bernoulli) {
    auto sampled = sample_codebook_bernoulli(a.k, a.m, a.seed);
    duplicates = sampled.duplicates.size();
    book = std::move(sampled.codebook);
  } else {
    book = sample_codebook_unique(a.k, a.m, a.seed);
  }
  write_codebook(book, a.out);
  Json summary{{"M", book.size()}, {"K", book.bits()}, {"duplicates", duplicates}};
  if (book.size() >= 2) {
    const auto stats = codebook_distance_stats(book.codes());
    summary["d_min"] = stats.d_min;
    summary["d_avg"] = stats.d_avg();
  }
  std::cout << summary.dump() << "\n";
}

// ---- synth ----------------------------------------------------------------

struct SynthArgs {
  std::string spec;
  std::optional<std::uint64_t> seed;
  std::string out_data, out_embeddings, out_simref;
  std::string embeddings_per = "sample";
};

void synth(const SynthArgs& a) {
  if (a.embeddings_per != "sample" && a.embeddings_per != "class")
    fail_argument("--embeddings-per must be 'sample' or 'class'");
  SynthSpec spec = a.spec.empty() ? SynthSpec{} : synth_spec_from_json(read_json_file(a.spec));
  if (a.seed) spec.seed = *a.seed;
  spec.validate();
  const auto s = generate_synthetic(spec);
  write_dataset(s.dataset, a.out_data);

  if (!a.out_embeddings.empty()) {
    Embeddings emb;
    emb.dim = spec.dim;
    if (a.embeddings_per == "class") {
      for (const auto& p : s.prototypes)
        for (double v : p) emb.values.push_back(static_cast<float>(v));
    } else {
      // each sample carries the mean prototype of its labels
      for (const auto& y : s.dataset.labels)
        for (std::size_t i = 0; i < spec.dim; ++i) {
          double v = 0.0;
          for (auto c : y) v += s.prototypes[c][i];
          emb.values.push_back(static_cast<float>(v / static_cast<double>(y.size())));
        }
    }
    write_embeddings(emb, a.out_embeddings);
  }
  if (!a.out_simref.empty())
    write_text_file(a.out_simref,
                    to_json(cosine_similarity_matrix(std::span<const std::vector<double>>(s.prototypes))).dump(2) + "\n");
  std::cout << Json{{"N", s.dataset.size()}, {"C", s.dataset.classes}, {"D", s.dataset.dim},
                    {"single_label", s.dataset.single_label}}
                   .dump()
            << "\n";
}

// ---- train ----------------------------------------------------------------

struct TrainArgs {
  std::string config, data, out_dir;
  std::optional<std::size_t> threads;
  std::optional<std::uint64_t> seed;
};

void train_cmd(const TrainArgs& a) {
  TrainConfig cfg = train_config_from_json(read_json_file(a.config));
  if (a.threads) cfg.threads = *a.threads;
  if (a.seed) cfg.seed = *a.seed;
  if (cfg.threads == 0) fail_argument("--threads must be >= 1");
  const Dataset ds = read_dataset(a.data);
  resolve(cfg, ds.classes);  // reject bad configs before creating outputs

  const auto result = train(cfg, ds);
  ensure_dir(a.out_dir);
  const fs::path dir(a.out_dir);
  auto path = [&](const char* name) { return (dir / name).string(); };

  write_text_file(path("config.json"), to_json(cfg).dump(2) + "\n");
  write_codebook(result.codebook, path("codebook.crhc"));
  write_checkpoint({result.model, result.optimizer, result.history.epochs.size(), cfg.optimizer.learning_rate, cfg.epochs},
                   path("model.ckpt"));
  write_text_file(path("assignment.json"), assignment_to_json(result.assignment, result.codebook).dump(2) + "\n");
  write_text_file(path("initial_assignment.json"),
                  assignment_to_json(result.initial_assignment, result.codebook).dump(2) + "\n");
  write_text_file(path("history.jsonl"), history_to_jsonl(result.history));

  Json files = Json::object();
  for (const char* name :
       {"config.json", "codebook.crhc", "model.ckpt", "assignment.json", "initial_assignment.json", "history.jsonl"})
    files[name] = sha256_file(path(name));
  const Json streams{{"codebook", static_cast<int>(Stream::codebook)},
                     {"init_assignment", static_cast<int>(Stream::init_assignment)},
                     {"model_init", static_cast<int>(Stream::model_init)},
                     {"batch_order", static_cast<int>(Stream::batch_order)},
                     {"greedy_order", static_cast<int>(Stream::greedy_order)}};
  const Json manifest{{"seed", cfg.seed},
                      {"streams", streams},
                      {"files", files},
                      {"initial_assignment", assignment_to_json(result.initial_assignment, result.codebook)},
                      {"codebook_duplicates", result.codebook_duplicates},
                      {"epochs_run", result.history.epochs.size()},
                      {"stopped_early", result.history.stopped_early}};
  write_text_file(path("manifest.json"), manifest.dump(2) + "\n");

  const double final_loss = result.history.epochs.empty() ? 0.0 : result.history.epochs.back().mean_loss;
  std::cerr << "trained " << result.history.epochs.size() << " epochs"
            << (result.history.stopped_early ? " (stopped early)" : "") << ", final loss " << final_loss << "\n";
}

// ---- eval -----------------------------------------------------------------

struct EvalArgs {
  std::string model, assignment, data, queries;
  std::size_t k = 0;
  std::string embeddings, simref, out;
  bool exclude_empty = false;
};

void eval_cmd(const EvalArgs& a) {
  if (!a.embeddings.empty() && !a.simref.empty()) fail_argument("give at most one of --embeddings and --simref");
  const Dataset db = read_dataset(a.data);
  const Dataset queries = a.queries.empty() ? db : read_dataset(a.queries);
  if (queries.dim != db.dim) fail_data("queries and database differ in D");
  const auto model = load_model(a.model, db);
  const auto centers = centers_from_json(read_json_file(a.assignment));
  if (centers.front().length() != model.bits) fail_data("assignment K does not match the model");

  const auto db_codes = encode(model, db);
  const auto q_codes = encode(model, queries);
  const auto map = map_at_k(db_codes, db.labels, q_codes, queries.labels, {a.k, a.exclude_empty});

  Metrics m;
  m.map = map.map;
  m.top_k = a.k;
  m.num_queries = map.num_queries;
  if (centers.size() >= 2) m.distances = codebook_distance_stats(centers);
  if (!a.simref.empty()) {
    m.pcc = semantic_alignment_report(centers, similarity_from_json(read_json_file(a.simref))).pcc;
  } else if (!a.embeddings.empty()) {
    const auto emb = read_embeddings(a.embeddings);
    if (emb.count() == db.size()) {
      m.pcc = semantic_alignment_report(centers, emb, db.labels).pcc;
    } else if (emb.count() == centers.size()) {
      std::vector<std::vector<double>> protos;
      for (std::size_t c = 0; c < emb.count(); ++c) protos.emplace_back(emb.row(c).begin(), emb.row(c).end());
      m.pcc = semantic_alignment_report(centers, cosine_similarity_matrix(std::span<const std::vector<double>>(protos))).pcc;
    } else {
      fail_data("embeddings hold " + std::to_string(emb.count()) + " records; expected N=" + std::to_string(db.size()) +
                " or C=" + std::to_string(centers.size()));
    }
  }
  const auto text = to_json(m).dump(2) + "\n";
  if (a.out.empty()) std::cout << text;
  else write_text_file(a.out, text);
  if (map.queries_without_hits) std::cerr << map.queries_without_hits << " queries had no relevant item\n";
}

// ---- reassign -------------------------------------------------------------

struct ReassignArgs {
  std::string model, data, codebook, previous, out;
  std::size_t heads = 1;
  std::string solver = "greedy";
  std::string greedy_order = "per_head";
  std::uint64_t seed = 0;
};

void reassign_cmd(const ReassignArgs& a) {
  const auto solver = parse_solver(a.solver);
  const auto order = parse_greedy_order(a.greedy_order);
  const Dataset ds = read_dataset(a.data);
  const auto model = load_model(a.model, ds);
  const auto book = read_codebook(a.codebook);
  if (book.bits() != model.bits) fail_data("codebook K does not match the model");
  const auto layout = HeadLayout::split(book.bits(), a.heads);
  std::optional<CenterAssignment> previous;
  if (!a.previous.empty()) previous = assignment_from_json(read_json_file(a.previous), book);

  Rng rng = make_rng(a.seed, Stream::greedy_order);
  const auto codes = encode(model, ds);
  const auto result = reassign_centers(codes, ds.labels, ds.classes, book, layout, {solver, order}, rng);
  if (!a.out.empty()) write_text_file(a.out, assignment_to_json(result.assignment, book).dump(2) + "\n");

  Json summary{{"head_costs", result.head_costs}};
  if (previous) {
    if (previous->classes() != ds.classes) fail_data("previous assignment has a different class count");
    std::size_t changed = 0;
    for (std::size_t c = 0; c < ds.classes; ++c)
      if (!(previous->center(c, book) == result.assignment.center(c, book))) ++changed;
    summary["changed"] = changed;
  }
  std::cout << summary.dump() << "\n";
}

// ---- import-csv -----------------------------------------------------------

struct ImportArgs {
  std::string in, out;
  std::size_t classes = 0;
};

void import_cmd(const ImportArgs& a) {
  std::ifstream in(a.in);
  if (!in) fail_data("cannot open '" + a.in + "'");
  const auto ds = import_csv(in, a.classes);
  write_dataset(ds, a.out);
  std::cout << Json{{"N", ds.size()}, {"C", ds.classes}, {"D", ds.dim}}.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Center-reassigned hashing toolkit"};
  app.require_subcommand(1);

  GenCodebookArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-codebook", "Sample a binary codebook");
  gen_cmd->add_option("--k", gen.k, "Code length")->required();
  gen_cmd->add_option("--m", gen.m, "Codebook size")->required();
  gen_cmd->add_option("--sampling", gen.sampling, "unique or bernoulli");
  gen_cmd->add_option("--seed", gen.seed);
  gen_cmd->add_option("--out", gen.out, "Output CRHC file")->required();

  SynthArgs syn;
  auto* syn_cmd = app.add_subcommand("synth", "Generate a hierarchical synthetic dataset");
  syn_cmd->add_option("--spec", syn.spec, "Spec JSON (defaults when omitted)");
  syn_cmd->add_option("--seed", syn.seed);
  syn_cmd->add_option("--out-data", syn.out_data, "Output CRHF file")->required();
  syn_cmd->add_option("--out-embeddings", syn.out_embeddings, "Output CRHE file of ground-truth prototypes");
  syn_cmd->add_option("--embeddings-per", syn.embeddings_per, "sample or class");
  syn_cmd->add_option("--out-simref", syn.out_simref, "Output JSON of the ground-truth similarity matrix");

  TrainArgs tr;
  auto* tr_cmd = app.add_subcommand("train", "Train a hash head with center reassignment");
  tr_cmd->add_option("--config", tr.config, "TrainConfig JSON")->required();
  tr_cmd->add_option("--data", tr.data, "CRHF training set")->required();
  tr_cmd->add_option("--out-dir", tr.out_dir)->required();
  tr_cmd->add_option("--threads", tr.threads);
  tr_cmd->add_option("--seed", tr.seed, "Overrides the config seed");

  EvalArgs ev;
  auto* ev_cmd = app.add_subcommand("eval", "Retrieval and alignment metrics");
  ev_cmd->add_option("--model", ev.model)->required();
  ev_cmd->add_option("--assignment", ev.assignment)->required();
  ev_cmd->add_option("--data", ev.data, "Database CRHF")->required();
  ev_cmd->add_option("--queries", ev.queries, "Query CRHF (defaults to the database)");
  ev_cmd->add_option("--k", ev.k, "Top-k cutoff, 0 for all");
  ev_cmd->add_option("--embeddings", ev.embeddings, "Per-sample or per-class CRHE");
  ev_cmd->add_option("--simref", ev.simref, "Reference similarity JSON");
  ev_cmd->add_flag("--exclude-empty", ev.exclude_empty, "Skip queries with no relevant item");
  ev_cmd->add_option("--out", ev.out, "Metrics JSON path (stdout when omitted)");

  ReassignArgs re;
  auto* re_cmd = app.add_subcommand("reassign", "One-shot center reassignment from a trained model");
  re_cmd->add_option("--model", re.model)->required();
  re_cmd->add_option("--data", re.data)->required();
  re_cmd->add_option("--codebook", re.codebook)->required();
  re_cmd->add_option("--heads", re.heads);
  re_cmd->add_option("--solver", re.solver, "greedy or hungarian");
  re_cmd->add_option("--greedy-order", re.greedy_order, "per_head or per_event");
  re_cmd->add_option("--seed", re.seed);
  re_cmd->add_option("--previous", re.previous, "Assignment JSON to count changes against");
  re_cmd->add_option("--out", re.out, "Output assignment JSON");

  ImportArgs im;
  auto* im_cmd = app.add_subcommand("import-csv", "Convert a CSV file to CRHF");
  im_cmd->add_option("--in", im.in)->required();
  im_cmd->add_option("--out", im.out)->required();
  im_cmd->add_option("--classes", im.classes, "Class count (inferred when 0)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error("usage", e.what());
    return 2;
  }

  try {
    if (*gen_cmd) gen_codebook(gen);
    else if (*syn_cmd) synth(syn);
    else if (*tr_cmd) train_cmd(tr);
    else if (*ev_cmd) eval_cmd(ev);
    else if (*re_cmd) reassign_cmd(re);
    else if (*im_cmd) import_cmd(im);
  } catch (const Error& e) {
    report_error(kind_name(e.kind()), e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    report_error("data", e.what());
    return 3;
  }
  return 0;
}
