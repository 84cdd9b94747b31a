// gacr: generation-augmented code retrieval pipeline.
//
//   gacr synth --out data            seeded synthetic corpus
//   gacr ingest                      corpus statistics
//   gacr gen                         fill the snippet cache
//   gacr train                       vocabulary, checkpoint, loss log
//   gacr index                       encode the test pool
//   gacr search --query "..."        top-k listing for one query
//   gacr eval                        MRR report per variant
//   gacr sweep --axis cap|mask       ablation table
//   gacr gradcheck                   finite-difference gradient check
//
// Exit codes: 0 success, 1 operational failure, 2 usage error.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "gacr/checkpoint.hpp"
#include "gacr/corpus.hpp"
#include "gacr/error.hpp"
#include "gacr/generation.hpp"
#include "gacr/retrieval.hpp"
#include "gacr/run_config.hpp"
#include "gacr/synth.hpp"
#include "gacr/training.hpp"

namespace fs = std::filesystem;
using namespace gacr;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Overrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  std::optional<std::string> mask;
  std::optional<std::size_t> cap;
  std::optional<std::size_t> k;
  std::optional<std::size_t> jobs;
  std::optional<std::size_t> top_k;
};

RunConfig resolve_config(const Overrides& o) {
  RunConfig c = o.config_path.empty() ? RunConfig{} : load_run_config(o.config_path);
  if (o.seed) c.seed = *o.seed;
  if (o.mode) c.train.mode = parse_query_mode(*o.mode);
  if (o.mask) c.encoder.mask_type = parse_mask_type(*o.mask);
  if (o.cap) c.train.snippet_cap = *o.cap;
  if (o.k) c.train.k = *o.k;
  if (o.jobs) c.jobs = *o.jobs;
  if (o.top_k) c.top_k = *o.top_k;
  c.propagate();
  c.validate();
  return c;
}

void write_file(const fs::path& path, const std::function<void(std::ostream&)>& fn) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  fn(out);
}

struct Workspace {
  CorpusSplit train;
  CorpusSplit test;
  SnippetCache cache;
};

Workspace load_workspace(const RunConfig& c, bool fill_cache) {
  Workspace ws{load_corpus(c.train_path, "train"), load_corpus(c.test_path, "test"), SnippetCache::open(c.cache_path)};
  if (fill_cache && c.generation.backend == Backend::kStub) {
    if (c.cache_path.has_parent_path()) fs::create_directories(c.cache_path.parent_path());
    generate_all(ws.train.pairs, c.generation, ws.cache);
    generate_all(ws.test.pairs, c.generation, ws.cache);
  }
  return ws;
}

Vocabulary make_vocab(const RunConfig& c, const Workspace& ws) {
  std::vector<TokenList> extra;
  for (const auto& s : ws.cache.entries()) extra.push_back(s.tokens);
  return build_vocab({&ws.train, &ws.test}, extra, c.vocab_max_size, c.vocab_min_freq);
}

// ---------------------------------------------------------------------------

int cmd_synth(const RunConfig& c, const fs::path& out_dir, std::size_t pairs, std::size_t test) {
  SynthOptions o;
  o.seed = c.seed;
  o.num_pairs = pairs;
  o.num_test = test;
  const auto corpus = make_synthetic_corpus(o);
  fs::create_directories(out_dir);
  save_corpus(out_dir / "train.jsonl", corpus.train);
  save_corpus(out_dir / "test.jsonl", corpus.test);
  std::cout << "wrote " << corpus.train.pairs.size() << " train and " << corpus.test.pairs.size() << " test pairs to "
            << out_dir.string() << '\n';
  return kExitOk;
}

int cmd_ingest(const RunConfig& c) {
  for (const auto& [name, path] : {std::pair{"train", c.train_path}, std::pair{"test", c.test_path}}) {
    const auto split = load_corpus(path, name);
    std::map<std::string, std::size_t> langs;
    double doc_len = 0, code_len = 0;
    for (const auto& p : split.pairs) {
      ++langs[p.language];
      doc_len += static_cast<double>(p.doc_tokens.size());
      code_len += static_cast<double>(p.code_tokens.size());
    }
    const double n = static_cast<double>(split.pairs.size());
    std::cout << name << ": " << split.pairs.size() << " pairs, " << split.skipped_lines << " skipped, mean doc "
              << std::fixed << std::setprecision(1) << doc_len / n << " tokens, mean code " << code_len / n
              << " tokens\n";
    std::cout.unsetf(std::ios::fixed);
    for (const auto& [lang, count] : langs) std::cout << "  " << lang << ": " << count << '\n';
  }
  return kExitOk;
}

int cmd_gen(const RunConfig& c) {
  auto ws = load_workspace(c, false);
  if (c.cache_path.has_parent_path()) fs::create_directories(c.cache_path.parent_path());
  const std::size_t before = ws.cache.size();
  generate_all(ws.train.pairs, c.generation, ws.cache);
  generate_all(ws.test.pairs, c.generation, ws.cache);
  std::cout << "snippet cache " << c.cache_path.string() << ": " << ws.cache.size() << " entries ("
            << ws.cache.size() - before << " new)\n";
  return kExitOk;
}

int cmd_train(const RunConfig& c) {
  auto ws = load_workspace(c, true);
  const auto vocab = make_vocab(c, ws);
  fs::create_directories(c.work_dir);
  vocab.save(c.vocab_file());
  EncoderConfig enc = c.encoder;
  enc.vocab_size = vocab.size();
  TrainConfig tc = c.train;
  std::cout << "training " << to_string(tc.mode) << " on " << ws.train.pairs.size() << " pairs, vocabulary "
            << vocab.size() << ", mask " << to_char(enc.mask_type) << '\n';
  auto result = train_examples(make_examples(ws.train, ws.cache, vocab, tc, enc), tc, enc, &std::cout);
  write_file(c.loss_log_file(), [&](std::ostream& o) { write_loss_log(o, result.epoch_losses); });
  save_checkpoint({enc, tc, std::move(result.params), std::move(result.optimizer)}, c.checkpoint_file());
  std::cout << "checkpoint " << c.checkpoint_file().string() << '\n';
  return kExitOk;
}

Checkpoint load_trained(const RunConfig& c, Vocabulary& vocab) {
  vocab = Vocabulary::load(c.vocab_file());
  auto ck = load_checkpoint(c.checkpoint_file());
  if (ck.encoder.vocab_size != vocab.size())
    throw LoadError("checkpoint vocabulary size " + std::to_string(ck.encoder.vocab_size) + " does not match " +
                    c.vocab_file().string());
  return ck;
}

int cmd_index(const RunConfig& c) {
  Vocabulary vocab;
  const auto ck = load_trained(c, vocab);
  const auto test = load_corpus(c.test_path, "test");
  const auto index = build_index(test.pairs, vocab, ck.encoder, ck.params, file_fingerprint(c.checkpoint_file()), c.jobs);
  save_index(index, c.index_file());
  std::cout << "indexed " << index.size() << " candidates into " << c.index_file().string() << '\n';
  return kExitOk;
}

int cmd_search(const RunConfig& c, const std::string& query_text) {
  if (query_text.find_first_not_of(" \t\r\n") == std::string::npos) throw UsageError("--query must not be empty");
  if (!fs::exists(c.index_file())) throw Error("index not found: " + c.index_file().string());
  Vocabulary vocab;
  const auto ck = load_trained(c, vocab);
  const auto index = load_index(c.index_file());

  DocCodePair pair;
  pair.id = "query:" + query_text;
  pair.language = index.languages.empty() ? "unknown" : index.languages.front();
  pair.doc_tokens = tokenize_raw(query_text);

  // One generated snippet fused after the documentation (gacr_s).
  GenerationConfig gen = c.generation;
  gen.samples_per_prompt = 1;
  auto cache = SnippetCache::open(c.cache_path);
  const auto snippet = generate(pair, gen, cache).front();
  std::cout << "generated:\n" << snippet.raw_text << '\n';
  const auto input = build_query(QueryMode::kGacrS, encode_tokens(vocab, pair.doc_tokens),
                                 {encode_tokens(vocab, snippet.tokens)}, ck.train.snippet_cap, ck.encoder.max_seq_len,
                                 ck.encoder.mask_type);
  const auto ranked = search(encode_query(ck.encoder, ck.params, input), index, c.top_k, pair.id);
  for (std::size_t r = 0; r < ranked.entries.size(); ++r)
    std::cout << std::setw(4) << r + 1 << "  " << std::setw(12) << std::setprecision(6) << ranked.entries[r].score << "  "
              << ranked.entries[r].id << '\n';
  return kExitOk;
}

int cmd_eval(const RunConfig& c) {
  if (!fs::exists(c.index_file())) throw Error("index not found: " + c.index_file().string());
  Vocabulary vocab;
  const auto ck = load_trained(c, vocab);
  const auto index = load_index(c.index_file());
  if (index.fingerprint != file_fingerprint(c.checkpoint_file()))
    throw Error("index " + c.index_file().string() + " was built with a different checkpoint; rerun index");
  const auto test = load_corpus(c.test_path, "test");
  const auto cache = SnippetCache::open(c.cache_path);
  const auto reports = eval_variants(test, cache, vocab, ck, index, c.variants, c.eval);

  write_report_table(std::cout, reports);
  write_file(c.work_dir / "eval_report.txt", [&](std::ostream& o) { write_report_table(o, reports); });
  write_file(c.work_dir / "eval_report.jsonl", [&](std::ostream& o) { write_report_jsonl(o, reports); });
  for (const auto& r : reports)
    write_file(c.work_dir / ("ranks_" + r.variant + ".txt"), [&](std::ostream& o) { write_rank_dump(o, r); });

  const EvalReport* doc = nullptr;
  for (const auto& r : reports)
    if (r.variant == "doc_only") doc = &r;
  if (doc) {
    write_file(c.work_dir / "superior.txt", [&](std::ostream& o) {
      for (const auto& r : reports) {
        if (&r == doc) continue;
        const auto counts = compare_superior(r.rank_map(), doc->rank_map());
        o << r.variant << " vs doc_only: " << counts.a_better << " better, " << counts.b_better << " worse, "
          << counts.ties << " tied\n";
      }
    });
    std::ifstream in(c.work_dir / "superior.txt");
    std::cout << '\n' << in.rdbuf();
  }
  return kExitOk;
}

int cmd_sweep(const RunConfig& c, const std::string& axis_name, bool fixed) {
  const SweepAxis axis = parse_sweep_axis(axis_name);
  auto ws = load_workspace(c, true);
  std::optional<Checkpoint> fixed_ck;
  Vocabulary vocab;
  if (fixed) {
    fixed_ck = load_trained(c, vocab);
  } else {
    vocab = make_vocab(c, ws);
  }
  SweepSetup setup;
  setup.train = &ws.train;
  setup.test = &ws.test;
  setup.cache = &ws.cache;
  setup.vocab = &vocab;
  setup.encoder = c.encoder;
  setup.encoder.vocab_size = vocab.size();
  setup.train_config = c.train;
  setup.eval = c.eval;
  setup.fixed_checkpoint = fixed_ck ? &*fixed_ck : nullptr;
  const auto rows = sweep(setup, axis, &std::cerr);
  write_sweep_table(std::cout, axis, rows);
  write_file(c.work_dir / ("sweep_" + axis_name + ".txt"), [&](std::ostream& o) { write_sweep_table(o, axis, rows); });
  write_file(c.work_dir / ("sweep_" + axis_name + ".jsonl"), [&](std::ostream& o) {
    std::vector<EvalReport> reports;
    for (const auto& r : rows) reports.push_back(r.report);
    write_report_jsonl(o, reports);
  });
  return kExitOk;
}

int cmd_gradcheck(const RunConfig& c, std::size_t probes) {
  EncoderConfig enc;
  enc.num_layers = 2;
  enc.num_heads = 2;
  enc.model_dim = 16;
  enc.ffn_dim = 32;
  enc.max_seq_len = 24;
  enc.vocab_size = 40;
  enc.mask_type = c.encoder.mask_type;
  const auto t0 = std::chrono::steady_clock::now();
  const double err = grad_check(enc, c.seed, probes);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << "gradcheck K=2 d=16 heads=2 L=24 probes=" << probes << " max relative error " << std::scientific
            << std::setprecision(3) << err << " (" << std::fixed << std::setprecision(2) << secs << " s)\n";
  return err < 1e-4 ? kExitOk : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generation-augmented code retrieval"};
  app.require_subcommand(1);
  app.fallthrough();

  Overrides o;
  app.add_option("--config", o.config_path, "Run configuration file");
  app.add_option("--seed", o.seed, "Seed for every random stream");
  app.add_option("--mode", o.mode, "Query mode")->check(CLI::IsMember({"doc_only", "gacr_s", "gacr_m"}));
  app.add_option("--mask", o.mask, "Attention mask type")->check(CLI::IsMember({"A", "B", "C", "D"}));
  app.add_option("--cap", o.cap, "Per-snippet token cap");
  app.add_option("--k", o.k, "Generated snippets per prompt");
  app.add_option("--jobs", o.jobs, "Worker threads");
  app.add_option("--top-k", o.top_k, "Results listed by search");

  auto* synth = app.add_subcommand("synth", "Write a seeded synthetic corpus");
  std::string synth_out = "data";
  std::size_t synth_pairs = 600, synth_test = 100;
  synth->add_option("--out", synth_out, "Output directory");
  synth->add_option("--pairs", synth_pairs, "Total pairs");
  synth->add_option("--test", synth_test, "Held-out pairs");

  auto* ingest = app.add_subcommand("ingest", "Validate corpora and print statistics");
  auto* gen = app.add_subcommand("gen", "Populate the generated-snippet cache");
  auto* trn = app.add_subcommand("train", "Train the encoder");
  auto* idx = app.add_subcommand("index", "Encode the candidate pool");
  auto* srch = app.add_subcommand("search", "Rank candidates for one query");
  std::string query;
  srch->add_option("--query", query, "Documentation query text")->required();
  auto* evl = app.add_subcommand("eval", "Evaluate query variants");
  auto* swp = app.add_subcommand("sweep", "Ablation over snippet cap or mask type");
  std::string axis;
  bool fixed = false;
  swp->add_option("--axis", axis, "cap or mask")->required()->check(CLI::IsMember({"cap", "mask"}));
  swp->add_flag("--fixed", fixed, "Evaluate the trained checkpoint instead of retraining per row");
  auto* gck = app.add_subcommand("gradcheck", "Finite-difference gradient check");
  std::size_t probes = 200;
  gck->add_option("--probes", probes, "Parameter coordinates to probe");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    const RunConfig c = resolve_config(o);
    if (*synth) return cmd_synth(c, synth_out, synth_pairs, synth_test);
    if (*ingest) return cmd_ingest(c);
    if (*gen) return cmd_gen(c);
    if (*trn) return cmd_train(c);
    if (*idx) return cmd_index(c);
    if (*srch) return cmd_search(c, query);
    if (*evl) return cmd_eval(c);
    if (*swp) return cmd_sweep(c, axis, fixed);
    if (*gck) return cmd_gradcheck(c, probes);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}
