#include "gacr/retrieval.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "gacr/error.hpp"
#include "gacr/parallel.hpp"
#include "gacr/random.hpp"

namespace gacr {

CandidateIndex CandidateIndex::subset(const std::vector<std::size_t>& rows) const {
  CandidateIndex out;
  out.fingerprint = fingerprint;
  out.vectors.resize(static_cast<Eigen::Index>(rows.size()), vectors.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.ids.push_back(ids[rows[i]]);
    out.languages.push_back(languages[rows[i]]);
    out.vectors.row(static_cast<Eigen::Index>(i)) = vectors.row(static_cast<Eigen::Index>(rows[i]));
  }
  return out;
}

Vector encode_target(const EncoderConfig& config, const EncoderParams& params, const IdList& code_ids) {
  const auto fw = forward(config, params, assemble_target(code_ids, config.max_seq_len));
  return extract_target(fw.hidden).v;
}

DualQueryVector encode_query(const EncoderConfig& config, const EncoderParams& params, const FusedInput& input) {
  return query_vector(forward(config, params, input).hidden, input);
}

CandidateIndex build_index(const std::vector<DocCodePair>& pairs, const Vocabulary& vocab,
                           const EncoderConfig& config, const EncoderParams& params, std::uint64_t fingerprint,
                           std::size_t jobs) {
  if (vocab.size() != config.vocab_size)
    throw ConfigError("checkpoint vocab_size " + std::to_string(config.vocab_size) +
                      " does not match corpus vocabulary size " + std::to_string(vocab.size()));
  CandidateIndex index;
  index.fingerprint = fingerprint;
  index.vectors.resize(static_cast<Eigen::Index>(pairs.size()), static_cast<Eigen::Index>(config.model_dim));
  for (const auto& p : pairs) {
    index.ids.push_back(p.id);
    index.languages.push_back(p.language);
  }
  parallel_for(pairs.size(), jobs, [&](std::size_t i) {
    index.vectors.row(static_cast<Eigen::Index>(i)) =
        encode_target(config, params, encode_tokens(vocab, pairs[i].code_tokens));
  });
  if (!index.vectors.allFinite()) throw NumericFault("non-finite candidate vector");
  return index;
}

namespace {
constexpr std::string_view kIndexMagic = "GACRIDX1\n";
}

void save_index(const CandidateIndex& index, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write index " + path.string());
  out << kIndexMagic << "fingerprint " << index.fingerprint << '\n'
      << "count " << index.size() << " dim " << index.vectors.cols() << '\n';
  for (std::size_t i = 0; i < index.size(); ++i)
    out << nlohmann::json::array({index.ids[i], index.languages[i]}).dump() << '\n';
  out << "vectors\n";
  for (Eigen::Index i = 0; i < index.vectors.size(); ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(index.vectors.data()[i]);
    char bytes[8];
    for (int b = 0; b < 8; ++b) bytes[b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
    out.write(bytes, 8);
  }
  if (!out) throw Error("failed writing index " + path.string());
}

CandidateIndex load_index(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("index not found: " + path.string());
  std::string magic(kIndexMagic.size(), '\0');
  if (!in.read(magic.data(), static_cast<std::streamsize>(magic.size())) || magic != kIndexMagic)
    throw LoadError("bad magic in index " + path.string());
  CandidateIndex index;
  std::string tag, tag2;
  std::size_t count = 0;
  Eigen::Index dim = 0;
  if (!(in >> tag >> index.fingerprint) || tag != "fingerprint") throw LoadError("index header malformed");
  if (!(in >> tag >> count >> tag2 >> dim) || tag != "count" || tag2 != "dim") throw LoadError("index header malformed");
  in.ignore(1);
  std::string line;
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(in, line)) throw LoadError("index truncated in id list");
    auto j = nlohmann::json::parse(line);
    index.ids.push_back(j.at(0).get<std::string>());
    index.languages.push_back(j.at(1).get<std::string>());
  }
  if (!std::getline(in, line) || line != "vectors") throw LoadError("index missing vectors section");
  index.vectors.resize(static_cast<Eigen::Index>(count), dim);
  for (Eigen::Index i = 0; i < index.vectors.size(); ++i) {
    unsigned char bytes[8];
    if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw LoadError("index truncated in vectors");
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[b]) << (8 * b);
    index.vectors.data()[i] = std::bit_cast<double>(bits);
  }
  return index;
}

// ---------------------------------------------------------------------------

RankedList search(const DualQueryVector& query, const CandidateIndex& index, std::size_t top_k,
                  const std::string& query_id) {
  RankedList out;
  out.query_id = query_id;
  if (top_k == 0 || index.size() == 0) return out;
  const Vector q = query.combined();
  if (q.cols() != index.vectors.cols())
    throw ContractError("query dimension " + std::to_string(q.cols()) + " does not match index dimension " +
                        std::to_string(index.vectors.cols()));
  std::vector<double> scores(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) scores[i] = index.vectors.row(static_cast<Eigen::Index>(i)).dot(q);

  std::vector<std::size_t> order(index.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  order.resize(std::min(top_k, order.size()));
  for (std::size_t i : order) out.entries.push_back({i, index.ids[i], scores[i]});
  return out;
}

std::size_t rank_of(const RankedList& ranked, const std::string& truth_id) {
  for (std::size_t r = 0; r < ranked.entries.size(); ++r)
    if (ranked.entries[r].id == truth_id) return r + 1;
  throw ContractError("ground truth " + truth_id + " missing from the ranking of query " + ranked.query_id);
}

double mrr(const std::vector<RankedList>& ranked, const std::map<std::string, std::string>& truth) {
  if (ranked.empty()) return 0.0;
  double total = 0;
  for (const auto& list : ranked) {
    auto it = truth.find(list.query_id);
    if (it == truth.end()) throw ContractError("no ground truth for query " + list.query_id);
    total += 1.0 / static_cast<double>(rank_of(list, it->second));
  }
  return total / static_cast<double>(ranked.size());
}

SuperiorCounts compare_superior(const std::map<std::string, std::size_t>& ranks_a,
                                const std::map<std::string, std::size_t>& ranks_b) {
  if (ranks_a.size() != ranks_b.size()) throw ContractError("compare_superior: query sets differ in size");
  SuperiorCounts c;
  for (const auto& [q, ra] : ranks_a) {
    auto it = ranks_b.find(q);
    if (it == ranks_b.end()) throw ContractError("compare_superior: query " + q + " missing from second system");
    if (ra < it->second) {
      ++c.a_better;
    } else if (it->second < ra) {
      ++c.b_better;
    } else {
      ++c.ties;
    }
  }
  return c;
}

// ---------------------------------------------------------------------------

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kDocOnly: return "doc_only";
    case Variant::kGenFull: return "gen_full";
    case Variant::kGenName: return "gen_name";
    case Variant::kGenBody: return "gen_body";
    case Variant::kGacrS: return "gacr_s";
    case Variant::kGacrM: return "gacr_m";
  }
  return "?";
}

const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> v{Variant::kDocOnly, Variant::kGenFull, Variant::kGenName,
                                      Variant::kGenBody, Variant::kGacrS,   Variant::kGacrM};
  return v;
}

Variant parse_variant(std::string_view s) {
  for (Variant v : all_variants())
    if (to_string(v) == s) return v;
  throw ConfigError("unknown variant '" + std::string(s) + "'");
}

std::map<std::string, std::size_t> EvalReport::rank_map() const {
  std::map<std::string, std::size_t> out;
  for (const auto& r : ranks) out[r.query_id] = r.rank;
  return out;
}

FusedInput build_variant_query(Variant variant, const DocCodePair& pair, const std::vector<GeneratedSnippet>& snippets,
                               const Vocabulary& vocab, const EncoderConfig& config, std::size_t cap) {
  const std::size_t max_len = config.max_seq_len;
  const MaskType mask = config.mask_type;
  auto single = [&](const TokenList& tokens) {
    FusedInput in = assemble_target(encode_tokens(vocab, tokens), max_len, Segment::kDoc);
    in.mask_type = mask;
    return in;
  };
  auto need = [&](std::size_t n) {
    if (snippets.size() < n) throw ContractError("variant " + to_string(variant) + " needs generated snippets");
  };
  switch (variant) {
    case Variant::kDocOnly:
      return single(pair.doc_tokens);
    case Variant::kGenFull:
      need(1);
      return single(snippets.front().tokens);
    case Variant::kGenName:
      need(1);
      return single(split_name_body(snippets.front()).name);
    case Variant::kGenBody:
      need(1);
      return single(split_name_body(snippets.front()).body);
    case Variant::kGacrS:
      need(1);
      return assemble_single(encode_tokens(vocab, pair.doc_tokens),
                             truncate_snippet(encode_tokens(vocab, snippets.front().tokens), cap), max_len, mask);
    case Variant::kGacrM: {
      need(1);
      std::vector<IdList> ids;
      for (const auto& s : snippets) ids.push_back(encode_tokens(vocab, s.tokens));
      return assemble_multi(encode_tokens(vocab, pair.doc_tokens), ids, cap, max_len, mask);
    }
  }
  throw ContractError("unknown variant");
}

namespace {

std::vector<GeneratedSnippet> snippets_for(const DocCodePair& pair, const SnippetCache& cache, std::size_t count,
                                           bool fill_with_stub, std::uint64_t seed) {
  std::vector<GeneratedSnippet> out;
  for (std::size_t i = 0; i < count; ++i) {
    if (const auto* s = cache.find(pair.id, i)) {
      out.push_back(*s);
    } else if (fill_with_stub) {
      out.push_back(make_snippet(pair.id, i, stub_generate(pair.doc_tokens, i, seed)));
    } else {
      throw ConfigError("snippet cache has no sample " + std::to_string(i) + " for pair " + pair.id);
    }
  }
  return out;
}

}  // namespace

std::vector<EvalReport> eval_variants(const CorpusSplit& corpus, const SnippetCache& cache, const Vocabulary& vocab,
                                      const Checkpoint& checkpoint, const CandidateIndex& index,
                                      const std::vector<Variant>& variants, const EvalOptions& options) {
  const EncoderConfig& config = checkpoint.encoder;
  if (vocab.size() != config.vocab_size) throw ConfigError("checkpoint and vocabulary sizes differ");

  // Candidate pools: all index rows sharing the query's language.
  std::map<std::string, std::vector<std::size_t>> rows_by_language;
  std::map<std::string, std::size_t> row_of_id;
  for (std::size_t i = 0; i < index.size(); ++i) {
    rows_by_language[index.languages[i]].push_back(i);
    row_of_id[index.ids[i]] = i;
  }
  std::map<std::string, CandidateIndex> pools;
  for (const auto& [lang, rows] : rows_by_language) pools.emplace(lang, index.subset(rows));

  const auto& pairs = corpus.pairs;
  std::vector<std::vector<GeneratedSnippet>> snippets(pairs.size());
  const bool needs_snippets =
      std::any_of(variants.begin(), variants.end(), [](Variant v) { return v != Variant::kDocOnly; });
  const bool needs_k = std::find(variants.begin(), variants.end(), Variant::kGacrM) != variants.end();
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (!row_of_id.count(pairs[i].id)) throw ContractError("query " + pairs[i].id + " has no candidate in the index");
    if (needs_snippets)
      snippets[i] = snippets_for(pairs[i], cache, needs_k ? options.k : 1, options.fill_with_stub, checkpoint.train.seed);
  }

  // Optional sampled pools: truth plus pool_size - 1 distractors of the same language.
  std::vector<std::vector<std::size_t>> sampled(pairs.size());
  if (options.pool_size > 0) {
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const auto& rows = rows_by_language[pairs[i].language];
      if (options.pool_size >= rows.size()) continue;
      const std::size_t truth_row = row_of_id[pairs[i].id];
      std::vector<std::size_t> others;
      for (std::size_t r : rows)
        if (r != truth_row) others.push_back(r);
      Rng rng(derive_seed(options.seed, "pool:" + pairs[i].id));
      rng.shuffle(others);
      others.resize(options.pool_size - 1);
      others.push_back(truth_row);
      std::sort(others.begin(), others.end());
      sampled[i] = std::move(others);
    }
  }

  std::vector<EvalReport> reports;
  for (Variant variant : variants) {
    EvalReport rep;
    rep.variant = to_string(variant);
    rep.mode = to_string(checkpoint.train.mode);
    rep.mask = config.mask_type;
    rep.cap = options.cap;
    rep.k = options.k;
    rep.ranks.resize(pairs.size());
    parallel_for(pairs.size(), options.jobs, [&](std::size_t i) {
      const auto input = build_variant_query(variant, pairs[i], snippets[i], vocab, config, options.cap);
      const auto q = encode_query(config, checkpoint.params, input);
      const CandidateIndex pool = sampled[i].empty() ? CandidateIndex{} : index.subset(sampled[i]);
      const CandidateIndex& candidates = sampled[i].empty() ? pools.at(pairs[i].language) : pool;
      const auto ranked = search(q, candidates, candidates.size(), pairs[i].id);
      const std::size_t rank = rank_of(ranked, pairs[i].id);
      rep.ranks[i] = {pairs[i].id, rank, ranked.entries[rank - 1].score};
    });
    std::map<std::string, std::pair<double, std::size_t>> acc;
    double total = 0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const double rr = 1.0 / static_cast<double>(rep.ranks[i].rank);
      auto& [sum, n] = acc[pairs[i].language];
      sum += rr;
      ++n;
      total += rr;
    }
    for (const auto& [lang, sn] : acc) rep.mrr_by_language[lang] = sn.first / static_cast<double>(sn.second);
    rep.overall_mrr = pairs.empty() ? 0.0 : total / static_cast<double>(pairs.size());
    reports.push_back(std::move(rep));
  }
  return reports;
}

void write_report_table(std::ostream& out, const std::vector<EvalReport>& reports, const std::string& label_header) {
  const auto flags = out.flags();
  out << std::left << std::setw(10) << label_header << std::setw(12) << "language" << std::setw(10) << "mode"
      << std::setw(6) << "mask" << std::setw(6) << "cap" << std::setw(4) << "k" << std::right << std::setw(10)
      << "MRR" << '\n';
  for (const auto& r : reports) {
    auto row = [&](const std::string& lang, double value) {
      out << std::left << std::setw(10) << r.variant << std::setw(12) << lang << std::setw(10) << r.mode
          << std::setw(6) << to_char(r.mask) << std::setw(6) << r.cap << std::setw(4) << r.k << std::right
          << std::setw(10) << std::fixed << std::setprecision(4) << value << '\n';
    };
    for (const auto& [lang, v] : r.mrr_by_language) row(lang, v);
    if (r.mrr_by_language.size() > 1) row("all", r.overall_mrr);
  }
  out.flags(flags);
}

void write_report_jsonl(std::ostream& out, const std::vector<EvalReport>& reports) {
  for (const auto& r : reports) {
    auto emit = [&](const std::string& lang, double v) {
      nlohmann::ordered_json j;
      j["variant"] = r.variant;
      j["language"] = lang;
      j["mrr"] = v;
      j["mask"] = std::string(1, to_char(r.mask));
      j["cap"] = r.cap;
      j["k"] = r.k;
      out << j.dump() << '\n';
    };
    for (const auto& [lang, v] : r.mrr_by_language) emit(lang, v);
    if (r.mrr_by_language.size() > 1) emit("all", r.overall_mrr);
  }
}

void write_rank_dump(std::ostream& out, const EvalReport& report) {
  const auto flags = out.flags();
  const auto precision = out.precision();
  out << std::setprecision(17);
  for (const auto& r : report.ranks) out << r.query_id << ' ' << r.rank << ' ' << r.score << '\n';
  out.flags(flags);
  out.precision(precision);
}

// ---------------------------------------------------------------------------

SweepAxis parse_sweep_axis(std::string_view s) {
  if (s == "cap") return SweepAxis::kCap;
  if (s == "mask") return SweepAxis::kMask;
  throw ConfigError("unknown sweep axis '" + std::string(s) + "' (expected cap or mask)");
}

std::vector<SweepRow> sweep(const SweepSetup& setup, SweepAxis axis, std::ostream* log) {
  if (!setup.train || !setup.test || !setup.cache || !setup.vocab) throw ContractError("sweep setup incomplete");
  struct Point {
    std::string label;
    EncoderConfig encoder;
    TrainConfig train;
    EvalOptions eval;
    Variant variant;
  };
  std::vector<Point> points;
  if (axis == SweepAxis::kCap) {
    for (std::size_t cap : {32, 64, 128}) {
      Point p{std::to_string(cap), setup.encoder, setup.train_config, setup.eval, Variant::kGacrM};
      p.train.mode = QueryMode::kGacrM;
      p.train.snippet_cap = cap;
      p.eval.cap = cap;
      p.eval.k = p.train.k;
      points.push_back(std::move(p));
    }
  } else {
    QueryMode mode = setup.train_config.mode == QueryMode::kDocOnly ? QueryMode::kGacrS : setup.train_config.mode;
    for (MaskType m : {MaskType::kA, MaskType::kB, MaskType::kC, MaskType::kD}) {
      Point p{std::string(1, to_char(m)), setup.encoder, setup.train_config, setup.eval,
              mode == QueryMode::kGacrM ? Variant::kGacrM : Variant::kGacrS};
      p.encoder.mask_type = m;
      p.train.mode = mode;
      p.eval.k = p.train.k;
      p.eval.cap = p.train.snippet_cap;
      points.push_back(std::move(p));
    }
  }

  std::vector<SweepRow> rows;
  for (const auto& p : points) {
    Checkpoint ck;
    if (setup.fixed_checkpoint) {
      ck = *setup.fixed_checkpoint;
      ck.encoder.mask_type = p.encoder.mask_type;
    } else {
      auto trained = train(*setup.train, *setup.cache, *setup.vocab, p.train, p.encoder);
      ck = Checkpoint{p.encoder, p.train, std::move(trained.params), std::move(trained.optimizer)};
    }
    const auto index = build_index(setup.test->pairs, *setup.vocab, ck.encoder, ck.params, 0, p.eval.jobs);
    auto reports = eval_variants(*setup.test, *setup.cache, *setup.vocab, ck, index, {p.variant}, p.eval);
    rows.push_back({p.label, std::move(reports.front())});
    if (log) *log << "sweep " << p.label << " mrr " << std::setprecision(6) << rows.back().report.overall_mrr << '\n';
  }
  return rows;
}

void write_sweep_table(std::ostream& out, SweepAxis axis, const std::vector<SweepRow>& rows) {
  const auto flags = out.flags();
  out << std::left << std::setw(8) << (axis == SweepAxis::kCap ? "cap" : "mask") << std::setw(10) << "variant"
      << std::setw(12) << "language" << std::right << std::setw(10) << "MRR" << '\n';
  for (const auto& r : rows) {
    for (const auto& [lang, v] : r.report.mrr_by_language)
      out << std::left << std::setw(8) << r.label << std::setw(10) << r.report.variant << std::setw(12) << lang
          << std::right << std::setw(10) << std::fixed << std::setprecision(4) << v << '\n';
  }
  out.flags(flags);
}

}  // namespace gacr
