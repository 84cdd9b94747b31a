#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "gacr/checkpoint.hpp"
#include "gacr/corpus.hpp"
#include "gacr/encoder.hpp"
#include "gacr/generation.hpp"
#include "gacr/training.hpp"

namespace gacr {

struct CandidateIndex {
  std::vector<std::string> ids;
  std::vector<std::string> languages;
  Matrix vectors;  // one target vector per row, in id order
  std::uint64_t fingerprint = 0;

  std::size_t size() const { return ids.size(); }
  /// Copy restricted to `rows`, in that order.
  CandidateIndex subset(const std::vector<std::size_t>& rows) const;
};

Vector encode_target(const EncoderConfig& config, const EncoderParams& params, const IdList& code_ids);
DualQueryVector encode_query(const EncoderConfig& config, const EncoderParams& params, const FusedInput& input);

CandidateIndex build_index(const std::vector<DocCodePair>& pairs, const Vocabulary& vocab,
                           const EncoderConfig& config, const EncoderParams& params, std::uint64_t fingerprint,
                           std::size_t jobs = 1);

void save_index(const CandidateIndex& index, const std::filesystem::path& path);
CandidateIndex load_index(const std::filesystem::path& path);

struct RankedEntry {
  std::size_t pool_index = 0;
  std::string id;
  double score = 0;
};

struct RankedList {
  std::string query_id;
  std::vector<RankedEntry> entries;  // scores non-increasing, ties by pool index
};

/// Scores every candidate by (v_doc + v_gen) . z and returns the top_k.
RankedList search(const DualQueryVector& query, const CandidateIndex& index, std::size_t top_k,
                  const std::string& query_id = {});

/// 1-based rank of `truth_id` in a full ranking.
std::size_t rank_of(const RankedList& ranked, const std::string& truth_id);

double mrr(const std::vector<RankedList>& ranked, const std::map<std::string, std::string>& truth);

struct SuperiorCounts {
  std::size_t a_better = 0;
  std::size_t b_better = 0;
  std::size_t ties = 0;
  bool operator==(const SuperiorCounts&) const = default;
};

/// Per query, the system whose ground truth ranks higher (smaller rank) wins.
SuperiorCounts compare_superior(const std::map<std::string, std::size_t>& ranks_a,
                                const std::map<std::string, std::size_t>& ranks_b);

enum class Variant { kDocOnly, kGenFull, kGenName, kGenBody, kGacrS, kGacrM };

std::string to_string(Variant v);
Variant parse_variant(std::string_view s);
const std::vector<Variant>& all_variants();

struct QueryRank {
  std::string query_id;
  std::size_t rank = 0;
  double score = 0;  // score of the ground-truth candidate
  bool operator==(const QueryRank&) const = default;
};

struct EvalReport {
  std::string variant;
  std::string mode;  // training mode of the checkpoint
  MaskType mask = MaskType::kA;
  std::size_t cap = 0;
  std::size_t k = 0;
  std::map<std::string, double> mrr_by_language;
  double overall_mrr = 0;
  std::vector<QueryRank> ranks;

  std::map<std::string, std::size_t> rank_map() const;
  bool operator==(const EvalReport&) const = default;
};

struct EvalOptions {
  std::size_t cap = 64;
  std::size_t k = 3;
  // 0 = full per-language pool; otherwise truth plus pool_size-1 seeded distractors.
  std::size_t pool_size = 0;
  std::uint64_t seed = 17;
  bool fill_with_stub = true;
  std::size_t jobs = 1;
};

/// Builds the query sequence for a variant from a pair and its snippets.
FusedInput build_variant_query(Variant variant, const DocCodePair& pair, const std::vector<GeneratedSnippet>& snippets,
                               const Vocabulary& vocab, const EncoderConfig& config, std::size_t cap);

std::vector<EvalReport> eval_variants(const CorpusSplit& corpus, const SnippetCache& cache, const Vocabulary& vocab,
                                      const Checkpoint& checkpoint, const CandidateIndex& index,
                                      const std::vector<Variant>& variants, const EvalOptions& options);

/// Aligned human-readable table, one row per (report, language) plus "all".
void write_report_table(std::ostream& out, const std::vector<EvalReport>& reports, const std::string& label_header = "variant");
/// {"variant":..., "language":..., "mrr":..., "mask":..., "cap":..., "k":...} per line.
void write_report_jsonl(std::ostream& out, const std::vector<EvalReport>& reports);
/// "query_id rank score" per line.
void write_rank_dump(std::ostream& out, const EvalReport& report);

enum class SweepAxis { kCap, kMask };
SweepAxis parse_sweep_axis(std::string_view s);

struct SweepSetup {
  const CorpusSplit* train = nullptr;
  const CorpusSplit* test = nullptr;
  const SnippetCache* cache = nullptr;
  const Vocabulary* vocab = nullptr;
  EncoderConfig encoder;
  TrainConfig train_config;
  EvalOptions eval;
  // Evaluate this checkpoint at every axis value instead of retraining.
  const Checkpoint* fixed_checkpoint = nullptr;
};

struct SweepRow {
  std::string label;  // "32", "64", ... or "A".."D"
  EvalReport report;
  bool operator==(const SweepRow&) const = default;
};

/// Cap rows {32, 64, 128} run in gacr_m mode; mask rows {A, B, C, D} use the
/// configured mode (gacr_s when that is doc_only). Everything else is held fixed.
std::vector<SweepRow> sweep(const SweepSetup& setup, SweepAxis axis, std::ostream* log = nullptr);

void write_sweep_table(std::ostream& out, SweepAxis axis, const std::vector<SweepRow>& rows);

}  // namespace gacr
