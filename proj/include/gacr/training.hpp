#pragma once

#include <cstddef>
#include <cstdint>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "gacr/corpus.hpp"
#include "gacr/encoder.hpp"
#include "gacr/generation.hpp"

namespace gacr {

enum class QueryMode { kDocOnly, kGacrS, kGacrM };

std::string to_string(QueryMode m);
QueryMode parse_query_mode(std::string_view s);

enum class LossForm {
  kLogSoftmax,  // -(1/B) sum_b log softmax(s_b)_b
  kLiteral,     // -(1/B) sum_b softmax(s_b)_b, the printed form without the log
};

std::string to_string(LossForm f);
LossForm parse_loss_form(std::string_view s);

struct TrainConfig {
  std::size_t batch_size = 16;
  std::size_t epochs = 10;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  QueryMode mode = QueryMode::kGacrS;
  std::size_t snippet_cap = 64;
  std::size_t k = 3;
  std::uint64_t seed = 17;
  LossForm loss = LossForm::kLogSoftmax;
  // Generate missing snippets with the stub backend instead of failing.
  bool fill_with_stub = true;
  std::size_t jobs = 1;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct OptimizerState {
  EncoderParams first_moment;
  EncoderParams second_moment;
  std::uint64_t step = 0;
};

OptimizerState make_optimizer_state(const EncoderConfig& config);

void adam_step(const TrainConfig& config, const EncoderParams& grads, EncoderParams& params, OptimizerState& state);

// ---------------------------------------------------------------------------
// Query construction shared by training and retrieval

/// Builds the query sequence for a mode. doc_only ignores snippets and
/// produces a single-segment [CLS] doc [SEP] sequence.
FusedInput build_query(QueryMode mode, const IdList& doc_ids, const std::vector<IdList>& snippet_ids,
                       std::size_t cap, std::size_t max_len, MaskType mask);

/// The two hidden rows that form the query vector. Single-segment inputs
/// use their only CLS row twice.
std::pair<std::size_t, std::size_t> query_rows(const FusedInput& input);

DualQueryVector query_vector(const Matrix& hidden, const FusedInput& input);

/// Token ids of the first `count` cached snippets of a pair. Missing entries
/// are generated with the stub when allowed, otherwise a ConfigError names the pair.
std::vector<IdList> snippet_ids(const DocCodePair& pair, const SnippetCache& cache, const Vocabulary& vocab,
                                std::size_t count, bool fill_with_stub, std::uint64_t stub_seed);

// ---------------------------------------------------------------------------
// Loss

/// scores(b, j) = (y1_b + y_gen_b) . z_j
Matrix batch_scores(const std::vector<DualQueryVector>& queries, const std::vector<TargetVector>& targets);

struct LossResult {
  double loss = 0;
  Matrix grad_scores;
};

LossResult batch_loss(const Matrix& scores, LossForm form = LossForm::kLogSoftmax);

// ---------------------------------------------------------------------------
// Training

struct TrainingExample {
  FusedInput query;
  FusedInput target;
};

/// Loss and accumulated parameter gradients for one batch of examples.
double batch_gradients(const EncoderConfig& encoder, const EncoderParams& params,
                       const std::vector<const TrainingExample*>& batch, LossForm form, std::size_t jobs,
                       EncoderParams& grads);

struct TrainResult {
  EncoderParams params;
  OptimizerState optimizer;
  std::vector<double> epoch_losses;
};

TrainResult train_examples(const std::vector<TrainingExample>& examples, const TrainConfig& config,
                           const EncoderConfig& encoder, std::ostream* log = nullptr);

std::vector<TrainingExample> make_examples(const CorpusSplit& corpus, const SnippetCache& cache,
                                           const Vocabulary& vocab, const TrainConfig& config,
                                           const EncoderConfig& encoder);

TrainResult train(const CorpusSplit& corpus, const SnippetCache& cache, const Vocabulary& vocab,
                  const TrainConfig& config, const EncoderConfig& encoder, std::ostream* log = nullptr);

/// "epoch <n> loss <value>" lines, 12 significant digits.
void write_loss_line(std::ostream& out, std::size_t epoch, double loss);
void write_loss_log(std::ostream& out, const std::vector<double>& epoch_losses);

// ---------------------------------------------------------------------------
// Gradient verification

/// Random parameters and a random gacr_s batch; compares the analytic gradient
/// of the full in-batch loss with central differences at `num_probes` random
/// coordinates. Returns the worst relative error.
double grad_check(const EncoderConfig& config, std::uint64_t seed, std::size_t num_probes, double eps = 1e-4,
                  std::size_t batch_size = 3);

/// |a - n| / max(|a|, |n|, 1e-6)
double relative_error(double analytic, double numeric);

}  // namespace gacr
