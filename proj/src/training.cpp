#include "gacr/training.hpp"

#include <cmath>
#include <iomanip>
#include <limits>

#include "gacr/error.hpp"
#include "gacr/parallel.hpp"
#include "gacr/random.hpp"

namespace gacr {

std::string to_string(QueryMode m) {
  switch (m) {
    case QueryMode::kDocOnly: return "doc_only";
    case QueryMode::kGacrS: return "gacr_s";
    case QueryMode::kGacrM: return "gacr_m";
  }
  return "?";
}

QueryMode parse_query_mode(std::string_view s) {
  if (s == "doc_only") return QueryMode::kDocOnly;
  if (s == "gacr_s") return QueryMode::kGacrS;
  if (s == "gacr_m") return QueryMode::kGacrM;
  throw ConfigError("unknown mode '" + std::string(s) + "' (expected doc_only, gacr_s or gacr_m)");
}

std::string to_string(LossForm f) { return f == LossForm::kLogSoftmax ? "log_softmax" : "literal"; }

LossForm parse_loss_form(std::string_view s) {
  if (s == "log_softmax") return LossForm::kLogSoftmax;
  if (s == "literal") return LossForm::kLiteral;
  throw ConfigError("unknown loss form '" + std::string(s) + "' (expected log_softmax or literal)");
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("training: batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("training: epochs must be >= 1");
  if (!(learning_rate > 0)) throw ConfigError("training: learning_rate must be > 0");
  if (snippet_cap < 1) throw ConfigError("training: snippet_cap must be >= 1");
  if (k < 1) throw ConfigError("training: k must be >= 1");
}

OptimizerState make_optimizer_state(const EncoderConfig& config) {
  return {zeros_like(config), zeros_like(config), 0};
}

void adam_step(const TrainConfig& config, const EncoderParams& grads, EncoderParams& params, OptimizerState& state) {
  ++state.step;
  const double b1 = config.adam_beta1;
  const double b2 = config.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  auto p = params.arrays();
  auto g = grads.arrays();
  auto m = state.first_moment.arrays();
  auto v = state.second_moment.arrays();
  for (std::size_t a = 0; a < p.size(); ++a) {
    m[a]->array() = b1 * m[a]->array() + (1 - b1) * g[a]->array();
    v[a]->array() = b2 * v[a]->array() + (1 - b2) * g[a]->array().square();
    p[a]->array() -=
        config.learning_rate * (m[a]->array() / c1) / ((v[a]->array() / c2).sqrt() + config.adam_eps);
  }
}

// ---------------------------------------------------------------------------

FusedInput build_query(QueryMode mode, const IdList& doc_ids, const std::vector<IdList>& snippet_ids,
                       std::size_t cap, std::size_t max_len, MaskType mask) {
  switch (mode) {
    case QueryMode::kDocOnly: {
      FusedInput in = assemble_target(doc_ids, max_len, Segment::kDoc);
      in.mask_type = mask;
      return in;
    }
    case QueryMode::kGacrS:
      if (snippet_ids.empty()) throw ContractError("gacr_s query needs a generated snippet");
      return assemble_single(doc_ids, truncate_snippet(snippet_ids.front(), cap), max_len, mask);
    case QueryMode::kGacrM:
      return assemble_multi(doc_ids, snippet_ids, cap, max_len, mask);
  }
  throw ContractError("unknown query mode");
}

std::pair<std::size_t, std::size_t> query_rows(const FusedInput& input) {
  if (input.cls_positions.empty()) throw ContractError("query input has no CLS position");
  if (input.cls_positions.size() == 1) return {input.cls_positions[0], input.cls_positions[0]};
  return {input.cls_positions[0], input.cls_positions[1]};
}

DualQueryVector query_vector(const Matrix& hidden, const FusedInput& input) {
  if (input.cls_positions.size() >= 2) return extract_query(hidden, input.cls_positions);
  const auto [r, unused] = query_rows(input);
  return {hidden.row(static_cast<Eigen::Index>(r)), hidden.row(static_cast<Eigen::Index>(r))};
}

std::vector<IdList> snippet_ids(const DocCodePair& pair, const SnippetCache& cache, const Vocabulary& vocab,
                                std::size_t count, bool fill_with_stub, std::uint64_t stub_seed) {
  std::vector<IdList> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    if (const auto* s = cache.find(pair.id, i)) {
      out.push_back(encode_tokens(vocab, s->tokens));
    } else if (fill_with_stub) {
      out.push_back(encode_tokens(vocab, tokenize_raw(stub_generate(pair.doc_tokens, i, stub_seed))));
    } else {
      throw ConfigError("snippet cache has no sample " + std::to_string(i) + " for pair " + pair.id);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

Matrix batch_scores(const std::vector<DualQueryVector>& queries, const std::vector<TargetVector>& targets) {
  if (queries.size() != targets.size())
    throw ContractError("batch_scores: " + std::to_string(queries.size()) + " queries vs " +
                        std::to_string(targets.size()) + " targets");
  if (queries.empty()) return Matrix(0, 0);
  const auto n = static_cast<Eigen::Index>(queries.size());
  const auto d = queries.front().v_doc.cols();
  Matrix q(n, d), z(n, d);
  for (Eigen::Index b = 0; b < n; ++b) {
    q.row(b) = queries[static_cast<std::size_t>(b)].combined();
    z.row(b) = targets[static_cast<std::size_t>(b)].v;
  }
  return q * z.transpose();
}

LossResult batch_loss(const Matrix& scores, LossForm form) {
  if (scores.rows() != scores.cols()) throw ContractError("batch_loss needs a square score matrix");
  if (!scores.allFinite()) throw NumericFault("batch_loss: non-finite score");
  const auto n = scores.rows();
  LossResult res;
  res.grad_scores = Matrix::Zero(n, n);
  if (n == 0) return res;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (Eigen::Index b = 0; b < n; ++b) {
    const double row_max = scores.row(b).maxCoeff();
    const Eigen::RowVectorXd e = (scores.row(b).array() - row_max).exp();
    const double total = e.sum();
    const Eigen::RowVectorXd probs = e / total;
    if (form == LossForm::kLogSoftmax) {
      res.loss -= inv_n * ((scores(b, b) - row_max) - std::log(total));
      res.grad_scores.row(b) = probs * inv_n;
      res.grad_scores(b, b) -= inv_n;
    } else {
      const double p_bb = probs(b);
      res.loss -= inv_n * p_bb;
      // d(-p_bb)/ds_bj = -p_bb (delta_bj - p_bj)
      res.grad_scores.row(b) = probs * (p_bb * inv_n);
      res.grad_scores(b, b) -= p_bb * inv_n;
    }
  }
  return res;
}

double batch_gradients(const EncoderConfig& encoder, const EncoderParams& params,
                       const std::vector<const TrainingExample*>& batch, LossForm form, std::size_t jobs,
                       EncoderParams& grads) {
  const std::size_t n = batch.size();
  std::vector<ForwardResult> query_fw(n), target_fw(n);
  parallel_for(n, jobs, [&](std::size_t b) {
    query_fw[b] = forward(encoder, params, batch[b]->query);
    target_fw[b] = forward(encoder, params, batch[b]->target);
  });

  std::vector<DualQueryVector> queries;
  std::vector<TargetVector> targets;
  for (std::size_t b = 0; b < n; ++b) {
    queries.push_back(query_vector(query_fw[b].hidden, batch[b]->query));
    targets.push_back(extract_target(target_fw[b].hidden));
  }
  const Matrix scores = batch_scores(queries, targets);
  const LossResult loss = batch_loss(scores, form);

  const auto d = static_cast<Eigen::Index>(encoder.model_dim);
  Matrix q(static_cast<Eigen::Index>(n), d), z(static_cast<Eigen::Index>(n), d);
  for (std::size_t b = 0; b < n; ++b) {
    q.row(static_cast<Eigen::Index>(b)) = queries[b].combined();
    z.row(static_cast<Eigen::Index>(b)) = targets[b].v;
  }
  const Matrix grad_q = loss.grad_scores * z;
  const Matrix grad_z = loss.grad_scores.transpose() * q;

  // Per-example buffers reduced in batch order keep results independent of jobs.
  std::vector<EncoderParams> partial(n);
  parallel_for(n, jobs, [&](std::size_t b) {
    partial[b] = zeros_like(encoder);
    const auto bi = static_cast<Eigen::Index>(b);
    Matrix gh = Matrix::Zero(query_fw[b].hidden.rows(), d);
    const auto [r0, r1] = query_rows(batch[b]->query);
    gh.row(static_cast<Eigen::Index>(r0)) += grad_q.row(bi);
    gh.row(static_cast<Eigen::Index>(r1)) += grad_q.row(bi);
    backward(encoder, params, query_fw[b].trace, gh, partial[b]);

    Matrix gt = Matrix::Zero(target_fw[b].hidden.rows(), d);
    gt.row(0) = grad_z.row(bi);
    backward(encoder, params, target_fw[b].trace, gt, partial[b]);
  });
  auto dst = grads.arrays();
  for (std::size_t b = 0; b < n; ++b) {
    auto src = partial[b].arrays();
    for (std::size_t a = 0; a < dst.size(); ++a) *dst[a] += *src[a];
  }
  return loss.loss;
}

TrainResult train_examples(const std::vector<TrainingExample>& examples, const TrainConfig& config,
                           const EncoderConfig& encoder, std::ostream* log) {
  config.validate();
  encoder.validate();
  if (config.batch_size > examples.size())
    throw ConfigError("batch_size " + std::to_string(config.batch_size) + " exceeds the " +
                      std::to_string(examples.size()) + " training pairs");

  TrainResult res{init_params(encoder), make_optimizer_state(encoder), {}};
  EncoderParams grads = zeros_like(encoder);
  Rng shuffle_rng(derive_seed(config.seed, "train-shuffle"));
  std::vector<std::size_t> order(examples.size());
  const std::size_t num_batches = examples.size() / config.batch_size;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle_rng.shuffle(order);
    double total = 0;
    for (std::size_t bi = 0; bi < num_batches; ++bi) {
      std::vector<const TrainingExample*> batch;
      for (std::size_t j = 0; j < config.batch_size; ++j) batch.push_back(&examples[order[bi * config.batch_size + j]]);
      grads.set_zero();
      total += batch_gradients(encoder, res.params, batch, config.loss, config.jobs, grads);
      adam_step(config, grads, res.params, res.optimizer);
    }
    res.epoch_losses.push_back(total / static_cast<double>(num_batches));
    if (log) write_loss_line(*log, epoch + 1, res.epoch_losses.back());
  }
  return res;
}

std::vector<TrainingExample> make_examples(const CorpusSplit& corpus, const SnippetCache& cache,
                                           const Vocabulary& vocab, const TrainConfig& config,
                                           const EncoderConfig& encoder) {
  const std::size_t needed =
      config.mode == QueryMode::kDocOnly ? 0 : (config.mode == QueryMode::kGacrS ? 1 : config.k);
  std::vector<TrainingExample> out;
  out.reserve(corpus.pairs.size());
  for (const auto& pair : corpus.pairs) {
    const auto snippets = snippet_ids(pair, cache, vocab, needed, config.fill_with_stub, config.seed);
    out.push_back({build_query(config.mode, encode_tokens(vocab, pair.doc_tokens), snippets, config.snippet_cap,
                               encoder.max_seq_len, encoder.mask_type),
                   assemble_target(encode_tokens(vocab, pair.code_tokens), encoder.max_seq_len)});
  }
  return out;
}

TrainResult train(const CorpusSplit& corpus, const SnippetCache& cache, const Vocabulary& vocab,
                  const TrainConfig& config, const EncoderConfig& encoder, std::ostream* log) {
  if (encoder.vocab_size != vocab.size())
    throw ConfigError("encoder vocab_size " + std::to_string(encoder.vocab_size) + " does not match vocabulary size " +
                      std::to_string(vocab.size()));
  return train_examples(make_examples(corpus, cache, vocab, config, encoder), config, encoder, log);
}

void write_loss_line(std::ostream& out, std::size_t epoch, double loss) {
  const auto flags = out.flags();
  const auto precision = out.precision();
  out << "epoch " << epoch << " loss " << std::setprecision(12) << loss << '\n';
  out.flags(flags);
  out.precision(precision);
}

void write_loss_log(std::ostream& out, const std::vector<double>& epoch_losses) {
  for (std::size_t i = 0; i < epoch_losses.size(); ++i) write_loss_line(out, i + 1, epoch_losses[i]);
}

// ---------------------------------------------------------------------------

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / denom;
}

double grad_check(const EncoderConfig& config, std::uint64_t seed, std::size_t num_probes, double eps,
                  std::size_t batch_size) {
  if (num_probes == 0) return 0.0;
  EncoderConfig cfg = config;
  cfg.seed = seed;
  cfg.validate();
  Rng rng(derive_seed(seed, "grad-check"));

  // Start from the seeded init, then jitter every array so biases and
  // layer-norm parameters are exercised away from their trivial values.
  EncoderParams params = init_params(cfg);
  for (Matrix* m : params.arrays())
    for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] += rng.uniform(-0.1, 0.1);

  const auto vocab = static_cast<std::size_t>(cfg.vocab_size);
  if (vocab <= Vocabulary::kNumSpecial) throw ConfigError("grad_check needs vocab_size > 4");
  auto random_ids = [&](std::size_t max_len) {
    IdList ids(1 + rng.below(max_len));
    for (auto& id : ids) id = static_cast<TokenId>(Vocabulary::kNumSpecial + rng.below(vocab - Vocabulary::kNumSpecial));
    return ids;
  };
  const std::size_t seg = std::max<std::size_t>(1, (cfg.max_seq_len - 4) / 2);
  std::vector<TrainingExample> examples;
  std::vector<bool> used_token(vocab, false);
  for (std::size_t b = 0; b < batch_size; ++b) {
    TrainingExample ex{assemble_single(random_ids(seg), random_ids(seg), cfg.max_seq_len, cfg.mask_type),
                       assemble_target(random_ids(cfg.max_seq_len - 2), cfg.max_seq_len)};
    for (std::size_t i = 0; i < ex.query.true_len; ++i) used_token[static_cast<std::size_t>(ex.query.ids[i])] = true;
    for (std::size_t i = 0; i < ex.target.true_len; ++i) used_token[static_cast<std::size_t>(ex.target.ids[i])] = true;
    examples.push_back(std::move(ex));
  }
  std::vector<const TrainingExample*> batch;
  for (const auto& e : examples) batch.push_back(&e);

  EncoderParams grads = zeros_like(cfg);
  batch_gradients(cfg, params, batch, LossForm::kLogSoftmax, 1, grads);

  auto loss_at = [&]() {
    EncoderParams scratch = zeros_like(cfg);
    return batch_gradients(cfg, params, batch, LossForm::kLogSoftmax, 1, scratch);
  };

  std::vector<TokenId> used_ids;
  for (std::size_t i = 0; i < vocab; ++i)
    if (used_token[i]) used_ids.push_back(static_cast<TokenId>(i));

  auto p_arrays = params.arrays();
  auto g_arrays = grads.arrays();
  double worst = 0;
  for (std::size_t probe = 0; probe < num_probes; ++probe) {
    const std::size_t a = rng.below(p_arrays.size());
    Matrix& m = *p_arrays[a];
    Eigen::Index row = static_cast<Eigen::Index>(rng.below(static_cast<std::size_t>(m.rows())));
    if (a == 0) row = used_ids[rng.below(used_ids.size())];  // token rows that can carry gradient
    const Eigen::Index col = static_cast<Eigen::Index>(rng.below(static_cast<std::size_t>(m.cols())));

    const double saved = m(row, col);
    m(row, col) = saved + eps;
    const double up = loss_at();
    m(row, col) = saved - eps;
    const double down = loss_at();
    m(row, col) = saved;
    const double numeric = (up - down) / (2 * eps);
    worst = std::max(worst, relative_error((*g_arrays[a])(row, col), numeric));
  }
  return worst;
}

}  // namespace gacr
