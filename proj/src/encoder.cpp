#include "gacr/encoder.hpp"

#include <cmath>
#include <cstring>

#include "gacr/error.hpp"
#include "gacr/generation.hpp"
#include "gacr/random.hpp"

namespace gacr {

char to_char(MaskType m) {
  switch (m) {
    case MaskType::kA: return 'A';
    case MaskType::kB: return 'B';
    case MaskType::kC: return 'C';
    case MaskType::kD: return 'D';
  }
  return '?';
}

MaskType parse_mask_type(std::string_view s) {
  if (s == "A" || s == "a") return MaskType::kA;
  if (s == "B" || s == "b") return MaskType::kB;
  if (s == "C" || s == "c") return MaskType::kC;
  if (s == "D" || s == "d") return MaskType::kD;
  throw ConfigError("unknown mask type '" + std::string(s) + "' (expected A, B, C or D)");
}

void EncoderConfig::validate() const {
  if (num_layers < 1 || num_heads < 1 || model_dim < 1 || ffn_dim < 1 || vocab_size < 1)
    throw ConfigError("encoder: all sizes must be >= 1");
  if (model_dim % num_heads != 0) throw ConfigError("encoder: model_dim must be divisible by num_heads");
  if (max_seq_len < 4) throw ConfigError("encoder: max_seq_len must be >= 4");
}

// ---------------------------------------------------------------------------
// Sequence assembly

namespace {

void push(FusedInput& in, TokenId id, Segment seg) {
  in.ids.push_back(id);
  in.segments.push_back(seg);
}

void pad_to(FusedInput& in, std::size_t max_len) {
  in.true_len = in.ids.size();
  in.ids.resize(max_len, Vocabulary::kPad);
  in.segments.resize(max_len, Segment::kPad);
}

void push_block(FusedInput& in, const IdList& body, std::size_t len, Segment seg) {
  in.cls_positions.push_back(in.ids.size());
  push(in, Vocabulary::kCls, seg);
  for (std::size_t i = 0; i < len; ++i) push(in, body[i], seg);
  push(in, Vocabulary::kSep, seg);
}

}  // namespace

FusedInput assemble_single(const IdList& doc_ids, const IdList& gen_ids, std::size_t max_len, MaskType mask) {
  if (max_len < 4) throw ConfigError("sequence length must be >= 4 to hold the special tokens");
  std::size_t m = doc_ids.size();
  std::size_t p = gen_ids.size();
  if (m + p + 4 > max_len) {
    std::size_t overflow = m + p + 4 - max_len;
    const std::size_t from_gen = std::min(p, overflow);
    p -= from_gen;
    overflow -= from_gen;
    m -= overflow;
  }
  FusedInput in;
  in.mask_type = mask;
  push_block(in, doc_ids, m, Segment::kDoc);
  push_block(in, gen_ids, p, Segment::kGen);
  pad_to(in, max_len);
  return in;
}

FusedInput assemble_multi(const IdList& doc_ids, const std::vector<IdList>& snippets, std::size_t cap,
                          std::size_t max_len, MaskType mask) {
  if (snippets.empty()) throw ContractError("assemble_multi needs at least one snippet");
  // The first snippet follows the single-snippet truncation rule so the two
  // query CLS positions always exist.
  FusedInput in = assemble_single(doc_ids, truncate_snippet(snippets.front(), cap), max_len, mask);
  in.ids.resize(in.true_len);
  in.segments.resize(in.true_len);
  for (std::size_t s = 1; s < snippets.size(); ++s) {
    const std::size_t len = std::min(snippets[s].size(), cap);
    if (in.ids.size() + len + 2 > max_len) break;
    push_block(in, snippets[s], len, Segment::kGen);
  }
  pad_to(in, max_len);
  return in;
}

FusedInput assemble_target(const IdList& code_ids, std::size_t max_len, Segment segment) {
  if (max_len < 2) throw ConfigError("sequence length must be >= 2");
  FusedInput in;
  push_block(in, code_ids, std::min(code_ids.size(), max_len - 2), segment);
  pad_to(in, max_len);
  return in;
}

AttentionMask build_mask(const FusedInput& input) {
  const auto n = static_cast<Eigen::Index>(input.ids.size());
  AttentionMask mask{MaskMatrix::Constant(n, n, false)};
  const auto t = static_cast<Eigen::Index>(input.true_len);
  for (Eigen::Index i = 0; i < t; ++i) {
    const bool row_gen = input.segments[static_cast<std::size_t>(i)] == Segment::kGen;
    for (Eigen::Index j = 0; j < t; ++j) {
      const bool col_gen = input.segments[static_cast<std::size_t>(j)] == Segment::kGen;
      bool ok = true;
      switch (input.mask_type) {
        case MaskType::kA: ok = true; break;
        case MaskType::kB: ok = row_gen || !col_gen; break;
        case MaskType::kC: ok = !row_gen || col_gen; break;
        case MaskType::kD: ok = row_gen == col_gen; break;
      }
      mask.allowed(i, j) = ok;
    }
  }
  return mask;
}

// ---------------------------------------------------------------------------
// Parameters

std::vector<Matrix*> EncoderParams::arrays() {
  std::vector<Matrix*> out{&token_embedding, &position_embedding};
  for (auto& p : layers) {
    for (Matrix* m : {&p.wq, &p.bq, &p.wk, &p.bk, &p.wv, &p.bv, &p.wo, &p.bo, &p.ln1_gain, &p.ln1_shift, &p.w1,
                      &p.b1, &p.w2, &p.b2, &p.ln2_gain, &p.ln2_shift})
      out.push_back(m);
  }
  return out;
}

std::vector<const Matrix*> EncoderParams::arrays() const {
  auto mut = const_cast<EncoderParams*>(this)->arrays();
  return {mut.begin(), mut.end()};
}

std::vector<std::string> EncoderParams::array_names() const {
  std::vector<std::string> out{"token_embedding", "position_embedding"};
  for (std::size_t l = 0; l < layers.size(); ++l) {
    for (const char* n : {"wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "ln1_gain", "ln1_shift", "w1", "b1", "w2",
                          "b2", "ln2_gain", "ln2_shift"})
      out.push_back("layer" + std::to_string(l) + "." + n);
  }
  return out;
}

std::size_t EncoderParams::num_values() const {
  std::size_t n = 0;
  for (const Matrix* m : arrays()) n += static_cast<std::size_t>(m->size());
  return n;
}

void EncoderParams::set_zero() {
  for (Matrix* m : arrays()) m->setZero();
}

bool EncoderParams::bitwise_equal(const EncoderParams& other) const {
  const auto a = arrays();
  const auto b = other.arrays();
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i]->rows() != b[i]->rows() || a[i]->cols() != b[i]->cols()) return false;
    if (std::memcmp(a[i]->data(), b[i]->data(), sizeof(double) * static_cast<std::size_t>(a[i]->size())) != 0)
      return false;
  }
  return true;
}

EncoderParams zeros_like(const EncoderConfig& c) {
  const auto d = static_cast<Eigen::Index>(c.model_dim);
  const auto f = static_cast<Eigen::Index>(c.ffn_dim);
  EncoderParams p;
  p.token_embedding = Matrix::Zero(static_cast<Eigen::Index>(c.vocab_size), d);
  p.position_embedding = Matrix::Zero(static_cast<Eigen::Index>(c.max_seq_len), d);
  p.layers.resize(c.num_layers);
  for (auto& l : p.layers) {
    l.wq = l.wk = l.wv = l.wo = Matrix::Zero(d, d);
    l.bq = l.bk = l.bv = l.bo = Matrix::Zero(1, d);
    l.ln1_gain = l.ln1_shift = l.ln2_gain = l.ln2_shift = Matrix::Zero(1, d);
    l.w1 = Matrix::Zero(d, f);
    l.b1 = Matrix::Zero(1, f);
    l.w2 = Matrix::Zero(f, d);
    l.b2 = Matrix::Zero(1, d);
  }
  return p;
}

EncoderParams init_params(const EncoderConfig& config) {
  config.validate();
  EncoderParams p = zeros_like(config);
  Rng rng(derive_seed(config.seed, "encoder-init"));
  const auto names = p.array_names();
  const auto arrays = p.arrays();
  for (std::size_t a = 0; a < arrays.size(); ++a) {
    Matrix& m = *arrays[a];
    if (names[a].ends_with("_gain")) {
      m.setOnes();
    } else if (m.rows() > 1) {
      const double limit = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-limit, limit);
    }
  }
  return p;
}

// ---------------------------------------------------------------------------
// Forward / backward

namespace {

constexpr double kLayerNormEps = 1e-5;

bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace

ForwardResult forward(const EncoderConfig& config, const EncoderParams& params, const FusedInput& input) {
  const auto d = static_cast<Eigen::Index>(config.model_dim);
  const auto heads = static_cast<Eigen::Index>(config.num_heads);
  const auto head_dim = d / heads;
  const auto t = static_cast<Eigen::Index>(input.true_len);
  if (input.ids.size() > config.max_seq_len || input.true_len > input.ids.size())
    throw ContractError("fused input longer than max_seq_len");

  ForwardResult res;
  ForwardTrace& trace = res.trace;
  trace.input = input;
  trace.mask = build_mask(input).allowed.topLeftCorner(t, t);

  Matrix x(t, d);
  for (Eigen::Index i = 0; i < t; ++i) {
    const TokenId id = input.ids[static_cast<std::size_t>(i)];
    if (id < 0 || static_cast<std::size_t>(id) >= config.vocab_size)
      throw ContractError("token id " + std::to_string(id) + " outside encoder vocabulary");
    x.row(i) = params.token_embedding.row(id) + params.position_embedding.row(i);
  }

  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  trace.layers.resize(params.layers.size());
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const LayerParams& p = params.layers[l];
    LayerTrace& lt = trace.layers[l];
    lt.input = x;
    lt.q = rowwise_product(x, p.wq).rowwise() + p.bq.row(0);
    lt.k = rowwise_product(x, p.wk).rowwise() + p.bk.row(0);
    lt.v = rowwise_product(x, p.wv).rowwise() + p.bv.row(0);
    lt.context.resize(t, d);
    lt.probs.resize(static_cast<std::size_t>(heads));
    for (Eigen::Index h = 0; h < heads; ++h) {
      const Matrix qh = lt.q.middleCols(h * head_dim, head_dim);
      const Matrix kh = lt.k.middleCols(h * head_dim, head_dim);
      Matrix logits(t, t);
      for (Eigen::Index i = 0; i < t; ++i)
        for (Eigen::Index j = 0; j < t; ++j) logits(i, j) = qh.row(i).dot(kh.row(j)) * scale;
      Matrix& probs = lt.probs[static_cast<std::size_t>(h)];
      probs = masked_softmax(logits, trace.mask);
      lt.context.middleCols(h * head_dim, head_dim) = rowwise_product<double>(probs, lt.v.middleCols(h * head_dim, head_dim));
    }
    const Matrix attn_res = x + (rowwise_product(lt.context, p.wo).rowwise() + p.bo.row(0)).eval();
    layer_norm_forward<double>(attn_res, p.ln1_gain, p.ln1_shift, kLayerNormEps, lt.out1, lt.norm1, lt.inv_std1);

    lt.ffn_pre = rowwise_product(lt.out1, p.w1).rowwise() + p.b1.row(0);
    lt.ffn_act = gelu(lt.ffn_pre);
    const Matrix ffn_res = lt.out1 + (rowwise_product(lt.ffn_act, p.w2).rowwise() + p.b2.row(0)).eval();
    layer_norm_forward<double>(ffn_res, p.ln2_gain, p.ln2_shift, kLayerNormEps, x, lt.norm2, lt.inv_std2);
    if (!all_finite(x)) throw NumericFault("non-finite activation in encoder layer " + std::to_string(l));
  }

  res.hidden = Matrix::Zero(static_cast<Eigen::Index>(input.ids.size()), d);
  res.hidden.topRows(t) = x;
  return res;
}

void backward(const EncoderConfig& config, const EncoderParams& params, const ForwardTrace& trace,
              const Matrix& grad_hidden, EncoderParams& grads) {
  const auto d = static_cast<Eigen::Index>(config.model_dim);
  const auto heads = static_cast<Eigen::Index>(config.num_heads);
  const auto head_dim = d / heads;
  const auto t = static_cast<Eigen::Index>(trace.input.true_len);
  if (grad_hidden.rows() != static_cast<Eigen::Index>(trace.input.ids.size()) || grad_hidden.cols() != d)
    throw ContractError("grad_hidden shape does not match the traced forward pass");
  if (grads.layers.size() != params.layers.size() || grads.token_embedding.rows() != params.token_embedding.rows())
    throw ContractError("gradient buffers do not match parameter shapes");
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

  Matrix dx = grad_hidden.topRows(t);
  for (std::size_t l = params.layers.size(); l-- > 0;) {
    const LayerParams& p = params.layers[l];
    const LayerTrace& lt = trace.layers[l];
    LayerParams& g = grads.layers[l];

    Matrix d_ffn_res;
    layer_norm_backward<double>(dx, lt.norm2, lt.inv_std2, p.ln2_gain, d_ffn_res, g.ln2_gain, g.ln2_shift);
    g.w2.noalias() += lt.ffn_act.transpose() * d_ffn_res;
    g.b2 += d_ffn_res.colwise().sum();
    const Matrix d_act = d_ffn_res * p.w2.transpose();
    const Matrix d_pre = d_act.cwiseProduct(lt.ffn_pre.unaryExpr([](double v) { return gelu_grad(v); }));
    g.w1.noalias() += lt.out1.transpose() * d_pre;
    g.b1 += d_pre.colwise().sum();
    Matrix d_out1 = d_ffn_res;
    d_out1.noalias() += d_pre * p.w1.transpose();

    Matrix d_attn_res;
    layer_norm_backward<double>(d_out1, lt.norm1, lt.inv_std1, p.ln1_gain, d_attn_res, g.ln1_gain, g.ln1_shift);
    g.wo.noalias() += lt.context.transpose() * d_attn_res;
    g.bo += d_attn_res.colwise().sum();
    const Matrix d_context = d_attn_res * p.wo.transpose();

    Matrix dq(t, d), dk(t, d), dv(t, d);
    for (Eigen::Index h = 0; h < heads; ++h) {
      const Matrix& probs = lt.probs[static_cast<std::size_t>(h)];
      const auto dctx_h = d_context.middleCols(h * head_dim, head_dim);
      const Matrix d_probs = dctx_h * lt.v.middleCols(h * head_dim, head_dim).transpose();
      dv.middleCols(h * head_dim, head_dim).noalias() = probs.transpose() * dctx_h;
      const Matrix d_logits = softmax_backward<double>(probs, d_probs) * scale;
      dq.middleCols(h * head_dim, head_dim).noalias() = d_logits * lt.k.middleCols(h * head_dim, head_dim);
      dk.middleCols(h * head_dim, head_dim).noalias() =
          d_logits.transpose() * lt.q.middleCols(h * head_dim, head_dim);
    }
    g.wq.noalias() += lt.input.transpose() * dq;
    g.wk.noalias() += lt.input.transpose() * dk;
    g.wv.noalias() += lt.input.transpose() * dv;
    g.bq += dq.colwise().sum();
    g.bk += dk.colwise().sum();
    g.bv += dv.colwise().sum();

    dx = d_attn_res;
    dx.noalias() += dq * p.wq.transpose();
    dx.noalias() += dk * p.wk.transpose();
    dx.noalias() += dv * p.wv.transpose();
  }

  for (Eigen::Index i = 0; i < t; ++i) {
    grads.token_embedding.row(trace.input.ids[static_cast<std::size_t>(i)]) += dx.row(i);
    grads.position_embedding.row(i) += dx.row(i);
  }
}

// ---------------------------------------------------------------------------

DualQueryVector extract_query(const Matrix& hidden, const std::vector<std::size_t>& cls_positions) {
  if (cls_positions.size() < 2) throw ContractError("query extraction needs two CLS positions");
  return {hidden.row(static_cast<Eigen::Index>(cls_positions[0])),
          hidden.row(static_cast<Eigen::Index>(cls_positions[1]))};
}

DualQueryVector extract_replicated_query(const Matrix& hidden) { return {hidden.row(0), hidden.row(0)}; }

TargetVector extract_target(const Matrix& hidden) { return {hidden.row(0)}; }

double score(const DualQueryVector& q, const TargetVector& t) { return q.v_doc.dot(t.v) + q.v_gen.dot(t.v); }

}  // namespace gacr
