#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "gacr/corpus.hpp"
#include "gacr/tensor_ops.hpp"

namespace gacr {

/// Segment-fusion attention patterns.
///   A: full cross-attention between documentation and generated code.
///   B: documentation rows see documentation only; generated rows see all.
///   C: documentation rows see all; generated rows see generated only.
///   D: block diagonal, no cross-segment attention.
enum class MaskType { kA, kB, kC, kD };

char to_char(MaskType m);
MaskType parse_mask_type(std::string_view s);

enum class Segment : std::uint8_t { kDoc, kGen, kTgt, kPad };

struct EncoderConfig {
  std::size_t num_layers = 2;
  std::size_t num_heads = 4;
  std::size_t model_dim = 64;
  std::size_t ffn_dim = 128;
  std::size_t max_seq_len = 256;
  std::size_t vocab_size = 0;
  MaskType mask_type = MaskType::kA;
  std::uint64_t seed = 17;

  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

struct FusedInput {
  IdList ids;
  std::vector<Segment> segments;
  std::vector<std::size_t> cls_positions;
  std::size_t true_len = 0;
  MaskType mask_type = MaskType::kA;
};

struct AttentionMask {
  MaskMatrix allowed;  // (i, j) true iff position i may attend to position j
};

FusedInput assemble_single(const IdList& doc_ids, const IdList& gen_ids, std::size_t max_len,
                           MaskType mask = MaskType::kA);
FusedInput assemble_multi(const IdList& doc_ids, const std::vector<IdList>& snippets, std::size_t cap,
                          std::size_t max_len, MaskType mask = MaskType::kA);
/// [CLS] tokens [SEP] as one segment. Used for candidate code and for
/// single-segment queries (documentation-only, generated name/body).
FusedInput assemble_target(const IdList& code_ids, std::size_t max_len, Segment segment = Segment::kTgt);

AttentionMask build_mask(const FusedInput& input);

// Bias and layer-norm vectors are stored as 1 x n matrices so every array
// can be visited uniformly.
struct LayerParams {
  Matrix wq, wk, wv, wo;  // d x d
  Matrix bq, bk, bv, bo;
  Matrix ln1_gain, ln1_shift;
  Matrix w1;  // d x ffn
  Matrix b1;
  Matrix w2;  // ffn x d
  Matrix b2;
  Matrix ln2_gain, ln2_shift;
};

/// All trainable arrays. Gradients and optimizer moments reuse this type.
struct EncoderParams {
  Matrix token_embedding;     // vocab x d
  Matrix position_embedding;  // L x d
  std::vector<LayerParams> layers;

  /// Every array in declaration order.
  std::vector<Matrix*> arrays();
  std::vector<const Matrix*> arrays() const;
  /// Stable names matching arrays().
  std::vector<std::string> array_names() const;

  std::size_t num_values() const;
  void set_zero();
  bool bitwise_equal(const EncoderParams& other) const;
};

/// Zero-filled arrays with the shapes implied by config.
EncoderParams zeros_like(const EncoderConfig& config);

/// Xavier-uniform weights, zero biases, unit layer-norm gains; seeded.
EncoderParams init_params(const EncoderConfig& config);

struct LayerTrace {
  Matrix input;
  Matrix q, k, v;
  std::vector<Matrix> probs;  // per head, T x T
  Matrix context;             // concatenated head outputs, T x d
  Matrix norm1, ffn_pre, ffn_act, norm2, out1;
  Eigen::VectorXd inv_std1, inv_std2;
};

struct ForwardTrace {
  FusedInput input;
  MaskMatrix mask;  // true_len x true_len
  std::vector<LayerTrace> layers;
};

struct ForwardResult {
  Matrix hidden;  // L x d; rows at or past true_len are zero
  ForwardTrace trace;
};

/// Runs the encoder. Only the first true_len rows are computed: padding
/// positions are invisible to every real position, so they cannot influence
/// any output row that is read.
ForwardResult forward(const EncoderConfig& config, const EncoderParams& params, const FusedInput& input);

/// Accumulates parameter gradients into grads for a scalar loss whose
/// gradient with respect to the hidden states is grad_hidden.
void backward(const EncoderConfig& config, const EncoderParams& params, const ForwardTrace& trace,
              const Matrix& grad_hidden, EncoderParams& grads);

struct DualQueryVector {
  Vector v_doc;
  Vector v_gen;
  Vector combined() const { return v_doc + v_gen; }
};

struct TargetVector {
  Vector v;
};

DualQueryVector extract_query(const Matrix& hidden, const std::vector<std::size_t>& cls_positions);
/// Single-segment query: the one CLS vector fills both halves.
DualQueryVector extract_replicated_query(const Matrix& hidden);
TargetVector extract_target(const Matrix& hidden);

/// [v_doc, v_gen] . [v, v]
double score(const DualQueryVector& q, const TargetVector& t);

}  // namespace gacr
