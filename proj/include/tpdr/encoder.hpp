#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace tpdr {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

/// Shape of one encoder tower.
struct EncoderConfig {
  std::size_t n_layers = 2;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t d_ff = 128;
  std::size_t vocab_size = 2048;
  std::size_t max_len = 64;
  // Both towers read one token embedding table.
  bool shared_embedding = false;

  /// Throws ValidationError when a dimension is zero or d_model is not a
  /// multiple of n_heads.
  void validate() const;
  std::size_t head_dim() const { return d_model / n_heads; }

  bool operator==(const EncoderConfig&) const = default;
};

/// Post-norm transformer block weights. Projections act on row vectors:
/// Q = X * wq.
struct LayerParams {
  Matrix wq, wk, wv, wo;  // d_model x d_model
  Matrix w1;              // d_model x d_ff
  RowVector b1;           // d_ff
  Matrix w2;              // d_ff x d_model
  RowVector b2;           // d_model
  RowVector ln1_gain, ln1_bias;
  RowVector ln2_gain, ln2_bias;
};

struct EncoderParams {
  Matrix token_embedding;  // vocab_size x d_model
  std::vector<LayerParams> layers;

  /// All tensors zero, shaped for `config`.
  static EncoderParams zeros(const EncoderConfig& config);
};

struct TensorView {
  std::string name;
  std::span<double> data;
};
struct ConstTensorView {
  std::string name;
  std::span<const double> data;
};

/// Every tensor in a fixed canonical order (embedding, then per layer).
std::vector<TensorView> tensors(EncoderParams& params);
std::vector<ConstTensorView> tensors(const EncoderParams& params);

/// Seeded uniform(-0.05, 0.05) weights, zero biases, unit layer-norm gains.
EncoderParams init_params(const EncoderConfig& config, std::uint64_t seed);

/// True when every entry of every tensor is finite.
bool all_finite(const EncoderParams& params);

/// Sinusoidal table: even columns sin(pos / 10000^(2i/d)), odd columns cos.
Matrix positional_encoding(std::size_t max_len, std::size_t d_model);

/// true marks a padded position.
using PadMask = std::vector<bool>;

/// softmax(Q K^T / sqrt(d_k)) V with padded keys excluded. Rows whose keys
/// are all padded come out as zeros. `weights`, when given, receives the
/// attention matrix.
Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v,
                 const PadMask& mask, Matrix* weights = nullptr);

/// Single-head attention over full-width projections.
Matrix self_attention(const Matrix& x, const Matrix& wq, const Matrix& wk,
                      const Matrix& wv, const PadMask& mask);

/// n_heads attentions over column slices, concatenated, times wo.
Matrix multi_head(const Matrix& x, const LayerParams& layer,
                  std::size_t n_heads, const PadMask& mask);

struct PooledEmbedding {
  Vector values;
  std::size_t source_length = 0;
};

/// Activations kept by encoder_forward for encoder_backward.
struct ForwardCache {
  struct Layer {
    Matrix input;
    Matrix q, k, v;
    std::vector<Matrix> attn;  // per head
    Matrix heads;              // concatenated head outputs
    Matrix xhat1;
    Vector rstd1;
    Matrix norm1;
    Matrix ff_pre;  // before ReLU
    Matrix ff_act;
    Matrix xhat2;
    Vector rstd2;
  };
  std::vector<int> ids;  // first `length` token ids
  std::size_t length = 0;
  std::vector<Layer> layers;
};

/// Embeds, adds positions, runs every block and mean-pools the first
/// true_len hidden states. Padded positions are never attended to and never
/// pooled, so only the unpadded prefix is computed.
PooledEmbedding encoder_forward(std::span<const int> token_ids,
                                std::size_t true_len,
                                const EncoderParams& params,
                                const EncoderConfig& config,
                                ForwardCache* cache = nullptr);

/// Adds d(loss)/d(params) into `grads` given d(loss)/d(pooled embedding).
void encoder_backward(const ForwardCache& cache, const Vector& upstream,
                      const EncoderParams& params, const EncoderConfig& config,
                      EncoderParams& grads);

struct EncodedText;

/// Pooled embeddings of many inputs, one row each. Inputs with zero length
/// are rejected like in encoder_forward.
Matrix embed_batch(std::span<const EncodedText> inputs,
                   const EncoderParams& params, const EncoderConfig& config);

}  // namespace tpdr
