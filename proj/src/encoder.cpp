#include "tpdr/encoder.hpp"

#include <cmath>
#include <limits>

#include "tpdr/error.hpp"
#include "tpdr/random.hpp"
#include "tpdr/tokenizer.hpp"

namespace tpdr {

namespace {

constexpr double kLayerNormEps = 1e-9;
constexpr double kInitScale = 0.05;

std::span<double> span_of(auto& m) {
  return {m.data(), static_cast<std::size_t>(m.size())};
}
std::span<const double> span_of(const auto& m) {
  return {m.data(), static_cast<std::size_t>(m.size())};
}

template <typename Params, typename View>
std::vector<View> collect(Params& p) {
  std::vector<View> out;
  out.push_back({"token_embedding", span_of(p.token_embedding)});
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto& L = p.layers[l];
    const auto pre = "layer" + std::to_string(l) + ".";
    out.push_back({pre + "wq", span_of(L.wq)});
    out.push_back({pre + "wk", span_of(L.wk)});
    out.push_back({pre + "wv", span_of(L.wv)});
    out.push_back({pre + "wo", span_of(L.wo)});
    out.push_back({pre + "w1", span_of(L.w1)});
    out.push_back({pre + "b1", span_of(L.b1)});
    out.push_back({pre + "w2", span_of(L.w2)});
    out.push_back({pre + "b2", span_of(L.b2)});
    out.push_back({pre + "ln1_gain", span_of(L.ln1_gain)});
    out.push_back({pre + "ln1_bias", span_of(L.ln1_bias)});
    out.push_back({pre + "ln2_gain", span_of(L.ln2_gain)});
    out.push_back({pre + "ln2_bias", span_of(L.ln2_bias)});
  }
  return out;
}

// Row-wise layer norm; returns gain * xhat + bias.
Matrix layer_norm(const Matrix& x, const RowVector& gain, const RowVector& bias,
                  Matrix& xhat, Vector& rstd) {
  const auto d = static_cast<double>(x.cols());
  xhat.resize(x.rows(), x.cols());
  rstd.resize(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mu = x.row(r).sum() / d;
    const RowVector centered = x.row(r).array() - mu;
    const double var = centered.squaredNorm() / d;
    rstd(r) = 1.0 / std::sqrt(var + kLayerNormEps);
    xhat.row(r) = centered * rstd(r);
  }
  Matrix y = xhat.array().rowwise() * gain.array();
  y.rowwise() += bias;
  return y;
}

Matrix layer_norm_backward(const Matrix& dy, const Matrix& xhat,
                           const Vector& rstd, const RowVector& gain,
                           RowVector& dgain, RowVector& dbias) {
  dgain += (dy.array() * xhat.array()).colwise().sum().matrix();
  dbias += dy.colwise().sum();
  const Matrix dxhat = dy.array().rowwise() * gain.array();
  const auto d = static_cast<double>(dy.cols());
  Matrix dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const double mean_dxhat = dxhat.row(r).sum() / d;
    const double mean_dxhat_xhat = dxhat.row(r).dot(xhat.row(r)) / d;
    dx.row(r) = rstd(r) * (dxhat.row(r).array() - mean_dxhat -
                           xhat.row(r).array() * mean_dxhat_xhat)
                              .matrix();
  }
  return dx;
}

}  // namespace

void EncoderConfig::validate() const {
  if (n_layers < 1 || d_model < 1 || n_heads < 1 || d_ff < 1 ||
      vocab_size < 1 || max_len < 1) {
    throw ValidationError("encoder dimensions must all be >= 1");
  }
  if (d_model % n_heads != 0) {
    throw ValidationError("d_model (" + std::to_string(d_model) +
                          ") must be divisible by n_heads (" +
                          std::to_string(n_heads) + ")");
  }
}

EncoderParams EncoderParams::zeros(const EncoderConfig& c) {
  c.validate();
  const auto d = static_cast<Eigen::Index>(c.d_model);
  const auto ff = static_cast<Eigen::Index>(c.d_ff);
  EncoderParams p;
  p.token_embedding =
      Matrix::Zero(static_cast<Eigen::Index>(c.vocab_size), d);
  p.layers.resize(c.n_layers);
  for (auto& L : p.layers) {
    L.wq = Matrix::Zero(d, d);
    L.wk = Matrix::Zero(d, d);
    L.wv = Matrix::Zero(d, d);
    L.wo = Matrix::Zero(d, d);
    L.w1 = Matrix::Zero(d, ff);
    L.b1 = RowVector::Zero(ff);
    L.w2 = Matrix::Zero(ff, d);
    L.b2 = RowVector::Zero(d);
    L.ln1_gain = RowVector::Zero(d);
    L.ln1_bias = RowVector::Zero(d);
    L.ln2_gain = RowVector::Zero(d);
    L.ln2_bias = RowVector::Zero(d);
  }
  return p;
}

std::vector<TensorView> tensors(EncoderParams& params) {
  return collect<EncoderParams, TensorView>(params);
}

std::vector<ConstTensorView> tensors(const EncoderParams& params) {
  return collect<const EncoderParams, ConstTensorView>(params);
}

EncoderParams init_params(const EncoderConfig& config, std::uint64_t seed) {
  auto p = EncoderParams::zeros(config);
  Rng rng(seed);
  auto fill = [&](auto& m) {
    for (auto& x : span_of(m)) x = uniform(rng, -kInitScale, kInitScale);
  };
  fill(p.token_embedding);
  for (auto& L : p.layers) {
    fill(L.wq);
    fill(L.wk);
    fill(L.wv);
    fill(L.wo);
    fill(L.w1);
    fill(L.w2);
    L.ln1_gain.setOnes();
    L.ln2_gain.setOnes();
  }
  return p;
}

bool all_finite(const EncoderParams& params) {
  for (const auto& t : tensors(params)) {
    for (double x : t.data) {
      if (!std::isfinite(x)) return false;
    }
  }
  return true;
}

Matrix positional_encoding(std::size_t max_len, std::size_t d_model) {
  Matrix pe(static_cast<Eigen::Index>(max_len),
            static_cast<Eigen::Index>(d_model));
  for (std::size_t pos = 0; pos < max_len; ++pos) {
    for (std::size_t i = 0; i < d_model; ++i) {
      const double exponent =
          static_cast<double>(i - i % 2) / static_cast<double>(d_model);
      const double angle =
          static_cast<double>(pos) / std::pow(10000.0, exponent);
      pe(static_cast<Eigen::Index>(pos), static_cast<Eigen::Index>(i)) =
          i % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v,
                 const PadMask& mask, Matrix* weights) {
  if (q.cols() != k.cols() || k.rows() != v.rows() ||
      static_cast<Eigen::Index>(mask.size()) != k.rows()) {
    throw ValidationError("attention: shape mismatch");
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(k.cols()));
  Matrix a = (q * k.transpose()) * scale;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    double row_max = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      if (!mask[static_cast<std::size_t>(j)]) row_max = std::max(row_max, a(i, j));
    }
    if (!std::isfinite(row_max)) {
      a.row(i).setZero();
      continue;
    }
    double total = 0.0;
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      a(i, j) = mask[static_cast<std::size_t>(j)] ? 0.0 : std::exp(a(i, j) - row_max);
      total += a(i, j);
    }
    a.row(i) /= total;
  }
  Matrix y = a * v;
  if (weights != nullptr) *weights = std::move(a);
  return y;
}

Matrix self_attention(const Matrix& x, const Matrix& wq, const Matrix& wk,
                      const Matrix& wv, const PadMask& mask) {
  return attention(x * wq, x * wk, x * wv, mask);
}

Matrix multi_head(const Matrix& x, const LayerParams& layer,
                  std::size_t n_heads, const PadMask& mask) {
  const Eigen::Index d = layer.wq.cols();
  if (n_heads == 0 || d % static_cast<Eigen::Index>(n_heads) != 0) {
    throw ValidationError("multi_head: n_heads must divide d_model");
  }
  const Eigen::Index dh = d / static_cast<Eigen::Index>(n_heads);
  const Matrix q = x * layer.wq;
  const Matrix k = x * layer.wk;
  const Matrix v = x * layer.wv;
  Matrix heads(x.rows(), d);
  for (Eigen::Index h = 0; h < static_cast<Eigen::Index>(n_heads); ++h) {
    heads.middleCols(h * dh, dh) =
        attention(q.middleCols(h * dh, dh), k.middleCols(h * dh, dh),
                  v.middleCols(h * dh, dh), mask);
  }
  return heads * layer.wo;
}

PooledEmbedding encoder_forward(std::span<const int> token_ids,
                                std::size_t true_len,
                                const EncoderParams& params,
                                const EncoderConfig& config,
                                ForwardCache* cache) {
  if (token_ids.size() != config.max_len) {
    throw ValidationError("encoder_forward: expected " +
                          std::to_string(config.max_len) + " token ids, got " +
                          std::to_string(token_ids.size()));
  }
  if (true_len == 0) {
    throw ValidationError("encoder_forward: cannot pool an empty sequence");
  }
  if (true_len > token_ids.size()) {
    throw ValidationError("encoder_forward: true_len exceeds sequence length");
  }
  const auto L = static_cast<Eigen::Index>(true_len);
  const auto d = static_cast<Eigen::Index>(config.d_model);
  const auto dh = static_cast<Eigen::Index>(config.head_dim());
  const auto vocab = params.token_embedding.rows();

  Matrix h = positional_encoding(true_len, config.d_model);
  for (Eigen::Index i = 0; i < L; ++i) {
    const int id = token_ids[static_cast<std::size_t>(i)];
    if (id < 0 || id >= vocab) {
      throw ValidationError("encoder_forward: token id " + std::to_string(id) +
                            " outside vocabulary");
    }
    h.row(i) += params.token_embedding.row(id);
  }

  if (cache != nullptr) {
    cache->ids.assign(token_ids.begin(), token_ids.begin() + L);
    cache->length = true_len;
    cache->layers.assign(params.layers.size(), {});
  }
  const PadMask mask(true_len, false);

  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& P = params.layers[l];
    ForwardCache::Layer local;
    auto& c = cache != nullptr ? cache->layers[l] : local;
    c.input = h;
    c.q = h * P.wq;
    c.k = h * P.wk;
    c.v = h * P.wv;
    c.attn.resize(config.n_heads);
    c.heads.resize(L, d);
    for (std::size_t hd = 0; hd < config.n_heads; ++hd) {
      const auto off = static_cast<Eigen::Index>(hd) * dh;
      c.heads.middleCols(off, dh) =
          attention(c.q.middleCols(off, dh), c.k.middleCols(off, dh),
                    c.v.middleCols(off, dh), mask, &c.attn[hd]);
    }
    const Matrix resid1 = h + c.heads * P.wo;
    c.norm1 = layer_norm(resid1, P.ln1_gain, P.ln1_bias, c.xhat1, c.rstd1);
    c.ff_pre = c.norm1 * P.w1;
    c.ff_pre.rowwise() += P.b1;
    c.ff_act = c.ff_pre.cwiseMax(0.0);
    Matrix resid2 = c.ff_act * P.w2;
    resid2.rowwise() += P.b2;
    resid2 += c.norm1;
    h = layer_norm(resid2, P.ln2_gain, P.ln2_bias, c.xhat2, c.rstd2);
  }

  return {h.colwise().mean().transpose(), true_len};
}

void encoder_backward(const ForwardCache& cache, const Vector& upstream,
                      const EncoderParams& params, const EncoderConfig& config,
                      EncoderParams& grads) {
  const auto d = static_cast<Eigen::Index>(config.d_model);
  if (upstream.size() != d || cache.layers.size() != params.layers.size() ||
      grads.layers.size() != params.layers.size() ||
      grads.token_embedding.rows() != params.token_embedding.rows() ||
      grads.token_embedding.cols() != d || cache.length == 0) {
    throw ValidationError("encoder_backward: shape mismatch");
  }
  const auto L = static_cast<Eigen::Index>(cache.length);
  const auto dh = static_cast<Eigen::Index>(config.head_dim());
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  // Mean pooling spreads the upstream gradient evenly over the prefix.
  Matrix dh_out = (upstream.transpose() / static_cast<double>(L)).replicate(L, 1);

  for (std::size_t li = params.layers.size(); li-- > 0;) {
    const auto& P = params.layers[li];
    const auto& c = cache.layers[li];
    auto& G = grads.layers[li];

    // out = LN2(norm1 + ff_act * w2 + b2)
    const Matrix dresid2 = layer_norm_backward(dh_out, c.xhat2, c.rstd2,
                                               P.ln2_gain, G.ln2_gain,
                                               G.ln2_bias);
    G.w2.noalias() += c.ff_act.transpose() * dresid2;
    G.b2 += dresid2.colwise().sum();
    Matrix dff = dresid2 * P.w2.transpose();
    dff = (c.ff_pre.array() > 0.0).select(dff, 0.0);
    G.w1.noalias() += c.norm1.transpose() * dff;
    G.b1 += dff.colwise().sum();
    const Matrix dnorm1 = dresid2 + dff * P.w1.transpose();

    // norm1 = LN1(input + heads * wo)
    const Matrix dresid1 = layer_norm_backward(dnorm1, c.xhat1, c.rstd1,
                                               P.ln1_gain, G.ln1_gain,
                                               G.ln1_bias);
    G.wo.noalias() += c.heads.transpose() * dresid1;
    const Matrix dheads = dresid1 * P.wo.transpose();

    Matrix dq(L, d), dk(L, d), dv(L, d);
    for (std::size_t hd = 0; hd < config.n_heads; ++hd) {
      const auto off = static_cast<Eigen::Index>(hd) * dh;
      const Matrix& A = c.attn[hd];
      const auto dout = dheads.middleCols(off, dh);
      const Matrix dA = dout * c.v.middleCols(off, dh).transpose();
      dv.middleCols(off, dh) = A.transpose() * dout;
      const Vector row_dot = (dA.array() * A.array()).rowwise().sum();
      const Matrix dS =
          (A.array() * (dA.colwise() - row_dot).array()).matrix() * scale;
      dq.middleCols(off, dh) = dS * c.k.middleCols(off, dh);
      dk.middleCols(off, dh) = dS.transpose() * c.q.middleCols(off, dh);
    }
    G.wq.noalias() += c.input.transpose() * dq;
    G.wk.noalias() += c.input.transpose() * dk;
    G.wv.noalias() += c.input.transpose() * dv;
    dh_out = dresid1;
    dh_out.noalias() += dq * P.wq.transpose();
    dh_out.noalias() += dk * P.wk.transpose();
    dh_out.noalias() += dv * P.wv.transpose();
  }

  for (Eigen::Index i = 0; i < L; ++i) {
    grads.token_embedding.row(cache.ids[static_cast<std::size_t>(i)]) +=
        dh_out.row(i);
  }
}

Matrix embed_batch(std::span<const EncodedText> inputs,
                   const EncoderParams& params, const EncoderConfig& config) {
  Matrix out(static_cast<Eigen::Index>(inputs.size()),
             static_cast<Eigen::Index>(config.d_model));
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) =
        encoder_forward(inputs[i].ids, inputs[i].length, params, config)
            .values.transpose();
  }
  return out;
}

}  // namespace tpdr
