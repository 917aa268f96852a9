#include "tpdr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include "tpdr/index.hpp"
#include "tpdr/metrics.hpp"

namespace tpdr {

namespace {

constexpr double kAdamEps = 1e-8;

bool finite(const Matrix& m) { return m.allFinite(); }

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 2) {
    throw ValidationError("batch_size must be >= 2 (in-batch negatives)");
  }
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ValidationError("learning_rate must be positive");
  }
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) ||
      !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw ValidationError("adam betas must be in [0, 1)");
  }
}

NPairLoss n_pair_loss(const Matrix& queries, const Matrix& products) {
  if (queries.rows() != products.rows() || queries.cols() != products.cols()) {
    throw ValidationError("n_pair_loss: query and product batches differ in shape");
  }
  if (queries.rows() == 0) throw ValidationError("n_pair_loss: empty batch");
  if (!finite(queries) || !finite(products)) {
    throw DivergenceError("n_pair_loss: non-finite embedding");
  }
  const Eigen::Index n = queries.rows();
  const Matrix logits = queries * products.transpose();

  NPairLoss out;
  out.logit_grad.resize(n, n);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double m = logits.row(i).maxCoeff();
    const RowVector e = (logits.row(i).array() - m).exp().matrix();
    const double z = e.sum();
    total += m + std::log(z) - logits(i, i);
    out.logit_grad.row(i) = e / z;
    out.logit_grad(i, i) -= 1.0;
  }
  const auto scale = 1.0 / static_cast<double>(n);
  out.loss = total * scale;
  out.logit_grad *= scale;
  out.grad_queries = out.logit_grad * products;
  out.grad_products = out.logit_grad.transpose() * queries;
  if (!std::isfinite(out.loss)) {
    throw DivergenceError("n_pair_loss: non-finite loss");
  }
  return out;
}

TowerOptimizer::TowerOptimizer(OptimizerKind kind, double learning_rate,
                               const EncoderParams& shape, double beta1,
                               double beta2)
    : kind_(kind), lr_(learning_rate), beta1_(beta1), beta2_(beta2) {
  const auto views = tensors(shape);
  m_.resize(views.size());
  v_.resize(views.size());
}

void TowerOptimizer::update(std::size_t slot, std::span<double> p,
                            std::span<const double> g) {
  if (kind_ == OptimizerKind::sgd) {
    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr_ * g[i];
    return;
  }
  if (slot >= m_.size()) {
    m_.resize(slot + 1);
    v_.resize(slot + 1);
  }
  auto& m = m_[slot];
  auto& v = v_[slot];
  if (m.size() != p.size()) {
    m.assign(p.size(), 0.0);
    v.assign(p.size(), 0.0);
  }
  const double t = static_cast<double>(t_);
  const double c1 = 1.0 - std::pow(beta1_, t);
  const double c2 = 1.0 - std::pow(beta2_, t);
  for (std::size_t i = 0; i < p.size(); ++i) {
    m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
    v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
    p[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + kAdamEps);
  }
}

void TowerOptimizer::apply(EncoderParams& params, const EncoderParams& grads,
                           bool skip_embedding) {
  ++t_;
  auto p = tensors(params);
  const auto g = tensors(grads);
  for (std::size_t s = skip_embedding ? 1 : 0; s < p.size(); ++s) {
    update(s, p[s].data, g[s].data);
  }
}

void TowerOptimizer::apply_embedding(Matrix& table, const Matrix& grad) {
  ++t_;
  update(0, {table.data(), static_cast<std::size_t>(table.size())},
         {grad.data(), static_cast<std::size_t>(grad.size())});
}

const char* turn_name(Turn turn) {
  switch (turn) {
    case Turn::query:
      return "query";
    case Turn::product:
      return "product";
    case Turn::both:
      return "both";
  }
  return "both";
}

TrainState make_train_state(const EncoderConfig& encoder,
                            const TrainConfig& config,
                            std::string tokenizer_ref) {
  encoder.validate();
  config.validate();
  TrainState s;
  s.model.config = encoder;
  s.model.tokenizer_ref = std::move(tokenizer_ref);
  const auto query_seed = mix_seed(config.seed, 101);
  const auto product_seed =
      config.same_init ? query_seed : mix_seed(config.seed, 202);
  s.model.query = init_params(encoder, query_seed);
  s.model.product = init_params(encoder, product_seed);
  if (encoder.shared_embedding) {
    s.model.product.token_embedding = s.model.query.token_embedding;
  }
  auto make = [&](const EncoderParams& shape) {
    return TowerOptimizer(config.optimizer, config.learning_rate, shape,
                          config.adam_beta1, config.adam_beta2);
  };
  s.query_optimizer = make(s.model.query);
  s.product_optimizer = make(s.model.product);
  s.embedding_optimizer = make(s.model.query);
  return s;
}

std::vector<EncodedPair> encode_pairs(std::span<const TrainingPair> pairs,
                                      const Catalog& catalog,
                                      const TokenizerModel& tokenizer,
                                      std::size_t max_len) {
  std::vector<EncodedPair> out;
  out.reserve(pairs.size());
  std::unordered_map<std::string, EncodedText> product_cache;
  for (const auto& p : pairs) {
    auto it = product_cache.find(p.product_id);
    if (it == product_cache.end()) {
      it = product_cache
               .emplace(p.product_id,
                        encode(tokenizer, catalog.at(p.product_id).sd_text,
                               max_len))
               .first;
    }
    auto q = encode(tokenizer, p.query_text, max_len);
    if (q.length == 0 || it->second.length == 0) {
      throw ValidationError("pair for \"" + p.product_id +
                            "\" encodes to zero tokens");
    }
    out.push_back({std::move(q), it->second, p.product_id});
  }
  return out;
}

std::vector<std::size_t> build_batch(std::span<const EncodedPair> pairs,
                                     std::size_t batch_size, Rng& rng) {
  if (pairs.size() < batch_size) {
    throw ValidationError("build_batch: " + std::to_string(pairs.size()) +
                          " pairs cannot fill a batch of " +
                          std::to_string(batch_size));
  }
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> batch;
  std::unordered_set<std::string> used;
  for (auto i : order) {
    if (batch.size() == batch_size) break;
    if (used.insert(pairs[i].product_id).second) batch.push_back(i);
  }
  if (batch.size() < batch_size) {
    throw ValidationError("build_batch: only " + std::to_string(used.size()) +
                          " distinct products for a batch of " +
                          std::to_string(batch_size));
  }
  return batch;
}

std::vector<std::vector<std::size_t>> epoch_batches(
    std::span<const EncodedPair> pairs, std::size_t batch_size, Rng& rng) {
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  shuffle(order.begin(), order.end(), rng);

  std::vector<std::vector<std::size_t>> batches;
  std::vector<std::unordered_set<std::string>> members;
  std::size_t first_open = 0;  // batches before this one are full
  for (auto i : order) {
    std::size_t b = first_open;
    for (; b < batches.size(); ++b) {
      if (batches[b].size() < batch_size &&
          !members[b].contains(pairs[i].product_id)) {
        break;
      }
    }
    if (b == batches.size()) {
      batches.emplace_back();
      members.emplace_back();
    }
    batches[b].push_back(i);
    members[b].insert(pairs[i].product_id);
    while (first_open < batches.size() &&
           batches[first_open].size() == batch_size) {
      ++first_open;
    }
  }
  std::erase_if(batches, [](const auto& b) { return b.size() < 2; });
  return batches;
}

StepLog tag_step(TrainState& state, std::span<const EncodedPair> pairs,
                 std::span<const std::size_t> batch,
                 const TrainConfig& config) {
  if (batch.empty()) throw ValidationError("tag_step: empty batch");
  auto& model = state.model;
  const auto& cfg = model.config;
  const Turn turn = !config.tag_enabled ? Turn::both
                    : model.step % 2 == 0 ? Turn::query
                                          : Turn::product;
  const bool update_query = turn != Turn::product;
  const bool update_product = turn != Turn::query;

  const auto n = static_cast<Eigen::Index>(batch.size());
  const auto d = static_cast<Eigen::Index>(cfg.d_model);
  Matrix f(n, d), g(n, d);
  std::vector<ForwardCache> qcache(update_query ? batch.size() : 0);
  std::vector<ForwardCache> pcache(update_product ? batch.size() : 0);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& pair = pairs[batch[i]];
    const auto r = static_cast<Eigen::Index>(i);
    f.row(r) = encoder_forward(pair.query.ids, pair.query.length, model.query,
                               cfg, update_query ? &qcache[i] : nullptr)
                   .values.transpose();
    g.row(r) = encoder_forward(pair.product.ids, pair.product.length,
                               model.product, cfg,
                               update_product ? &pcache[i] : nullptr)
                   .values.transpose();
  }

  const auto loss = n_pair_loss(f, g);

  // Gradients accumulate in batch order so runs are bit-reproducible.
  EncoderParams qgrad, pgrad;
  if (update_query) {
    qgrad = EncoderParams::zeros(cfg);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      encoder_backward(qcache[i],
                       loss.grad_queries.row(static_cast<Eigen::Index>(i)).transpose(),
                       model.query, cfg, qgrad);
    }
  }
  if (update_product) {
    pgrad = EncoderParams::zeros(cfg);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      encoder_backward(pcache[i],
                       loss.grad_products.row(static_cast<Eigen::Index>(i)).transpose(),
                       model.product, cfg, pgrad);
    }
  }

  if (cfg.shared_embedding) {
    Matrix table_grad = Matrix::Zero(model.query.token_embedding.rows(), d);
    if (update_query) {
      table_grad += qgrad.token_embedding;
      state.query_optimizer.apply(model.query, qgrad, true);
    }
    if (update_product) {
      table_grad += pgrad.token_embedding;
      state.product_optimizer.apply(model.product, pgrad, true);
    }
    state.embedding_optimizer.apply_embedding(model.query.token_embedding,
                                              table_grad);
    model.product.token_embedding = model.query.token_embedding;
  } else {
    if (update_query) state.query_optimizer.apply(model.query, qgrad);
    if (update_product) state.product_optimizer.apply(model.product, pgrad);
  }

  if ((update_query && !all_finite(model.query)) ||
      (update_product && !all_finite(model.product))) {
    throw DivergenceError("parameters became non-finite at step " +
                          std::to_string(model.step));
  }

  StepLog log{model.step, turn, loss.loss};
  ++model.step;
  state.loss_history.push_back(loss.loss);
  return log;
}

double pairs_recall_at_1(const Checkpoint& model,
                         std::span<const EncodedPair> pairs) {
  if (pairs.empty()) return 0.0;
  IndexSnapshot snap;
  std::vector<EncodedText> products;
  std::unordered_map<std::string, std::size_t> row_of;
  for (const auto& p : pairs) {
    if (row_of.emplace(p.product_id, products.size()).second) {
      products.push_back(p.product);
      snap.product_ids.push_back(p.product_id);
      snap.dp_labels.emplace_back();
    }
  }
  snap.embeddings = embed_batch(products, model.product, model.config);

  std::vector<std::size_t> positions;
  positions.reserve(pairs.size());
  for (const auto& p : pairs) {
    const auto q = encoder_forward(p.query.ids, p.query.length, model.query,
                                   model.config);
    std::size_t pos = snap.size() + 1;
    if (q.values.norm() > 0.0) {
      const auto top = search(snap, q.values, 1);
      if (!top.empty() && top.front().product_id == p.product_id) pos = 1;
    }
    positions.push_back(pos);
  }
  return recall_at_k(positions, 1);
}

TrainResult train(const DatasetSplit& split, const Catalog& catalog,
                  const TokenizerModel& tokenizer,
                  const EncoderConfig& encoder, const TrainConfig& config,
                  const std::string& tokenizer_ref, const TrainHooks& hooks) {
  config.validate();
  encoder.validate();
  if (split.train.empty()) throw ValidationError("train split is empty");
  if (encoder.vocab_size < tokenizer.vocab_size()) {
    throw ValidationError("encoder vocab_size " +
                          std::to_string(encoder.vocab_size) +
                          " is smaller than the tokenizer's " +
                          std::to_string(tokenizer.vocab_size()));
  }

  auto state = make_train_state(encoder, config, tokenizer_ref);
  const auto train_pairs =
      encode_pairs(split.train, catalog, tokenizer, encoder.max_len);
  const auto val_pairs =
      encode_pairs(split.validation, catalog, tokenizer, encoder.max_len);

  TrainResult result;
  result.best = state.model;
  double best_recall = -1.0;

  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    Rng rng(mix_seed(config.seed, epoch + 1));
    const auto batches = epoch_batches(train_pairs, config.batch_size, rng);
    for (const auto& batch : batches) {
      StepLog log;
      try {
        log = tag_step(state, train_pairs, batch, config);
      } catch (const DivergenceError& e) {
        throw TrainingDiverged(e.what(), result.best);
      }
      result.steps.push_back(log);
      if (hooks.on_step) hooks.on_step(log);
    }
    EpochLog elog{epoch + 1,
                  pairs_recall_at_1(state.model,
                                    val_pairs.empty() ? train_pairs : val_pairs)};
    result.epochs.push_back(elog);
    if (hooks.on_epoch) hooks.on_epoch(elog);
    if (elog.val_recall_at_1 > best_recall) {
      best_recall = elog.val_recall_at_1;
      result.best = state.model;
      result.best_epoch = epoch + 1;
    }
  }
  return result;
}

}  // namespace tpdr
