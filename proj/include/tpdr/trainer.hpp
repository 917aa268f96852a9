#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tpdr/catalog.hpp"
#include "tpdr/checkpoint.hpp"
#include "tpdr/encoder.hpp"
#include "tpdr/error.hpp"
#include "tpdr/random.hpp"
#include "tpdr/tokenizer.hpp"

namespace tpdr {

enum class OptimizerKind { sgd, adam };

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t max_epochs = 10;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::adam;
  // Alternate tower updates: even steps query tower, odd steps product tower.
  bool tag_enabled = true;
  // Initialize both towers from the same seed.
  bool same_init = false;
  // Momentum carried across alternating turns lags the other tower's moves
  // and oscillates, so the first-moment decay defaults to 0.
  double adam_beta1 = 0.0;
  double adam_beta2 = 0.999;

  void validate() const;
};

/// Mean N-pair loss over raw dot-product logits F G^T, with gradients.
struct NPairLoss {
  double loss = 0.0;
  Matrix logit_grad;   // N x N: (softmax(row) - onehot) / N
  Matrix grad_queries;   // N x d
  Matrix grad_products;  // N x d
};

/// Rows of `queries` and `products` are paired by index; every other product
/// in the batch is a negative. Throws DivergenceError on non-finite input.
NPairLoss n_pair_loss(const Matrix& queries, const Matrix& products);

/// Per-tensor SGD or Adam (eps 1e-8) state.
class TowerOptimizer {
 public:
  TowerOptimizer() = default;
  TowerOptimizer(OptimizerKind kind, double learning_rate,
                 const EncoderParams& shape, double beta1 = 0.0,
                 double beta2 = 0.999);

  /// params -= update(grads). Skips the token embedding when
  /// `skip_embedding` is set.
  void apply(EncoderParams& params, const EncoderParams& grads,
             bool skip_embedding = false);
  /// Update for a single tensor with its own moment slot.
  void apply_embedding(Matrix& table, const Matrix& grad);

  std::uint64_t updates() const { return t_; }

 private:
  void update(std::size_t slot, std::span<double> p,
              std::span<const double> g);

  OptimizerKind kind_ = OptimizerKind::adam;
  double lr_ = 1e-3;
  double beta1_ = 0.0;
  double beta2_ = 0.999;
  std::uint64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

enum class Turn { query, product, both };
const char* turn_name(Turn turn);

struct StepLog {
  std::uint64_t step = 0;
  Turn turn = Turn::both;
  double loss = 0.0;
};

struct EpochLog {
  std::size_t epoch = 0;
  double val_recall_at_1 = 0.0;
};

/// Both towers with their optimizers, the global step and the loss history.
struct TrainState {
  Checkpoint model;
  TowerOptimizer query_optimizer;
  TowerOptimizer product_optimizer;
  TowerOptimizer embedding_optimizer;  // shared-embedding mode only
  std::vector<double> loss_history;
};

/// Fresh seeded towers (query tower seed and product tower seed derive from
/// config.seed).
TrainState make_train_state(const EncoderConfig& encoder,
                            const TrainConfig& config,
                            std::string tokenizer_ref = {});

/// Pre-tokenized (query, product) pair.
struct EncodedPair {
  EncodedText query;
  EncodedText product;
  std::string product_id;
};

std::vector<EncodedPair> encode_pairs(std::span<const TrainingPair> pairs,
                                      const Catalog& catalog,
                                      const TokenizerModel& tokenizer,
                                      std::size_t max_len);

/// Samples batch_size pairs with pairwise distinct products. Throws
/// ValidationError when fewer distinct products exist.
std::vector<std::size_t> build_batch(std::span<const EncodedPair> pairs,
                                     std::size_t batch_size, Rng& rng);

/// Shuffles every pair into batches of at most batch_size distinct products
/// (first fit in shuffled order). Batches of one pair are dropped.
std::vector<std::vector<std::size_t>> epoch_batches(
    std::span<const EncodedPair> pairs, std::size_t batch_size, Rng& rng);

/// One optimization step over `batch` (indices into `pairs`).
StepLog tag_step(TrainState& state, std::span<const EncodedPair> pairs,
                 std::span<const std::size_t> batch, const TrainConfig& config);

/// Recall@1 of each query against the distinct products of `pairs`, ranked
/// by cosine between the two towers' embeddings.
double pairs_recall_at_1(const Checkpoint& model,
                         std::span<const EncodedPair> pairs);

class TrainingDiverged : public DivergenceError {
 public:
  TrainingDiverged(const std::string& what, Checkpoint last_good)
      : DivergenceError(what), last_good_(std::move(last_good)) {}
  const Checkpoint& last_good() const { return last_good_; }

 private:
  Checkpoint last_good_;
};

struct TrainHooks {
  std::function<void(const StepLog&)> on_step;
  std::function<void(const EpochLog&)> on_epoch;
};

struct TrainResult {
  Checkpoint best;  // highest validation Recall@1, earliest on ties
  std::vector<StepLog> steps;
  std::vector<EpochLog> epochs;
  std::size_t best_epoch = 0;  // 0 when no epoch ran
};

/// Runs max_epochs of tag_step. Throws TrainingDiverged carrying the best
/// checkpoint so far when the loss or parameters stop being finite.
TrainResult train(const DatasetSplit& split, const Catalog& catalog,
                  const TokenizerModel& tokenizer,
                  const EncoderConfig& encoder, const TrainConfig& config,
                  const std::string& tokenizer_ref = {},
                  const TrainHooks& hooks = {});

}  // namespace tpdr
