#include <cmath>
#include <map>
#include <set>

#include "doctest.h"
#include "oracles.hpp"
#include "tpdr/synthetic.hpp"
#include "tpdr/trainer.hpp"

using namespace tpdr;

namespace {

Matrix random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = uniform(rng, -1, 1);
  return m;
}

struct Fixture {
  Catalog catalog;
  std::vector<TrainingPair> pairs;
  TokenizerModel tokenizer;
  EncoderConfig cfg;
};

Fixture fixture(std::size_t products, std::size_t per_product) {
  SyntheticConfig sc;
  sc.n_products = products;
  sc.queries_per_product = per_product;
  sc.seed = 3;
  auto corpus = generate_corpus(sc);
  Fixture f{Catalog(corpus.catalog), corpus.pairs, {}, {}};
  std::vector<std::string> texts;
  for (const auto& r : f.catalog.records()) texts.push_back(r.sd_text);
  for (const auto& p : f.pairs) texts.push_back(p.query_text);
  f.tokenizer = train_bpe(texts, 120);
  f.cfg = {.n_layers = 1, .d_model = 8, .n_heads = 2, .d_ff = 8,
           .vocab_size = f.tokenizer.vocab_size(), .max_len = 16};
  return f;
}

}  // namespace

TEST_CASE("n-pair loss anchors") {
  Rng rng(1);
  CHECK(n_pair_loss(random_matrix(rng, 1, 4), random_matrix(rng, 1, 4)).loss == 0.0);
  for (Eigen::Index n : {2, 4, 7}) {
    const auto r = n_pair_loss(Matrix::Zero(n, 3), random_matrix(rng, n, 3));
    CHECK(std::abs(r.loss - std::log(static_cast<double>(n))) < 1e-12);
  }
  const auto r = n_pair_loss(random_matrix(rng, 5, 3), random_matrix(rng, 5, 3));
  CHECK(r.loss > 0.0);
  CHECK(r.logit_grad.rowwise().sum().cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("n-pair loss matches the formula and finite differences") {
  Rng rng(2);
  Matrix f = random_matrix(rng, 3, 4), g = random_matrix(rng, 3, 4);
  const auto r = n_pair_loss(f, g);
  CHECK(std::abs(r.loss - oracle::n_pair_loss(oracle::to_mat(f), oracle::to_mat(g))) < 1e-12);
  double worst = 0.0;
  for (Matrix* m : {&f, &g}) {
    const Matrix& analytic = m == &f ? r.grad_queries : r.grad_products;
    for (Eigen::Index i = 0; i < 3; ++i)
      for (Eigen::Index j = 0; j < 4; ++j) {
        const double num = oracle::central_difference(&(*m)(i, j), 1e-5, [&] {
          return oracle::n_pair_loss(oracle::to_mat(f), oracle::to_mat(g));
        });
        worst = std::max(worst, std::abs(num - analytic(i, j)));
      }
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("n-pair loss falls as the positive logit rises") {
  Rng rng(3);
  // Only product 0 has the last coordinate, so raising f(0, 3) lifts the
  // positive logit of query 0 and nothing else.
  Matrix f = Matrix::Zero(3, 4), g = Matrix::Zero(3, 4);
  f.block(0, 0, 3, 3) = random_matrix(rng, 3, 3);
  g.block(0, 0, 3, 3) = random_matrix(rng, 3, 3);
  g(0, 3) = 1.0;
  double prev = n_pair_loss(f, g).loss;
  for (int t = 0; t < 5; ++t) {
    f(0, 3) += 0.25;
    const double now = n_pair_loss(f, g).loss;
    CHECK(now < prev);
    prev = now;
  }
}

TEST_CASE("n-pair loss rejects non-finite input") {
  Matrix f = Matrix::Ones(2, 2), g = Matrix::Ones(2, 2);
  f(1, 1) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(n_pair_loss(f, g), DivergenceError);
  CHECK_THROWS_AS(n_pair_loss(Matrix::Ones(2, 2), Matrix::Ones(3, 2)), ValidationError);
}

TEST_CASE("build_batch") {
  auto f = fixture(40, 2);
  const auto pairs = encode_pairs(f.pairs, f.catalog, f.tokenizer, 16);
  SUBCASE("distinct products, reproducible") {
    Rng r1(5), r2(5);
    for (int t = 0; t < 20; ++t) {
      const auto b = build_batch(pairs, 32, r1);
      CHECK(b == build_batch(pairs, 32, r2));
      REQUIRE(b.size() == 32);
      std::set<std::string> ids;
      for (auto i : b) ids.insert(pairs[i].product_id);
      CHECK(ids.size() == 32);
    }
  }
  SUBCASE("all distinct pairs are used once") {
    std::vector<EncodedPair> one_each;
    std::set<std::string> seen;
    for (const auto& p : pairs)
      if (seen.insert(p.product_id).second) one_each.push_back(p);
    one_each.resize(32);
    Rng rng(1);
    auto b = build_batch(one_each, 32, rng);
    std::sort(b.begin(), b.end());
    for (std::size_t i = 0; i < 32; ++i) CHECK(b[i] == i);
  }
  SUBCASE("cannot fill") {
    Rng rng(1);
    CHECK_THROWS_AS(build_batch(pairs, 41, rng), ValidationError);
  }
}

TEST_CASE("epoch_batches cover the pairs with distinct products") {
  auto f = fixture(30, 3);
  const auto pairs = encode_pairs(f.pairs, f.catalog, f.tokenizer, 16);
  Rng rng(2);
  const auto batches = epoch_batches(pairs, 8, rng);
  std::multiset<std::size_t> used;
  for (const auto& b : batches) {
    CHECK(b.size() >= 2);
    CHECK(b.size() <= 8);
    std::set<std::string> ids;
    for (auto i : b) {
      ids.insert(pairs[i].product_id);
      used.insert(i);
    }
    CHECK(ids.size() == b.size());
  }
  // Nothing repeats; only stragglers (lone leftovers) may be skipped.
  std::set<std::size_t> uniq(used.begin(), used.end());
  CHECK(uniq.size() == used.size());
  CHECK(used.size() + 1 >= pairs.size());
}

TEST_CASE("tag_step turn rule") {
  auto f = fixture(20, 1);
  const auto pairs = encode_pairs(f.pairs, f.catalog, f.tokenizer, 16);
  std::vector<std::size_t> batch{0, 1, 2, 3, 4, 5};
  for (auto kind : {OptimizerKind::adam, OptimizerKind::sgd}) {
    TrainConfig tc{.batch_size = 6, .learning_rate = 1e-2, .seed = 3,
                   .optimizer = kind};
    auto state = make_train_state(f.cfg, tc);
    for (std::uint64_t step = 0; step < 6; ++step) {
      const auto before = state.model;
      const auto log = tag_step(state, pairs, batch, tc);
      CHECK(log.step == step);
      CHECK(state.model.step == step + 1);
      const bool q_same = bit_identical(before.query, state.model.query);
      const bool p_same = bit_identical(before.product, state.model.product);
      if (step % 2 == 0) {
        CHECK(log.turn == Turn::query);
        CHECK(p_same);
        CHECK_FALSE(q_same);
      } else {
        CHECK(log.turn == Turn::product);
        CHECK(q_same);
        CHECK_FALSE(p_same);
      }
    }
    CHECK(state.query_optimizer.updates() == 3);
    CHECK(state.product_optimizer.updates() == 3);
    CHECK(state.loss_history.size() == 6);
  }
  SUBCASE("tag off moves both towers") {
    TrainConfig tc{.batch_size = 6, .learning_rate = 1e-2, .tag_enabled = false};
    auto state = make_train_state(f.cfg, tc);
    const auto before = state.model;
    CHECK(tag_step(state, pairs, batch, tc).turn == Turn::both);
    CHECK_FALSE(bit_identical(before.query, state.model.query));
    CHECK_FALSE(bit_identical(before.product, state.model.product));
  }
  SUBCASE("shared embedding stays shared") {
    auto cfg = f.cfg;
    cfg.shared_embedding = true;
    TrainConfig tc{.batch_size = 6, .learning_rate = 1e-2};
    auto state = make_train_state(cfg, tc);
    for (int s = 0; s < 4; ++s) {
      const auto before = state.model;
      tag_step(state, pairs, batch, tc);
      CHECK(state.model.query.token_embedding == state.model.product.token_embedding);
      CHECK(state.model.query.token_embedding != before.query.token_embedding);
    }
  }
}

TEST_CASE("make_train_state seeds") {
  auto f = fixture(10, 1);
  TrainConfig tc;
  tc.seed = 4;
  const auto a = make_train_state(f.cfg, tc);
  CHECK_FALSE(bit_identical(a.model.query, a.model.product));
  tc.same_init = true;
  const auto b = make_train_state(f.cfg, tc);
  CHECK(bit_identical(b.model.query, b.model.product));
  CHECK(bit_identical(a.model.query, b.model.query));
}

TEST_CASE("train") {
  auto f = fixture(24, 2);
  const auto split = split_dataset(f.pairs, 1);
  TrainConfig tc{.batch_size = 8, .max_epochs = 3, .learning_rate = 5e-3, .seed = 9};

  SUBCASE("zero epochs returns the initialization") {
    tc.max_epochs = 0;
    const auto r = train(split, f.catalog, f.tokenizer, f.cfg, tc);
    const auto init = make_train_state(f.cfg, tc);
    CHECK(bit_identical(r.best.query, init.model.query));
    CHECK(bit_identical(r.best.product, init.model.product));
    CHECK(r.steps.empty());
    CHECK(r.best_epoch == 0);
  }
  SUBCASE("same seed, same loss curve and checkpoint") {
    std::vector<double> curve;
    TrainHooks hooks;
    hooks.on_step = [&](const StepLog& s) { curve.push_back(s.loss); };
    const auto a = train(split, f.catalog, f.tokenizer, f.cfg, tc, "", hooks);
    const auto b = train(split, f.catalog, f.tokenizer, f.cfg, tc);
    REQUIRE(a.steps.size() == b.steps.size());
    for (std::size_t i = 0; i < a.steps.size(); ++i) {
      CHECK(a.steps[i].loss == b.steps[i].loss);
      CHECK(curve[i] == a.steps[i].loss);
    }
    CHECK(fingerprint(a.best) == fingerprint(b.best));
    CHECK(a.epochs.size() == 3);
    for (std::size_t i = 0; i < a.steps.size(); ++i) CHECK(a.steps[i].step == i);
  }
  SUBCASE("vocab too small for the tokenizer") {
    auto cfg = f.cfg;
    cfg.vocab_size = 5;
    CHECK_THROWS_AS(train(split, f.catalog, f.tokenizer, cfg, tc), ValidationError);
  }
  SUBCASE("divergence keeps the last good checkpoint") {
    tc.optimizer = OptimizerKind::sgd;
    tc.learning_rate = 1e12;
    tc.max_epochs = 5;
    try {
      train(split, f.catalog, f.tokenizer, f.cfg, tc);
      FAIL("expected divergence");
    } catch (const TrainingDiverged& e) {
      CHECK(all_finite(e.last_good().query));
      CHECK(all_finite(e.last_good().product));
    }
  }
  SUBCASE("batch size below two is rejected") {
    tc.batch_size = 1;
    CHECK_THROWS_AS(train(split, f.catalog, f.tokenizer, f.cfg, tc), ValidationError);
  }
}
