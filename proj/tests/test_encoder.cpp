#include <cmath>
#include <utility>

#include "doctest.h"
#include "oracles.hpp"
#include "tpdr/encoder.hpp"
#include "tpdr/error.hpp"
#include "tpdr/random.hpp"
#include "tpdr/tokenizer.hpp"

using namespace tpdr;

namespace {

Matrix random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double s = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = uniform(rng, -s, s);
  return m;
}

double max_gap(const Matrix& a, const oracle::Mat& b) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      worst = std::max(worst, std::abs(a(i, j) - b[static_cast<std::size_t>(i)]
                                                     [static_cast<std::size_t>(j)]));
  return worst;
}

// Weights well away from zero so every path carries signal.
EncoderParams spread_params(const EncoderConfig& cfg, std::uint64_t seed) {
  auto p = init_params(cfg, seed);
  Rng rng(seed * 31 + 1);
  for (auto& t : tensors(p))
    for (auto& x : t.data) x = uniform(rng, -0.5, 0.5);
  for (auto& L : p.layers) {
    L.ln1_gain.array() += 1.0;
    L.ln2_gain.array() += 1.0;
  }
  return p;
}

}  // namespace

TEST_CASE("config validation") {
  EncoderConfig c;
  CHECK_NOTHROW(c.validate());
  c.n_heads = 3;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = {};
  c.n_layers = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
}

TEST_CASE("positional encoding") {
  const auto pe = positional_encoding(50, 12);
  CHECK(pe.rows() == 50);
  CHECK(pe.cols() == 12);
  for (Eigen::Index j = 0; j < 12; ++j) CHECK(pe(0, j) == (j % 2 == 0 ? 0.0 : 1.0));
  CHECK(pe.cwiseAbs().maxCoeff() <= 1.0);
  CHECK(pe(3, 0) == doctest::Approx(std::sin(3.0)));
  CHECK(pe(3, 5) == doctest::Approx(std::cos(3.0 / std::pow(10000.0, 4.0 / 12.0))));
  for (std::size_t d : {1, 7, 64})
    CHECK(positional_encoding(200, d).cwiseAbs().maxCoeff() <= 1.0);
}

TEST_CASE("attention reductions") {
  Rng rng(1);
  SUBCASE("single unmasked token attends to itself") {
    const Matrix q = random_matrix(rng, 3, 4), k = random_matrix(rng, 3, 4),
                 v = random_matrix(rng, 3, 4);
    Matrix w;
    const auto y = attention(q, k, v, {false, true, true}, &w);
    for (Eigen::Index i = 0; i < 3; ++i) {
      CHECK(w(i, 0) == 1.0);
      CHECK(w(i, 1) == 0.0);
      CHECK(y.row(i) == v.row(0));
    }
  }
  SUBCASE("identical tokens split attention evenly") {
    Matrix x = random_matrix(rng, 1, 4);
    Matrix q(2, 4), k(2, 4), v(2, 4);
    q << x, x;
    k << x, x;
    v = random_matrix(rng, 2, 4);
    Matrix w;
    attention(q, k, v, {false, false}, &w);
    CHECK(w(0, 0) == 0.5);
    CHECK(w(1, 1) == 0.5);
  }
  SUBCASE("all keys masked gives zero rows") {
    const Matrix q = random_matrix(rng, 2, 4);
    CHECK(attention(q, q, q, {true, true}).isZero(0.0));
  }
  SUBCASE("rows sum to one") {
    const Matrix q = random_matrix(rng, 5, 3, 3.0), k = random_matrix(rng, 5, 3, 3.0);
    Matrix w;
    attention(q, k, k, {false, false, true, false, true}, &w);
    for (Eigen::Index i = 0; i < 5; ++i) CHECK(std::abs(w.row(i).sum() - 1.0) < 1e-12);
  }
}

TEST_CASE("attention matches the oracle") {
  Rng rng(2);
  const Matrix q = random_matrix(rng, 4, 6), k = random_matrix(rng, 4, 6),
               v = random_matrix(rng, 4, 5);
  for (const PadMask& mask : {PadMask{false, false, false, false},
                              PadMask{false, true, false, true}}) {
    const auto want = oracle::attention(oracle::to_mat(q), oracle::to_mat(k),
                                        oracle::to_mat(v), mask);
    CHECK(max_gap(attention(q, k, v, mask), want) < 1e-10);
  }
}

TEST_CASE("multi-head attention") {
  Rng rng(3);
  EncoderConfig cfg{.n_layers = 1, .d_model = 6, .n_heads = 1, .d_ff = 4,
                    .vocab_size = 5, .max_len = 4};
  auto p = spread_params(cfg, 3);
  auto& L = p.layers[0];
  const Matrix x = random_matrix(rng, 4, 6);
  const PadMask mask{false, false, false, true};

  SUBCASE("one head with identity output equals self_attention") {
    L.wo = Matrix::Identity(6, 6);
    CHECK((multi_head(x, L, 1, mask) - self_attention(x, L.wq, L.wk, L.wv, mask))
              .cwiseAbs()
              .maxCoeff() == 0.0);
  }
  SUBCASE("shape and oracle for each head count") {
    for (std::size_t h : {1, 2, 3, 6}) {
      const auto y = multi_head(x, L, h, mask);
      CHECK(y.rows() == 4);
      CHECK(y.cols() == 6);
      CHECK(max_gap(y, oracle::multi_head(oracle::to_mat(x), L, h, mask)) < 1e-10);
    }
  }
}

TEST_CASE("forward matches the straight-line oracle") {
  for (std::size_t heads : {1, 2}) {
    for (std::size_t layers : {1, 2}) {
      EncoderConfig cfg{.n_layers = layers, .d_model = 8, .n_heads = heads,
                        .d_ff = 12, .vocab_size = 10, .max_len = 6};
      const auto p = spread_params(cfg, 10 + heads + layers);
      const std::vector<int> ids{4, 9, 2, 4, 0, 0};
      const auto got = encoder_forward(ids, 4, p, cfg);
      const auto want = oracle::encoder_forward(ids, 4, p, cfg);
      REQUIRE(got.values.size() == 8);
      CHECK(got.source_length == 4);
      for (Eigen::Index j = 0; j < 8; ++j)
        CHECK(std::abs(got.values(j) - want[static_cast<std::size_t>(j)]) < 1e-10);
    }
  }
}

TEST_CASE("layer norm statistics") {
  EncoderConfig cfg{.n_layers = 2, .d_model = 16, .n_heads = 4, .d_ff = 8,
                    .vocab_size = 20, .max_len = 10};
  const auto p = spread_params(cfg, 4);
  ForwardCache cache;
  encoder_forward(std::vector<int>{3, 5, 7, 11, 13, 2, 0, 0, 0, 0}, 6, p, cfg, &cache);
  for (const auto& L : cache.layers) {
    for (const Matrix* xhat : {&L.xhat1, &L.xhat2}) {
      for (Eigen::Index i = 0; i < xhat->rows(); ++i) {
        const auto row = xhat->row(i);
        const double mean = row.mean();
        const double var = (row.array() - mean).square().mean();
        CHECK(std::abs(mean) < 1e-6);
        CHECK(std::abs(var - 1.0) < 1e-6);
      }
    }
  }
}

TEST_CASE("forward input checks") {
  EncoderConfig cfg{.n_layers = 1, .d_model = 4, .n_heads = 1, .d_ff = 4,
                    .vocab_size = 5, .max_len = 3};
  const auto p = init_params(cfg, 1);
  CHECK_THROWS_AS(encoder_forward(std::vector<int>{1, 2, 0}, 0, p, cfg), ValidationError);
  CHECK_THROWS_AS(encoder_forward(std::vector<int>{1, 2}, 2, p, cfg), ValidationError);
  CHECK_THROWS_AS(encoder_forward(std::vector<int>{1, 9, 0}, 2, p, cfg), ValidationError);
  CHECK_THROWS_AS(encoder_forward(std::vector<int>{1, 2, 0}, 4, p, cfg), ValidationError);
}

TEST_CASE("padding invariance") {
  EncoderConfig small{.n_layers = 2, .d_model = 8, .n_heads = 2, .d_ff = 8,
                      .vocab_size = 12, .max_len = 5};
  auto large = small;
  large.max_len = 40;
  const auto p = spread_params(small, 6);
  std::vector<int> a{3, 1, 7, 0, 0};
  std::vector<int> b(40, 0);
  std::copy(a.begin(), a.begin() + 3, b.begin());
  const auto ea = encoder_forward(a, 3, p, small).values;
  const auto eb = encoder_forward(b, 3, p, large).values;
  CHECK((ea - eb).cwiseAbs().maxCoeff() <= 1e-10);

  // Whatever sits past true_len is ignored.
  std::vector<int> c{3, 1, 7, 9, 4};
  CHECK((encoder_forward(c, 3, p, small).values - ea).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("backward") {
  EncoderConfig cfg{.n_layers = 2, .d_model = 8, .n_heads = 2, .d_ff = 12,
                    .vocab_size = 9, .max_len = 6};
  const auto p = spread_params(cfg, 8);
  const std::vector<int> ids{5, 2, 7, 5, 0, 0};
  ForwardCache cache;
  encoder_forward(ids, 4, p, cfg, &cache);

  SUBCASE("zero upstream gives zero gradients") {
    auto g = EncoderParams::zeros(cfg);
    encoder_backward(cache, Vector::Zero(8), p, cfg, g);
    for (const auto& t : tensors(std::as_const(g)))
      for (double x : t.data) CHECK(x == 0.0);
  }
  SUBCASE("central differences on a two-layer config") {
    Rng rng(21);
    Vector up(8);
    for (Eigen::Index i = 0; i < 8; ++i) up(i) = uniform(rng, -1, 1);
    auto g = EncoderParams::zeros(cfg);
    encoder_backward(cache, up, p, cfg, g);
    auto q = p;
    auto views = tensors(q);
    const auto gv = tensors(std::as_const(g));
    auto loss = [&] { return encoder_forward(ids, 4, q, cfg).values.dot(up); };
    double worst = 0.0;
    for (std::size_t t = 0; t < views.size(); ++t)
      for (std::size_t i = 0; i < views[t].data.size(); ++i)
        worst = std::max(worst, oracle::relative_error(
                                    gv[t].data[i],
                                    oracle::central_difference(&views[t].data[i], 1e-5, loss)));
    CHECK(worst < 1e-4);
  }
  SUBCASE("embedding rows of absent tokens get no gradient") {
    Vector up = Vector::Ones(8);
    auto g = EncoderParams::zeros(cfg);
    encoder_backward(cache, up, p, cfg, g);
    for (int tok : {0, 1, 3, 4, 6, 8})
      CHECK(g.token_embedding.row(tok).isZero(0.0));
    CHECK_FALSE(g.token_embedding.row(5).isZero(0.0));
  }
  SUBCASE("gradients accumulate") {
    Vector up = Vector::Ones(8);
    auto once = EncoderParams::zeros(cfg);
    encoder_backward(cache, up, p, cfg, once);
    auto twice = EncoderParams::zeros(cfg);
    encoder_backward(cache, up, p, cfg, twice);
    encoder_backward(cache, up, p, cfg, twice);
    const auto a = tensors(std::as_const(once));
    const auto b = tensors(std::as_const(twice));
    for (std::size_t t = 0; t < a.size(); ++t)
      for (std::size_t i = 0; i < a[t].data.size(); ++i)
        CHECK(b[t].data[i] == doctest::Approx(2 * a[t].data[i]).epsilon(1e-12));
  }
}

TEST_CASE("init and tensors") {
  EncoderConfig cfg{.n_layers = 2, .d_model = 8, .n_heads = 2, .d_ff = 12,
                    .vocab_size = 9, .max_len = 6};
  const auto a = init_params(cfg, 5);
  const auto b = init_params(cfg, 5);
  const auto c = init_params(cfg, 6);
  const auto ta = tensors(a), tb = tensors(b), tc = tensors(c);
  CHECK(ta.size() == 1 + 2 * 12);
  CHECK(ta[0].name == "token_embedding");
  bool differs = false;
  for (std::size_t t = 0; t < ta.size(); ++t) {
    CHECK(std::equal(ta[t].data.begin(), ta[t].data.end(), tb[t].data.begin()));
    differs = differs || !std::equal(ta[t].data.begin(), ta[t].data.end(), tc[t].data.begin());
  }
  CHECK(differs);
  for (const auto& L : a.layers) {
    CHECK(L.ln1_gain.isOnes(0.0));
    CHECK(L.ln2_bias.isZero(0.0));
    CHECK(L.b1.isZero(0.0));
    CHECK(L.wq.cwiseAbs().maxCoeff() <= 0.05);
  }
  CHECK(all_finite(a));
  auto bad = a;
  bad.layers[1].w2(0, 0) = std::nan("");
  CHECK_FALSE(all_finite(bad));
}

TEST_CASE("embed_batch rows equal single forwards") {
  EncoderConfig cfg{.n_layers = 1, .d_model = 8, .n_heads = 2, .d_ff = 8,
                    .vocab_size = 9, .max_len = 5};
  const auto p = spread_params(cfg, 2);
  std::vector<EncodedText> inputs{{{3, 4, 0, 0, 0}, 2}, {{8, 8, 8, 1, 2}, 5}};
  const auto m = embed_batch(inputs, p, cfg);
  REQUIRE(m.rows() == 2);
  for (Eigen::Index i = 0; i < 2; ++i) {
    const auto& in = inputs[static_cast<std::size_t>(i)];
    CHECK(m.row(i).transpose() == encoder_forward(in.ids, in.length, p, cfg).values);
  }
}
