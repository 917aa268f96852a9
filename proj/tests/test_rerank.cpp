#include <cmath>
#include <set>

#include "doctest.h"
#include "oracles.hpp"
#include "tpdr/error.hpp"
#include "tpdr/random.hpp"
#include "tpdr/rerank.hpp"

using namespace tpdr;

namespace {

const std::vector<std::string> kDocs{"brass ring 3/16", "steel ring",
                                     "ring brass washer",
                                     "copper tube 3/16 flexible"};

ScoredCandidate cand(const std::string& id, ChannelScores raw) {
  ScoredCandidate c;
  c.product_id = id;
  c.raw = raw;
  return c;
}

}  // namespace

TEST_CASE("term_tokens splits on punctuation") {
  CHECK(term_tokens("500/445-1.5") == std::vector<std::string>{"500", "445", "1", "5"});
  CHECK(term_tokens("  Brass RING  ") == std::vector<std::string>{"brass", "ring"});
  CHECK(term_tokens("--").empty());
  CHECK(term_tokens("latão 3mm") == std::vector<std::string>{"latão", "3mm"});
}

TEST_CASE("idf anchors") {
  const auto m = fit_tfidf(kDocs);
  CHECK(m.n_docs == 4);
  CHECK(m.avg_doc_len == doctest::Approx(3.5));  // "3/16" is two terms
  // "ring" is in three of four docs, an unseen term in none.
  CHECK(m.idf("ring") == doctest::Approx(std::log(5.0 / 4.0) + 1.0).epsilon(1e-15));
  CHECK(m.idf("zzz") == doctest::Approx(std::log(5.0) + 1.0).epsilon(1e-15));
  const std::vector<std::string> all{"x a", "x b", "x"};
  CHECK(fit_tfidf(all).idf("x") == 1.0);
}

TEST_CASE("cosine channel") {
  const auto m = fit_tfidf(kDocs);
  CHECK(cosine_score(m, "brass ring", "ring brass") == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(cosine_score(m, "brass", "steel tube") == 0.0);
  CHECK(cosine_score(m, "", "steel") == 0.0);
  CHECK(cosine_score(m, "--", "") == 0.0);
}

TEST_CASE("jaccard channel") {
  CHECK(jaccard_bigram("a b c", "a b d") == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(jaccard_bigram("a b", "a b") == 1.0);
  CHECK(jaccard_bigram("ring", "ring") == 1.0);
  CHECK(jaccard_bigram("ring", "brass ring") == 0.0);
  CHECK(jaccard_bigram("", "") == 0.0);
  // Character bigrams of ring: {ri, in, ng}.
  CHECK(jaccard_bigram("ring", "rigs", BigramMode::character) == doctest::Approx(1.0 / 5.0));
  CHECK(jaccard_bigram("ring", "rins", BigramMode::character) == doctest::Approx(2.0 / 4.0));
}

TEST_CASE("bm25 channel") {
  const auto m = fit_tfidf(kDocs);
  const auto p = Bm25Params::for_model(m);
  CHECK(p.avg_doc_len == doctest::Approx(3.5));
  CHECK(bm25_score(m, p, "pump", "brass ring 3/16") == 0.0);
  const double w = 2.0 / (1.0 + 0.25 + 0.75 * 3.0 / 3.5);
  CHECK(bm25_score(m, p, "steel", "brass ring steel") ==
        doctest::Approx(m.idf("steel") * w).epsilon(1e-14));
  // Repeated query tokens count twice.
  CHECK(bm25_score(m, p, "steel steel", "brass ring steel") ==
        doctest::Approx(2 * m.idf("steel") * w).epsilon(1e-14));
  // Document of average length, f = 1: the term weight is exactly idf.
  const auto q = Bm25Params{.avg_doc_len = 3.0};
  CHECK(bm25_score(m, q, "steel", "brass ring steel") == doctest::Approx(m.idf("steel")).epsilon(1e-15));
  CHECK_THROWS_AS((Bm25Params{.k1 = -1}.validate()), ValidationError);
  CHECK_THROWS_AS((Bm25Params{.b = 2}.validate()), ValidationError);
  CHECK_THROWS_AS((Bm25Params{.avg_doc_len = 0}.validate()), ValidationError);
}

TEST_CASE("channels match the oracles on random corpora") {
  const std::vector<std::string> words{"ring", "brass", "3/16", "tube",
                                       "steel", "12mm", "valve", "a"};
  Rng rng(17);
  auto text = [&](std::size_t max_words) {
    std::string s;
    const auto n = 1 + uniform_index(rng, max_words);
    for (std::size_t i = 0; i < n; ++i) s += words[uniform_index(rng, words.size())] + " ";
    return s;
  };
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::string> docs;
    for (int i = 0; i < 8; ++i) docs.push_back(text(6));
    const auto m = fit_tfidf(docs);
    const auto p = Bm25Params::for_model(m);
    const auto om = oracle::toy_idf(docs);
    for (int q = 0; q < 10; ++q) {
      const auto query = text(4);
      for (const auto& d : docs) {
        CHECK(std::abs(cosine_score(m, query, d) - oracle::tfidf_cosine(om, query, d)) <= 1e-9);
        CHECK(std::abs(jaccard_bigram(query, d) - oracle::bigram_jaccard(query, d)) <= 1e-9);
        CHECK(std::abs(bm25_score(m, p, query, d) - oracle::bm25(om, query, d)) <= 1e-9);
      }
    }
  }
}

TEST_CASE("fusion") {
  CHECK(fused_score({1, 1, 1, 1}) == 1.0);
  CHECK(fused_score({1, 0, 0, 0}) == 0.5);
  CHECK(fused_score({0, 1, 1, 1}) == 0.5);
  CHECK(fused_score({1, 0, 0, 0}, {1, 1, 1, 1}) == 0.25);
  CHECK_THROWS_AS((FusionWeights{0, 0, 0, 0}.validate()), ValidationError);
  CHECK_THROWS_AS((FusionWeights{-1, 1, 1, 1}.validate()), ValidationError);

  SUBCASE("min-max per channel, constant channel is 0") {
    const auto out = fuse({cand("A", {0.9, 0.2, 0.5, 3}), cand("B", {0.5, 0.4, 0.5, 1}),
                           cand("C", {0.7, 0.3, 0.5, 2})});
    REQUIRE(out.size() == 3);
    CHECK(out[0].product_id == "A");
    CHECK(out[0].normalized == ChannelScores{1, 0, 0, 1});
    CHECK(out[0].fused == doctest::Approx(4.0 / 6.0));
    for (const auto& c : out) CHECK(c.normalized.s3 == 0.0);
    const auto& c = out[1].product_id == "C" ? out[1] : out[2];
    CHECK(c.normalized.s1 == doctest::Approx(0.5));
    CHECK(c.normalized.s2 == doctest::Approx(0.5));
  }
  SUBCASE("ties fall back to s1 then id") {
    auto out = fuse({cand("B", {0.5, 0, 0, 0}), cand("A", {0.5, 0, 0, 0})});
    CHECK(out[0].product_id == "A");
    CHECK(out[0].position_after == 1);
    CHECK(out[1].position_after == 2);
  }
  SUBCASE("single candidate") {
    const auto out = fuse({cand("A", {0.3, 0.1, 0.2, 0.4})});
    REQUIRE(out.size() == 1);
    CHECK(out[0].fused == 0.0);
  }
}

TEST_CASE("rerank settings") {
  CHECK_NOTHROW(RerankSettings{}.validate());
  CHECK_THROWS_AS((RerankSettings{.k_candidates = 0}.validate()), ValidationError);
  CHECK_THROWS_AS((RerankSettings{.k_candidates = 5, .k_final = 6}.validate()),
                  ValidationError);
}

TEST_CASE("rerank over an index") {
  std::vector<ProductRecord> recs{{"P1", "brass ring 3/16", "ring"},
                                  {"P2", "steel ring 3/16 xk-9", "ring"},
                                  {"P3", "ring brass washer", "washer"},
                                  {"P4", "copper tube 3/16 flexible", "tube"}};
  const Catalog catalog(recs);
  IndexSnapshot ix;
  // P1 is semantically closest to the query vector; P2 shares the rare code.
  ix.embeddings = Matrix{{1, 0}, {0.8, 0.6}, {0.6, 0.8}, {0, 1}};
  for (const auto& r : recs) {
    ix.product_ids.push_back(r.product_id);
    ix.dp_labels.push_back(r.dp_label);
  }
  std::vector<std::string> sds;
  for (const auto& r : recs) sds.push_back(r.sd_text);
  const auto model = fit_tfidf(sds);
  RerankSettings st{.k_candidates = 4, .k_final = 4};
  st.bm25 = Bm25Params::for_model(model);
  const Vector q{{1.0, 0.0}};

  SUBCASE("rare model token lifts its product") {
    const auto out = rerank(ix, catalog, model, st, "steel ring xk-9", q);
    REQUIRE(out.size() == 4);
    CHECK(out[0].product_id == "P2");
    CHECK(out[0].position_before == 2);
    CHECK(out[0].position_after == 1);
  }
  SUBCASE("k_final == k_candidates keeps the candidate set") {
    const auto out = rerank(ix, catalog, model, st, "copper", q);
    std::set<std::string> ids;
    for (const auto& c : out) ids.insert(c.product_id);
    CHECK(ids.size() == 4);
  }
  SUBCASE("one candidate is the first stage top hit") {
    st.k_candidates = 1;
    st.k_final = 1;
    const auto out = rerank(ix, catalog, model, st, "copper tube", q);
    REQUIRE(out.size() == 1);
    CHECK(out[0].product_id == "P1");
    CHECK(out[0].raw.s1 == doctest::Approx(1.0));
  }
  SUBCASE("k_final truncates") {
    st.k_final = 2;
    CHECK(rerank(ix, catalog, model, st, "brass", q).size() == 2);
  }
}
