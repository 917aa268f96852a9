#include "tpdr/rerank.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "tpdr/error.hpp"

namespace tpdr {

namespace {

bool is_term_char(unsigned char c) {
  return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') ||
         (c >= 'A' && c <= 'Z') || c >= 0x80;
}

std::map<std::string, std::size_t> term_counts(
    const std::vector<std::string>& tokens) {
  std::map<std::string, std::size_t> counts;
  for (const auto& t : tokens) ++counts[t];
  return counts;
}

std::set<std::string> bigram_set(const std::string& text, BigramMode mode) {
  const auto tokens = term_tokens(text);
  std::set<std::string> out;
  if (mode == BigramMode::word) {
    if (tokens.size() == 1) out.insert(tokens.front());
    for (std::size_t i = 0; i + 1 < tokens.size(); ++i) {
      out.insert(tokens[i] + " " + tokens[i + 1]);
    }
    return out;
  }
  std::string joined;
  for (const auto& t : tokens) {
    if (!joined.empty()) joined += ' ';
    joined += t;
  }
  if (joined.size() == 1) out.insert(joined);
  for (std::size_t i = 0; i + 1 < joined.size(); ++i) {
    out.insert(joined.substr(i, 2));
  }
  return out;
}

void minmax_normalize(std::vector<ScoredCandidate>& c,
                      double ChannelScores::*channel) {
  double lo = c.front().raw.*channel;
  double hi = lo;
  for (const auto& x : c) {
    lo = std::min(lo, x.raw.*channel);
    hi = std::max(hi, x.raw.*channel);
  }
  for (auto& x : c) {
    x.normalized.*channel = hi > lo ? (x.raw.*channel - lo) / (hi - lo) : 0.0;
  }
}

}  // namespace

std::vector<std::string> term_tokens(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (is_term_char(c)) {
      cur += (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : ch;
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

double TfIdfModel::idf(const std::string& term) const {
  auto it = doc_freq.find(term);
  const double df = it == doc_freq.end() ? 0.0 : static_cast<double>(it->second);
  return std::log((static_cast<double>(n_docs) + 1.0) / (df + 1.0)) + 1.0;
}

TfIdfModel fit_tfidf(std::span<const std::string> corpus) {
  if (corpus.empty()) throw ValidationError("fit_tfidf: empty corpus");
  TfIdfModel m;
  m.n_docs = corpus.size();
  std::size_t total_len = 0;
  for (const auto& doc : corpus) {
    const auto tokens = term_tokens(doc);
    total_len += tokens.size();
    for (const auto& [term, count] : term_counts(tokens)) ++m.doc_freq[term];
  }
  m.avg_doc_len = static_cast<double>(total_len) / static_cast<double>(m.n_docs);
  return m;
}

void Bm25Params::validate() const {
  if (!(k1 >= 0.0)) throw ValidationError("bm25: k1 must be >= 0");
  if (!(b >= 0.0 && b <= 1.0)) throw ValidationError("bm25: b must be in [0, 1]");
  if (!(avg_doc_len > 0.0)) {
    throw ValidationError("bm25: average document length must be > 0");
  }
}

Bm25Params Bm25Params::for_model(const TfIdfModel& model, double k1, double b) {
  Bm25Params p{k1, b, model.avg_doc_len};
  p.validate();
  return p;
}

double cosine_score(const TfIdfModel& model, const std::string& query,
                    const std::string& product) {
  const auto q = term_counts(term_tokens(query));
  const auto p = term_counts(term_tokens(product));
  if (q.empty() || p.empty()) return 0.0;
  double dot = 0.0, qq = 0.0, pp = 0.0;
  for (const auto& [term, count] : q) {
    const double w = static_cast<double>(count) * model.idf(term);
    qq += w * w;
    auto it = p.find(term);
    if (it != p.end()) dot += w * static_cast<double>(it->second) * model.idf(term);
  }
  for (const auto& [term, count] : p) {
    const double w = static_cast<double>(count) * model.idf(term);
    pp += w * w;
  }
  return std::clamp(dot / std::sqrt(qq * pp), 0.0, 1.0);
}

double jaccard_bigram(const std::string& query, const std::string& product,
                      BigramMode mode) {
  const auto q = bigram_set(query, mode);
  const auto p = bigram_set(product, mode);
  if (q.empty() && p.empty()) return 0.0;
  std::size_t shared = 0;
  for (const auto& g : q) shared += p.count(g);
  const std::size_t uni = q.size() + p.size() - shared;
  return static_cast<double>(shared) / static_cast<double>(uni);
}

double bm25_score(const TfIdfModel& model, const Bm25Params& params,
                  const std::string& query, const std::string& product) {
  params.validate();
  const auto doc_tokens = term_tokens(product);
  const auto doc = term_counts(doc_tokens);
  const double len_norm =
      params.k1 * (1.0 - params.b +
                   params.b * static_cast<double>(doc_tokens.size()) /
                       params.avg_doc_len);
  double score = 0.0;
  for (const auto& term : term_tokens(query)) {
    auto it = doc.find(term);
    if (it == doc.end()) continue;
    const double f = static_cast<double>(it->second);
    score += model.idf(term) * f * (params.k1 + 1.0) / (f + len_norm);
  }
  return score;
}

void FusionWeights::validate() const {
  for (double w : {semantic, cosine, jaccard, bm25}) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw ValidationError("fusion weights must be finite and >= 0");
    }
  }
  if (!(semantic + cosine + jaccard + bm25 > 0.0)) {
    throw ValidationError("fusion weights must not all be zero");
  }
}

double fused_score(const ChannelScores& n, const FusionWeights& w) {
  const double total = w.semantic + w.cosine + w.jaccard + w.bm25;
  const double s =
      (w.semantic * n.s1 + w.cosine * n.s2 + w.jaccard * n.s3 + w.bm25 * n.s4) /
      total;
  return std::clamp(s, 0.0, 1.0);
}

std::vector<ScoredCandidate> fuse(std::vector<ScoredCandidate> candidates,
                                  const FusionWeights& w) {
  w.validate();
  if (candidates.empty()) return candidates;
  minmax_normalize(candidates, &ChannelScores::s1);
  minmax_normalize(candidates, &ChannelScores::s2);
  minmax_normalize(candidates, &ChannelScores::s3);
  minmax_normalize(candidates, &ChannelScores::s4);
  for (auto& c : candidates) c.fused = fused_score(c.normalized, w);
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const auto& a, const auto& b) {
                     if (a.fused != b.fused) return a.fused > b.fused;
                     if (a.normalized.s1 != b.normalized.s1) {
                       return a.normalized.s1 > b.normalized.s1;
                     }
                     return a.product_id < b.product_id;
                   });
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    candidates[i].position_after = i + 1;
  }
  return candidates;
}

void RerankSettings::validate() const {
  if (k_candidates < 1 || k_final < 1) {
    throw ValidationError("k_candidates and k_final must be >= 1");
  }
  if (k_final > k_candidates) {
    throw ValidationError("k_final (" + std::to_string(k_final) +
                          ") must not exceed k_candidates (" +
                          std::to_string(k_candidates) + ")");
  }
  weights.validate();
  bm25.validate();
}

std::vector<ScoredCandidate> score_candidates(
    std::span<const RankedCandidate> first_stage, const Catalog& catalog,
    const TfIdfModel& model, const RerankSettings& settings,
    const std::string& query_text) {
  std::vector<ScoredCandidate> out;
  out.reserve(first_stage.size());
  for (std::size_t i = 0; i < first_stage.size(); ++i) {
    const auto& hit = first_stage[i];
    const auto& sd = catalog.at(hit.product_id).sd_text;
    ScoredCandidate c;
    c.product_id = hit.product_id;
    c.dp_label = hit.dp_label;
    c.row = hit.row;
    c.raw = {hit.score, cosine_score(model, query_text, sd),
             jaccard_bigram(query_text, sd, settings.bigrams),
             bm25_score(model, settings.bm25, query_text, sd)};
    c.position_before = i + 1;
    c.position_after = i + 1;
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<ScoredCandidate> rerank(
    const IndexSnapshot& snapshot, const Catalog& catalog,
    const TfIdfModel& model, const RerankSettings& settings,
    const std::string& query_text, const Vector& query_embedding,
    const std::optional<std::string>& dp_filter) {
  settings.validate();
  const auto first =
      search(snapshot, query_embedding, settings.k_candidates, dp_filter);
  auto fused = fuse(score_candidates(first, catalog, model, settings, query_text),
                    settings.weights);
  if (fused.size() > settings.k_final) fused.resize(settings.k_final);
  return fused;
}

}  // namespace tpdr
