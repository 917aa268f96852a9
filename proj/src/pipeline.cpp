#include "tpdr/pipeline.hpp"

#include <algorithm>

#include "tpdr/error.hpp"

namespace tpdr {

namespace {

std::vector<std::string> sd_texts(const Catalog& catalog) {
  std::vector<std::string> out;
  out.reserve(catalog.size());
  for (const auto& r : catalog.records()) out.push_back(r.sd_text);
  return out;
}

}  // namespace

const char* variant_name(PipelineVariant v) {
  switch (v) {
    case PipelineVariant::bm25:
      return "bm25";
    case PipelineVariant::semantic:
      return "semantic";
    case PipelineVariant::full:
      return "full";
  }
  return "full";
}

PipelineVariant parse_variant(const std::string& name) {
  if (name == "bm25") return PipelineVariant::bm25;
  if (name == "semantic") return PipelineVariant::semantic;
  if (name == "full") return PipelineVariant::full;
  throw ValidationError("unknown pipeline variant \"" + name +
                        "\" (expected bm25, semantic or full)");
}

std::vector<ScoredCandidate> bm25_rank(
    const Catalog& catalog, const TfIdfModel& model, const Bm25Params& params,
    const std::string& query_text,
    const std::optional<std::string>& dp_filter) {
  std::vector<ScoredCandidate> out;
  for (std::size_t i = 0; i < catalog.size(); ++i) {
    const auto& rec = catalog[i];
    if (dp_filter && rec.dp_label != *dp_filter) continue;
    const double s4 = bm25_score(model, params, query_text, rec.sd_text);
    if (!(s4 > 0.0)) continue;
    ScoredCandidate c;
    c.product_id = rec.product_id;
    c.dp_label = rec.dp_label;
    c.row = i;
    c.raw.s4 = s4;
    c.fused = s4;
    out.push_back(std::move(c));
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.raw.s4 != b.raw.s4) return a.raw.s4 > b.raw.s4;
    return a.product_id < b.product_id;
  });
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].position_before = out[i].position_after = i + 1;
  }
  return out;
}

Pipeline::Pipeline(const Catalog& catalog, const Checkpoint& checkpoint,
                   const TokenizerModel& tokenizer, const IndexSnapshot& index,
                   RerankSettings settings)
    : catalog_(catalog),
      checkpoint_(checkpoint),
      tokenizer_(tokenizer),
      index_(index),
      settings_(std::move(settings)) {
  check_fingerprint(index_, checkpoint_);
  if (index_.size() != catalog_.size()) {
    throw ValidationError("index has " + std::to_string(index_.size()) +
                          " rows but the catalog has " +
                          std::to_string(catalog_.size()) + " products");
  }
  const auto texts = sd_texts(catalog_);
  tfidf_ = fit_tfidf(texts);
  settings_.bm25.avg_doc_len = tfidf_.avg_doc_len;
  settings_.validate();
}

std::vector<ScoredCandidate> Pipeline::run(
    const std::string& query_text, PipelineVariant variant, std::size_t k,
    const std::optional<std::string>& dp_filter) const {
  if (variant == PipelineVariant::bm25) {
    auto ranked = bm25_rank(catalog_, tfidf_, settings_.bm25, query_text,
                            dp_filter);
    if (k > 0 && ranked.size() > k) ranked.resize(k);
    return ranked;
  }
  if (k < 1) throw ValidationError("k must be >= 1");
  const auto embedding = embed_query(checkpoint_, tokenizer_, query_text);
  if (variant == PipelineVariant::semantic) {
    const auto hits = search(index_, embedding, k, dp_filter);
    auto out = score_candidates(hits, catalog_, tfidf_, settings_, query_text);
    for (auto& c : out) c.fused = c.raw.s1;
    return out;
  }
  auto settings = settings_;
  settings.k_final = std::min(k, settings.k_candidates);
  return rerank(index_, catalog_, tfidf_, settings, query_text, embedding,
                dp_filter);
}

EvalReport evaluate(const Pipeline& pipeline, const Catalog& catalog,
                    std::span<const TrainingPair> queries,
                    PipelineVariant variant, std::vector<QueryResult>* details,
                    std::span<const std::string> query_ids) {
  if (!query_ids.empty() && query_ids.size() != queries.size()) {
    throw ValidationError("evaluate: query id count differs from query count");
  }
  const std::size_t k = variant == PipelineVariant::bm25
                            ? 0
                            : pipeline.settings().k_candidates;
  std::vector<QueryResult> results;
  results.reserve(queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const auto& q = queries[i];
    const auto& relevant = catalog.at(q.product_id);
    const auto ranking = pipeline.run(q.query_text, variant, k);

    QueryResult r;
    r.query_id = query_ids.empty() ? std::to_string(i) : query_ids[i];
    r.relevant_product_id = relevant.product_id;
    r.relevant_dp = relevant.dp_label;
    std::vector<std::string> dps;
    dps.reserve(ranking.size());
    for (std::size_t pos = 0; pos < ranking.size(); ++pos) {
      dps.push_back(ranking[pos].dp_label);
      if (!r.relevant_rank && ranking[pos].product_id == relevant.product_id) {
        r.relevant_rank = pos + 1;
      }
    }
    r.dp_rank = dp_rank(std::span<const std::string>(dps), relevant.dp_label);
    results.push_back(std::move(r));
  }
  auto report = aggregate(results);
  if (details != nullptr) *details = std::move(results);
  return report;
}

}  // namespace tpdr
