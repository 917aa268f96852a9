#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tpdr/catalog.hpp"
#include "tpdr/checkpoint.hpp"
#include "tpdr/index.hpp"
#include "tpdr/metrics.hpp"
#include "tpdr/rerank.hpp"
#include "tpdr/tokenizer.hpp"

namespace tpdr {

/// bm25: term engine over the whole catalog, ranked by s4.
/// semantic: first stage only, ranked by s1.
/// full: first stage re-ranked by the fused score S.
enum class PipelineVariant { bm25, semantic, full };

const char* variant_name(PipelineVariant v);
/// Throws ValidationError for anything but bm25 | semantic | full.
PipelineVariant parse_variant(const std::string& name);

/// Products with s4 > 0, by s4 desc then product_id asc. `fused` holds s4.
std::vector<ScoredCandidate> bm25_rank(
    const Catalog& catalog, const TfIdfModel& model, const Bm25Params& params,
    const std::string& query_text,
    const std::optional<std::string>& dp_filter = std::nullopt);

/// Read-only bundle of trained artifacts answering queries.
class Pipeline {
 public:
  /// Throws StaleIndexError when the index came from another checkpoint.
  Pipeline(const Catalog& catalog, const Checkpoint& checkpoint,
           const TokenizerModel& tokenizer, const IndexSnapshot& index,
           RerankSettings settings);

  /// Ranked list for one query, at most k entries (bm25 is uncapped when k
  /// is 0). For the semantic variant `fused` holds s1.
  std::vector<ScoredCandidate> run(
      const std::string& query_text, PipelineVariant variant, std::size_t k,
      const std::optional<std::string>& dp_filter = std::nullopt) const;

  const RerankSettings& settings() const { return settings_; }
  const TfIdfModel& tfidf() const { return tfidf_; }

 private:
  const Catalog& catalog_;
  const Checkpoint& checkpoint_;
  const TokenizerModel& tokenizer_;
  const IndexSnapshot& index_;
  RerankSettings settings_;
  TfIdfModel tfidf_;
};

/// Runs each query through `variant` and aggregates. semantic and full keep
/// k_candidates results; bm25 ranks the full catalog. Query ids are the
/// positions in `queries` unless `query_ids` is given.
EvalReport evaluate(const Pipeline& pipeline, const Catalog& catalog,
                    std::span<const TrainingPair> queries,
                    PipelineVariant variant,
                    std::vector<QueryResult>* details = nullptr,
                    std::span<const std::string> query_ids = {});

}  // namespace tpdr
