#pragma once

#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "tpdr/catalog.hpp"
#include "tpdr/index.hpp"

namespace tpdr {

/// Lowercased maximal runs of ASCII alphanumerics (bytes >= 0x80 count as
/// alphanumeric so UTF-8 words stay whole). "500/445-1.5" -> 500 445 1 5.
std::vector<std::string> term_tokens(const std::string& text);

/// Document frequencies over a fitted corpus.
struct TfIdfModel {
  std::unordered_map<std::string, std::size_t> doc_freq;
  std::size_t n_docs = 0;
  double avg_doc_len = 0.0;  // tokens per document

  /// ln((n + 1) / (df + 1)) + 1; unseen terms use df = 0.
  double idf(const std::string& term) const;
};

TfIdfModel fit_tfidf(std::span<const std::string> corpus);

struct Bm25Params {
  double k1 = 1.0;
  double b = 0.75;
  double avg_doc_len = 1.0;

  void validate() const;
  static Bm25Params for_model(const TfIdfModel& model, double k1 = 1.0,
                              double b = 0.75);
};

enum class BigramMode { word, character };

/// s2: cosine between raw-count * idf vectors; 0 when either is empty.
double cosine_score(const TfIdfModel& model, const std::string& query,
                    const std::string& product);

/// s3: |Q & P| / |Q | P| over adjacent-token bigrams. A one-token text
/// contributes the token itself; two empty texts score 0.
double jaccard_bigram(const std::string& query, const std::string& product,
                      BigramMode mode = BigramMode::word);

/// s4: sum over query tokens (repeats included) of
/// idf * f (k1 + 1) / (f + k1 (1 - b + b |D| / avg)).
double bm25_score(const TfIdfModel& model, const Bm25Params& params,
                  const std::string& query, const std::string& product);

struct ChannelScores {
  double s1 = 0.0, s2 = 0.0, s3 = 0.0, s4 = 0.0;
  bool operator==(const ChannelScores&) const = default;
};

struct ScoredCandidate {
  std::string product_id;
  std::string dp_label;
  std::size_t row = 0;
  ChannelScores raw;
  ChannelScores normalized;
  double fused = 0.0;  // S
  std::size_t position_before = 0;  // 1-based, first stage
  std::size_t position_after = 0;   // 1-based, after fusion
};

/// Relative channel weights; S divides by their sum. Default 3:1:1:1.
struct FusionWeights {
  double semantic = 3.0;
  double cosine = 1.0;
  double jaccard = 1.0;
  double bm25 = 1.0;

  void validate() const;
};

/// S for already-normalized channels: weighted sum over the weight total,
/// clamped to [0, 1].
double fused_score(const ChannelScores& normalized,
                   const FusionWeights& weights = {});

/// Min-max normalizes each channel over the list (constant channel -> 0),
/// computes S, and sorts by S desc, normalized s1 desc, product_id asc.
std::vector<ScoredCandidate> fuse(std::vector<ScoredCandidate> candidates,
                                  const FusionWeights& weights = {});

struct RerankSettings {
  std::size_t k_candidates = 100;
  std::size_t k_final = 10;
  FusionWeights weights;
  BigramMode bigrams = BigramMode::word;
  Bm25Params bm25;

  void validate() const;
};

/// Syntactic channels for first-stage candidates, in first-stage order.
std::vector<ScoredCandidate> score_candidates(
    std::span<const RankedCandidate> first_stage, const Catalog& catalog,
    const TfIdfModel& model, const RerankSettings& settings,
    const std::string& query_text);

/// search(k_candidates) -> s2, s3, s4 -> fuse -> first k_final.
std::vector<ScoredCandidate> rerank(
    const IndexSnapshot& snapshot, const Catalog& catalog,
    const TfIdfModel& model, const RerankSettings& settings,
    const std::string& query_text, const Vector& query_embedding,
    const std::optional<std::string>& dp_filter = std::nullopt);

}  // namespace tpdr
