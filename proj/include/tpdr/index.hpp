#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tpdr/catalog.hpp"
#include "tpdr/checkpoint.hpp"
#include "tpdr/encoder.hpp"
#include "tpdr/tokenizer.hpp"

namespace tpdr {

/// One first-stage hit. `row` is the product's row in the snapshot.
struct RankedCandidate {
  std::string product_id;
  std::string dp_label;
  std::size_t row = 0;
  double score = 0.0;  // s1: cosine similarity

  bool operator==(const RankedCandidate&) const = default;
};

/// Product-tower embeddings of a catalog, in catalog order.
struct IndexSnapshot {
  Matrix embeddings;  // n_products x d_model
  std::vector<std::string> product_ids;
  std::vector<std::string> dp_labels;
  std::string fingerprint;  // of the checkpoint that produced the rows
  std::string similarity = "cosine";

  std::size_t size() const { return product_ids.size(); }
  bool operator==(const IndexSnapshot&) const = default;
};

/// Encodes every SD with the product tower.
IndexSnapshot index_catalog(const Catalog& catalog,
                            const Checkpoint& checkpoint,
                            const TokenizerModel& tokenizer);

/// Exact top-k by cosine over every row, score descending, ties by
/// product_id ascending. k is capped at the number of eligible rows.
/// `dp_filter` restricts candidates to one DP label.
std::vector<RankedCandidate> search(const IndexSnapshot& snapshot,
                                    const Vector& query_embedding,
                                    std::size_t k,
                                    const std::optional<std::string>& dp_filter =
                                        std::nullopt);

/// Throws StaleIndexError unless the snapshot was built from `checkpoint`.
void check_fingerprint(const IndexSnapshot& snapshot,
                       const Checkpoint& checkpoint);

/// Query-tower embedding of a text. Throws ValidationError when the text
/// has no tokens.
Vector embed_query(const Checkpoint& checkpoint,
                   const TokenizerModel& tokenizer, const std::string& text);

/// Fingerprint check, query encoding and search in one call.
std::vector<RankedCandidate> search(const IndexSnapshot& snapshot,
                                    const Checkpoint& checkpoint,
                                    const TokenizerModel& tokenizer,
                                    const std::string& query_text,
                                    std::size_t k,
                                    const std::optional<std::string>& dp_filter =
                                        std::nullopt);

/// Binary: "TPDRIDX1", n, d, similarity, fingerprint, n*d row-major
/// doubles, then n (product_id, dp_label) string pairs.
void save_index(const IndexSnapshot& snapshot,
                const std::filesystem::path& path);
IndexSnapshot load_index(const std::filesystem::path& path);

}  // namespace tpdr
