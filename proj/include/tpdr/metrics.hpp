#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace tpdr {

struct RankedCandidate;

/// Fraction of 1-based positions that are <= k. Throws ValidationError for
/// k < 1 or a position of 0.
double recall_at_k(std::span<const std::size_t> positions, std::size_t k);

/// 1/rank when rank <= k, else 0. An absent rank scores 0.
double reciprocal_rank(std::optional<std::size_t> relevant_rank, std::size_t k);

/// Single relevant item with gain 1: 1/log2(rank + 1) when rank <= k.
double ndcg_single_relevant(std::optional<std::size_t> relevant_rank,
                            std::size_t k);

/// Position of `correct_dp` in the ranking after keeping only the first
/// product of each DP.
std::optional<std::size_t> dp_rank(std::span<const RankedCandidate> ranking,
                                   const std::string& correct_dp);
std::optional<std::size_t> dp_rank(std::span<const std::string> dp_labels,
                                   const std::string& correct_dp);

struct QueryResult {
  std::string query_id;
  std::string relevant_product_id;
  std::string relevant_dp;
  std::optional<std::size_t> relevant_rank;
  std::optional<std::size_t> dp_rank;
};

/// Buckets of the relevant product's position.
enum class RankBucket { k1, k2, k3to5, k6to10, k11to100, over100, missing };
inline constexpr std::array<const char*, 7> kBucketNames{
    "1", "2", "3-5", "6-10", "11-100", ">100", "not_retrieved"};
RankBucket bucket_of(std::optional<std::size_t> rank);

struct EvalReport {
  std::size_t query_count = 0;
  double mrr_at_1 = 0, mrr_at_5 = 0, mrr_at_10 = 0;
  double ndcg_at_1 = 0, ndcg_at_5 = 0, ndcg_at_10 = 0;
  double recall_at_1 = 0, recall_at_5 = 0, recall_at_10 = 0,
         recall_at_100 = 0;
  double dp_acc_at_1 = 0, dp_acc_at_5 = 0;
  std::array<std::size_t, 7> histogram{};

  bool operator==(const EvalReport&) const = default;
};

/// Arithmetic means over queries, accumulated in input order.
EvalReport aggregate(std::span<const QueryResult> results);

nlohmann::json report_to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);
nlohmann::json query_result_to_json(const QueryResult& r);

}  // namespace tpdr
