#include "tpdr/metrics.hpp"

#include <cmath>
#include <unordered_set>

#include "tpdr/error.hpp"
#include "tpdr/index.hpp"

namespace tpdr {

using nlohmann::json;

double recall_at_k(std::span<const std::size_t> positions, std::size_t k) {
  if (k < 1) throw ValidationError("recall_at_k: k must be >= 1");
  if (positions.empty()) return 0.0;
  std::size_t hits = 0;
  for (auto p : positions) {
    if (p < 1) throw ValidationError("recall_at_k: positions are 1-based");
    if (p <= k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(positions.size());
}

double reciprocal_rank(std::optional<std::size_t> relevant_rank,
                       std::size_t k) {
  if (k < 1) throw ValidationError("reciprocal_rank: k must be >= 1");
  if (!relevant_rank || *relevant_rank < 1 || *relevant_rank > k) return 0.0;
  return 1.0 / static_cast<double>(*relevant_rank);
}

double ndcg_single_relevant(std::optional<std::size_t> relevant_rank,
                            std::size_t k) {
  if (k < 1) throw ValidationError("ndcg: k must be >= 1");
  if (!relevant_rank || *relevant_rank < 1 || *relevant_rank > k) return 0.0;
  // Ideal DCG is 1 (the single relevant item at rank 1).
  return 1.0 / std::log2(static_cast<double>(*relevant_rank) + 1.0);
}

std::optional<std::size_t> dp_rank(std::span<const std::string> dp_labels,
                                   const std::string& correct_dp) {
  std::unordered_set<std::string> seen;
  std::size_t position = 0;
  for (const auto& dp : dp_labels) {
    if (!seen.insert(dp).second) continue;
    ++position;
    if (dp == correct_dp) return position;
  }
  return std::nullopt;
}

std::optional<std::size_t> dp_rank(std::span<const RankedCandidate> ranking,
                                   const std::string& correct_dp) {
  std::vector<std::string> labels;
  labels.reserve(ranking.size());
  for (const auto& c : ranking) labels.push_back(c.dp_label);
  return dp_rank(std::span<const std::string>(labels), correct_dp);
}

RankBucket bucket_of(std::optional<std::size_t> rank) {
  if (!rank) return RankBucket::missing;
  if (*rank <= 1) return RankBucket::k1;
  if (*rank == 2) return RankBucket::k2;
  if (*rank <= 5) return RankBucket::k3to5;
  if (*rank <= 10) return RankBucket::k6to10;
  if (*rank <= 100) return RankBucket::k11to100;
  return RankBucket::over100;
}

EvalReport aggregate(std::span<const QueryResult> results) {
  EvalReport r;
  r.query_count = results.size();
  for (const auto& q : results) {
    const auto rank = q.relevant_rank;
    r.mrr_at_1 += reciprocal_rank(rank, 1);
    r.mrr_at_5 += reciprocal_rank(rank, 5);
    r.mrr_at_10 += reciprocal_rank(rank, 10);
    r.ndcg_at_1 += ndcg_single_relevant(rank, 1);
    r.ndcg_at_5 += ndcg_single_relevant(rank, 5);
    r.ndcg_at_10 += ndcg_single_relevant(rank, 10);
    r.recall_at_1 += rank && *rank <= 1 ? 1.0 : 0.0;
    r.recall_at_5 += rank && *rank <= 5 ? 1.0 : 0.0;
    r.recall_at_10 += rank && *rank <= 10 ? 1.0 : 0.0;
    r.recall_at_100 += rank && *rank <= 100 ? 1.0 : 0.0;
    r.dp_acc_at_1 += q.dp_rank && *q.dp_rank <= 1 ? 1.0 : 0.0;
    r.dp_acc_at_5 += q.dp_rank && *q.dp_rank <= 5 ? 1.0 : 0.0;
    ++r.histogram[static_cast<std::size_t>(bucket_of(rank))];
  }
  if (r.query_count > 0) {
    const auto n = static_cast<double>(r.query_count);
    for (double* m : {&r.mrr_at_1, &r.mrr_at_5, &r.mrr_at_10, &r.ndcg_at_1,
                      &r.ndcg_at_5, &r.ndcg_at_10, &r.recall_at_1,
                      &r.recall_at_5, &r.recall_at_10, &r.recall_at_100,
                      &r.dp_acc_at_1, &r.dp_acc_at_5}) {
      *m /= n;
    }
  }
  return r;
}

json report_to_json(const EvalReport& r) {
  json hist = json::object();
  for (std::size_t b = 0; b < kBucketNames.size(); ++b) {
    hist[kBucketNames[b]] = r.histogram[b];
  }
  return {{"query_count", r.query_count},
          {"mrr", {{"1", r.mrr_at_1}, {"5", r.mrr_at_5}, {"10", r.mrr_at_10}}},
          {"ndcg",
           {{"1", r.ndcg_at_1}, {"5", r.ndcg_at_5}, {"10", r.ndcg_at_10}}},
          {"recall",
           {{"1", r.recall_at_1},
            {"5", r.recall_at_5},
            {"10", r.recall_at_10},
            {"100", r.recall_at_100}}},
          {"dp_acc", {{"1", r.dp_acc_at_1}, {"5", r.dp_acc_at_5}}},
          {"histogram", hist}};
}

EvalReport report_from_json(const json& j) {
  try {
    EvalReport r;
    r.query_count = j.at("query_count").get<std::size_t>();
    r.mrr_at_1 = j.at("mrr").at("1").get<double>();
    r.mrr_at_5 = j.at("mrr").at("5").get<double>();
    r.mrr_at_10 = j.at("mrr").at("10").get<double>();
    r.ndcg_at_1 = j.at("ndcg").at("1").get<double>();
    r.ndcg_at_5 = j.at("ndcg").at("5").get<double>();
    r.ndcg_at_10 = j.at("ndcg").at("10").get<double>();
    r.recall_at_1 = j.at("recall").at("1").get<double>();
    r.recall_at_5 = j.at("recall").at("5").get<double>();
    r.recall_at_10 = j.at("recall").at("10").get<double>();
    r.recall_at_100 = j.at("recall").at("100").get<double>();
    r.dp_acc_at_1 = j.at("dp_acc").at("1").get<double>();
    r.dp_acc_at_5 = j.at("dp_acc").at("5").get<double>();
    for (std::size_t b = 0; b < kBucketNames.size(); ++b) {
      r.histogram[b] = j.at("histogram").at(kBucketNames[b]).get<std::size_t>();
    }
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("report: ") + e.what());
  }
}

json query_result_to_json(const QueryResult& r) {
  auto opt = [](std::optional<std::size_t> v) -> json {
    return v ? json(*v) : json(nullptr);
  };
  return {{"query_id", r.query_id},
          {"product_id", r.relevant_product_id},
          {"dp", r.relevant_dp},
          {"relevant_rank", opt(r.relevant_rank)},
          {"dp_rank", opt(r.dp_rank)}};
}

}  // namespace tpdr
