#include "tpdr/index.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "binary_io.hpp"
#include "tpdr/error.hpp"

namespace tpdr {

namespace {

constexpr char kMagic[9] = "TPDRIDX1";

}  // namespace

IndexSnapshot index_catalog(const Catalog& catalog,
                            const Checkpoint& checkpoint,
                            const TokenizerModel& tokenizer) {
  if (catalog.empty()) throw ValidationError("cannot index an empty catalog");
  const auto& cfg = checkpoint.config;
  IndexSnapshot snap;
  snap.embeddings.resize(static_cast<Eigen::Index>(catalog.size()),
                         static_cast<Eigen::Index>(cfg.d_model));
  for (std::size_t i = 0; i < catalog.size(); ++i) {
    const auto& rec = catalog[i];
    const auto enc = encode(tokenizer, rec.sd_text, cfg.max_len);
    if (enc.length == 0) {
      throw ValidationError("product \"" + rec.product_id +
                            "\" has no tokens");
    }
    snap.embeddings.row(static_cast<Eigen::Index>(i)) =
        encoder_forward(enc.ids, enc.length, checkpoint.product, cfg)
            .values.transpose();
    snap.product_ids.push_back(rec.product_id);
    snap.dp_labels.push_back(rec.dp_label);
  }
  snap.fingerprint = fingerprint(checkpoint);
  return snap;
}

std::vector<RankedCandidate> search(const IndexSnapshot& snapshot,
                                    const Vector& query_embedding,
                                    std::size_t k,
                                    const std::optional<std::string>& dp_filter) {
  if (k < 1) throw ValidationError("search: k must be >= 1");
  if (query_embedding.size() != snapshot.embeddings.cols()) {
    throw ValidationError("search: query dimension " +
                          std::to_string(query_embedding.size()) +
                          " does not match index dimension " +
                          std::to_string(snapshot.embeddings.cols()));
  }
  const double qnorm = query_embedding.norm();
  if (!(qnorm > 0.0) || !std::isfinite(qnorm)) {
    throw ValidationError("search: query embedding has zero norm");
  }

  std::vector<RankedCandidate> hits;
  hits.reserve(snapshot.size());
  for (std::size_t i = 0; i < snapshot.size(); ++i) {
    if (dp_filter && snapshot.dp_labels[i] != *dp_filter) continue;
    const auto row = snapshot.embeddings.row(static_cast<Eigen::Index>(i));
    const double pnorm = row.norm();
    double cos = 0.0;
    if (pnorm > 0.0) {
      cos = std::clamp(row.dot(query_embedding) / (pnorm * qnorm), -1.0, 1.0);
    }
    hits.push_back({snapshot.product_ids[i], snapshot.dp_labels[i], i, cos});
  }
  const std::size_t top = std::min(k, hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(top),
                    hits.end(), [](const auto& a, const auto& b) {
                      if (a.score != b.score) return a.score > b.score;
                      return a.product_id < b.product_id;
                    });
  hits.resize(top);
  return hits;
}

void check_fingerprint(const IndexSnapshot& snapshot,
                       const Checkpoint& checkpoint) {
  const auto fp = fingerprint(checkpoint);
  if (snapshot.fingerprint != fp) {
    throw StaleIndexError("index was built from checkpoint " +
                          snapshot.fingerprint + " but checkpoint " + fp +
                          " is in use; rebuild the index");
  }
}

Vector embed_query(const Checkpoint& checkpoint,
                   const TokenizerModel& tokenizer, const std::string& text) {
  const auto enc = encode(tokenizer, text, checkpoint.config.max_len);
  if (enc.length == 0) throw ValidationError("query has no tokens");
  return encoder_forward(enc.ids, enc.length, checkpoint.query,
                         checkpoint.config)
      .values;
}

std::vector<RankedCandidate> search(const IndexSnapshot& snapshot,
                                    const Checkpoint& checkpoint,
                                    const TokenizerModel& tokenizer,
                                    const std::string& query_text,
                                    std::size_t k,
                                    const std::optional<std::string>& dp_filter) {
  check_fingerprint(snapshot, checkpoint);
  return search(snapshot, embed_query(checkpoint, tokenizer, query_text), k,
                dp_filter);
}

void save_index(const IndexSnapshot& snapshot,
                const std::filesystem::path& path) {
  const auto n = static_cast<Eigen::Index>(snapshot.size());
  if (snapshot.embeddings.rows() != n ||
      snapshot.dp_labels.size() != snapshot.size()) {
    throw ValidationError("index snapshot: row/id/dp counts differ");
  }
  detail::BinaryWriter out(path);
  out.bytes(kMagic, 8);
  out.u64(snapshot.size());
  out.u64(static_cast<std::uint64_t>(snapshot.embeddings.cols()));
  out.string(snapshot.similarity);
  out.string(snapshot.fingerprint);
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>
      rows = snapshot.embeddings;
  out.doubles({rows.data(), static_cast<std::size_t>(rows.size())});
  for (std::size_t i = 0; i < snapshot.size(); ++i) {
    out.string(snapshot.product_ids[i]);
    out.string(snapshot.dp_labels[i]);
  }
  out.finish();
}

IndexSnapshot load_index(const std::filesystem::path& path) {
  detail::BinaryReader in(path);
  in.expect_magic(kMagic);
  const auto n = in.u64();
  const auto d = in.u64();
  IndexSnapshot snap;
  snap.similarity = in.string();
  if (snap.similarity != "cosine") {
    throw FormatError(path.string() + ": unsupported similarity \"" +
                      snap.similarity + "\"");
  }
  snap.fingerprint = in.string();
  if (d == 0 || n > in.remaining() / sizeof(double) / d) {
    throw FormatError(path.string() + ": truncated embedding block");
  }
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows(
      static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  in.doubles({rows.data(), static_cast<std::size_t>(rows.size())});
  snap.embeddings = rows;
  snap.product_ids.reserve(n);
  snap.dp_labels.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    snap.product_ids.push_back(in.string());
    snap.dp_labels.push_back(in.string());
  }
  in.expect_end();
  return snap;
}

}  // namespace tpdr
