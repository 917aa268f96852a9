#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

namespace tpdr {

/// A standardized description (SD) together with its Description Pattern
/// (DP) class label.
struct ProductRecord {
  std::string product_id;
  std::string sd_text;
  std::string dp_label;

  bool operator==(const ProductRecord&) const = default;
};

/// An initial specification (IS) written by a client and the single product
/// that answers it.
struct TrainingPair {
  std::string query_text;
  std::string product_id;

  bool operator==(const TrainingPair&) const = default;
};

struct DatasetSplit {
  std::vector<TrainingPair> train;
  std::vector<TrainingPair> validation;
  std::vector<TrainingPair> test;
  // Positions in the original pairs list, parallel to the vectors above.
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> validation_indices;
  std::vector<std::size_t> test_indices;
  std::uint64_t seed = 0;
};

/// Noise model applied to an SD to emulate a client's IS.
struct CorruptionConfig {
  double abbreviation_rate = 0.0;
  double token_drop_rate = 0.0;
  double typo_rate = 0.0;
  double lexicon_swap_rate = 0.0;
  std::map<std::string, std::string> lexicon;
  std::uint64_t seed = 0;
  // Tokens containing a digit (sizes, model numbers) pass through untouched.
  bool preserve_numeric_tokens = false;
};

/// Catalog with id lookup. Keeps file order.
class Catalog {
 public:
  Catalog() = default;
  explicit Catalog(std::vector<ProductRecord> records);

  const std::vector<ProductRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  const ProductRecord& operator[](std::size_t i) const { return records_[i]; }

  bool contains(const std::string& id) const { return by_id_.contains(id); }
  /// Position of a product; throws ValidationError when absent.
  std::size_t position(const std::string& id) const;
  const ProductRecord& at(const std::string& id) const {
    return records_[position(id)];
  }

 private:
  std::vector<ProductRecord> records_;
  std::unordered_map<std::string, std::size_t> by_id_;
};

// JSONL catalog: {"id": str, "sd": str, "dp": str} per line.
std::vector<ProductRecord> load_catalog(const std::filesystem::path& path);
void save_catalog(const std::vector<ProductRecord>& records,
                  const std::filesystem::path& path);

// JSONL pairs: {"query": str, "product_id": str} per line.
std::vector<TrainingPair> load_pairs(const std::filesystem::path& path,
                                     const Catalog& catalog);
void save_pairs(const std::vector<TrainingPair>& pairs,
                const std::filesystem::path& path);

/// Seeded 80/10/10 shuffle-split; remainder goes to train. Needs >= 10 pairs.
DatasetSplit split_dataset(const std::vector<TrainingPair>& pairs,
                           std::uint64_t seed);

/// Split manifest JSON: {"seed", "train", "validation", "test"} (indices).
void save_split_manifest(const DatasetSplit& split,
                         const std::filesystem::path& path);
DatasetSplit load_split_manifest(const std::filesystem::path& path,
                                 const std::vector<TrainingPair>& pairs);

/// Applies, per token: lexicon swap -> abbreviation -> typo -> drop.
/// At least one token always survives.
std::string synthesize_query(const std::string& sd_text,
                             const CorruptionConfig& config);

/// Whitespace split.
std::vector<std::string> split_whitespace(const std::string& text);

}  // namespace tpdr
