#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tpdr/catalog.hpp"

namespace tpdr {

/// Seeded generator for desk-scale product matching corpora. Product
/// descriptions combine a category noun (also the DP label), a material, a
/// qualifier, a size and a model code; queries are corrupted copies.
struct SyntheticConfig {
  std::size_t n_products = 500;
  std::size_t queries_per_product = 2;
  std::uint64_t seed = 13;
  // Lexicon is filled from demo_lexicon() when left empty.
  CorruptionConfig corruption{.abbreviation_rate = 0.05,
                              .token_drop_rate = 0.1,
                              .typo_rate = 0.03,
                              .lexicon_swap_rate = 0.9,
                              .lexicon = {},
                              .seed = 0,
                              .preserve_numeric_tokens = true};
};

struct SyntheticCorpus {
  std::vector<ProductRecord> catalog;
  std::vector<TrainingPair> pairs;
};

/// English -> Portuguese aliases for every descriptive word the generator
/// emits.
const std::map<std::string, std::string>& demo_lexicon();

SyntheticCorpus generate_corpus(const SyntheticConfig& config);

}  // namespace tpdr
