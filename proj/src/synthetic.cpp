#include "tpdr/synthetic.hpp"

#include <array>
#include <cstdio>
#include <set>
#include <tuple>

#include "tpdr/error.hpp"
#include "tpdr/random.hpp"

namespace tpdr {

namespace {

struct Word {
  const char* en;
  const char* pt;
};

constexpr std::array<Word, 20> kCategories{{
    {"valve", "valvula"},     {"screw", "parafuso"},
    {"paper", "papel"},       {"cable", "cabo"},
    {"glove", "luva"},        {"tube", "tubo"},
    {"hose", "mangueira"},    {"pump", "bomba"},
    {"filter", "filtro"},     {"bearing", "rolamento"},
    {"ring", "anel"},         {"nut", "porca"},
    {"washer", "arruela"},    {"bolt", "pino"},
    {"lamp", "lampada"},      {"switch", "interruptor"},
    {"tape", "fita"},         {"brush", "escova"},
    {"clamp", "abracadeira"}, {"spring", "mola"},
}};

constexpr std::array<Word, 8> kMaterials{{
    {"steel", "aco"},
    {"brass", "latao"},
    {"copper", "cobre"},
    {"plastic", "plastico"},
    {"rubber", "borracha"},
    {"aluminum", "aluminio"},
    {"nylon", "nailon"},
    {"iron", "ferro"},
}};

constexpr std::array<Word, 10> kQualifiers{{
    {"threaded", "rosqueado"},
    {"flexible", "flexivel"},
    {"industrial", "fabril"},
    {"hexagonal", "sextavado"},
    {"reinforced", "reforcado"},
    {"stainless", "inox"},
    {"heavy", "pesado"},
    {"small", "pequeno"},
    {"round", "redondo"},
    {"white", "branco"},
}};

constexpr std::array<const char*, 8> kSizes{
    "6mm", "8mm", "10mm", "12mm", "1/2in", "3/4in", "25mm", "50mm"};

constexpr std::array<const char*, 12> kModels{
    "xk-204", "ab-310", "mt-55", "zr-120", "pq-7",  "hd-900",
    "lv-31",  "sx-64",  "bt-12", "ck-88",  "rn-400", "gf-21"};

template <std::size_t N>
std::size_t pick(Rng& rng) {
  return static_cast<std::size_t>(uniform_index(rng, N));
}

}  // namespace

const std::map<std::string, std::string>& demo_lexicon() {
  static const std::map<std::string, std::string> lexicon = [] {
    std::map<std::string, std::string> m;
    for (const auto& w : kCategories) m.emplace(w.en, w.pt);
    for (const auto& w : kMaterials) m.emplace(w.en, w.pt);
    for (const auto& w : kQualifiers) m.emplace(w.en, w.pt);
    return m;
  }();
  return lexicon;
}

SyntheticCorpus generate_corpus(const SyntheticConfig& config) {
  constexpr std::size_t kCombinations = kCategories.size() * kMaterials.size() *
                                        kQualifiers.size() * kSizes.size() *
                                        kModels.size();
  if (config.n_products == 0 || config.n_products > kCombinations) {
    throw ValidationError("n_products must be in [1, " +
                          std::to_string(kCombinations) + "]");
  }
  if (config.queries_per_product == 0) {
    throw ValidationError("queries_per_product must be >= 1");
  }

  Rng rng(config.seed);
  SyntheticCorpus corpus;
  std::set<std::tuple<std::size_t, std::size_t, std::size_t, std::size_t,
                      std::size_t>>
      used;
  const int width = config.n_products < 10000 ? 4 : 6;
  while (corpus.catalog.size() < config.n_products) {
    const auto key = std::make_tuple(pick<kCategories.size()>(rng),
                                     pick<kMaterials.size()>(rng),
                                     pick<kQualifiers.size()>(rng),
                                     pick<kSizes.size()>(rng),
                                     pick<kModels.size()>(rng));
    if (!used.insert(key).second) continue;
    const auto& [c, m, q, s, mo] = key;
    char id[16];
    std::snprintf(id, sizeof id, "P%0*zu", width, corpus.catalog.size() + 1);
    std::string sd = std::string(kCategories[c].en) + " " + kMaterials[m].en +
                     " " + kQualifiers[q].en + " " + kSizes[s] + " " +
                     kModels[mo];
    corpus.catalog.push_back({id, std::move(sd), kCategories[c].en});
  }

  CorruptionConfig corruption = config.corruption;
  if (corruption.lexicon.empty()) corruption.lexicon = demo_lexicon();
  for (std::size_t k = 0; k < config.queries_per_product; ++k) {
    for (std::size_t i = 0; i < corpus.catalog.size(); ++i) {
      corruption.seed = mix_seed(config.seed, k * config.n_products + i);
      const auto& product = corpus.catalog[i];
      corpus.pairs.push_back(
          {synthesize_query(product.sd_text, corruption), product.product_id});
    }
  }
  return corpus;
}

}  // namespace tpdr
