#include "tpdr/catalog.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "tpdr/error.hpp"
#include "tpdr/random.hpp"

namespace tpdr {

using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
  const auto* ws = " \t\r\n\f\v";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

std::string required_string(const json& obj, const char* key,
                            const std::filesystem::path& path,
                            std::size_t line_no) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string()) {
    throw FormatError(path.string() + ":" + std::to_string(line_no) +
                      ": missing string field \"" + key + "\"");
  }
  return it->get<std::string>();
}

// Calls fn(parsed_object, line_no) for every non-blank line.
template <typename Fn>
void for_each_jsonl(const std::filesystem::path& path, Fn&& fn) {
  auto in = open_input(path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) +
                        ": parse error: " + e.what());
    }
    if (!obj.is_object()) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) +
                        ": expected a JSON object");
    }
    fn(obj, line_no);
  }
}

std::vector<std::size_t> indices_from(const json& arr, std::size_t n,
                                      const char* key) {
  if (!arr.is_array()) {
    throw FormatError(std::string("split manifest: \"") + key +
                      "\" must be an array");
  }
  std::vector<std::size_t> out;
  out.reserve(arr.size());
  for (const auto& v : arr) {
    if (!v.is_number_unsigned() || v.get<std::size_t>() >= n) {
      throw FormatError(std::string("split manifest: bad index in \"") + key +
                        "\"");
    }
    out.push_back(v.get<std::size_t>());
  }
  return out;
}

// Byte offsets of UTF-8 code point starts, plus the end offset.
std::vector<std::size_t> codepoint_offsets(const std::string& s) {
  std::vector<std::size_t> offs;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if ((static_cast<unsigned char>(s[i]) & 0xC0) != 0x80) offs.push_back(i);
  }
  offs.push_back(s.size());
  return offs;
}

bool has_digit(const std::string& s) {
  return std::any_of(s.begin(), s.end(), [](unsigned char c) {
    return std::isdigit(c) != 0;
  });
}

void check_rate(double r, const char* name) {
  if (!(r >= 0.0 && r <= 1.0)) {
    throw ValidationError(std::string(name) + " must be in [0, 1]");
  }
}

}  // namespace

Catalog::Catalog(std::vector<ProductRecord> records)
    : records_(std::move(records)) {
  by_id_.reserve(records_.size());
  for (std::size_t i = 0; i < records_.size(); ++i) {
    if (!by_id_.emplace(records_[i].product_id, i).second) {
      throw ValidationError("duplicate product id \"" +
                            records_[i].product_id + "\"");
    }
  }
}

std::size_t Catalog::position(const std::string& id) const {
  auto it = by_id_.find(id);
  if (it == by_id_.end()) {
    throw ValidationError("unknown product id \"" + id + "\"");
  }
  return it->second;
}

std::vector<ProductRecord> load_catalog(const std::filesystem::path& path) {
  std::vector<ProductRecord> records;
  std::unordered_map<std::string, std::size_t> seen;
  for_each_jsonl(path, [&](const json& obj, std::size_t line_no) {
    ProductRecord r{required_string(obj, "id", path, line_no),
                    required_string(obj, "sd", path, line_no),
                    required_string(obj, "dp", path, line_no)};
    const auto where = path.string() + ":" + std::to_string(line_no);
    if (r.product_id.empty()) throw FormatError(where + ": empty id");
    if (trim(r.sd_text).empty()) throw FormatError(where + ": empty sd");
    if (r.dp_label.empty()) throw FormatError(where + ": empty dp");
    auto [it, inserted] = seen.emplace(r.product_id, line_no);
    if (!inserted) {
      throw ValidationError(where + ": duplicate product id \"" +
                            r.product_id + "\" (first seen on line " +
                            std::to_string(it->second) + ")");
    }
    records.push_back(std::move(r));
  });
  return records;
}

void save_catalog(const std::vector<ProductRecord>& records,
                  const std::filesystem::path& path) {
  auto out = open_output(path);
  for (const auto& r : records) {
    out << json{{"id", r.product_id}, {"sd", r.sd_text}, {"dp", r.dp_label}}
               .dump()
        << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<TrainingPair> load_pairs(const std::filesystem::path& path,
                                     const Catalog& catalog) {
  std::vector<TrainingPair> pairs;
  for_each_jsonl(path, [&](const json& obj, std::size_t line_no) {
    TrainingPair p{required_string(obj, "query", path, line_no),
                   required_string(obj, "product_id", path, line_no)};
    const auto where = path.string() + ":" + std::to_string(line_no);
    if (trim(p.query_text).empty()) throw FormatError(where + ": empty query");
    if (!catalog.contains(p.product_id)) {
      throw ValidationError(where + ": product id \"" + p.product_id +
                            "\" not found in catalog");
    }
    pairs.push_back(std::move(p));
  });
  return pairs;
}

void save_pairs(const std::vector<TrainingPair>& pairs,
                const std::filesystem::path& path) {
  auto out = open_output(path);
  for (const auto& p : pairs) {
    out << json{{"query", p.query_text}, {"product_id", p.product_id}}.dump()
        << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

DatasetSplit split_dataset(const std::vector<TrainingPair>& pairs,
                           std::uint64_t seed) {
  const std::size_t n = pairs.size();
  if (n < 10) {
    throw ValidationError("split needs at least 10 pairs, got " +
                          std::to_string(n));
  }
  // Validation and test take round(n/10) each; the rest goes to train.
  const std::size_t n_eval = (n + 5) / 10;
  const std::size_t n_train = n - 2 * n_eval;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  shuffle(order.begin(), order.end(), rng);

  DatasetSplit split;
  split.seed = seed;
  split.train_indices.assign(order.begin(), order.begin() + n_train);
  split.validation_indices.assign(order.begin() + n_train,
                                  order.begin() + n_train + n_eval);
  split.test_indices.assign(order.begin() + n_train + n_eval, order.end());
  for (auto i : split.train_indices) split.train.push_back(pairs[i]);
  for (auto i : split.validation_indices) split.validation.push_back(pairs[i]);
  for (auto i : split.test_indices) split.test.push_back(pairs[i]);
  return split;
}

void save_split_manifest(const DatasetSplit& split,
                         const std::filesystem::path& path) {
  json j{{"seed", split.seed},
         {"train", split.train_indices},
         {"validation", split.validation_indices},
         {"test", split.test_indices}};
  auto out = open_output(path);
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

DatasetSplit load_split_manifest(const std::filesystem::path& path,
                                 const std::vector<TrainingPair>& pairs) {
  auto in = open_input(path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  if (!j.is_object() || !j.contains("seed") || !j.contains("train") ||
      !j.contains("validation") || !j.contains("test")) {
    throw FormatError(path.string() + ": not a split manifest");
  }
  DatasetSplit split;
  split.seed = j.at("seed").get<std::uint64_t>();
  split.train_indices = indices_from(j.at("train"), pairs.size(), "train");
  split.validation_indices =
      indices_from(j.at("validation"), pairs.size(), "validation");
  split.test_indices = indices_from(j.at("test"), pairs.size(), "test");
  for (auto i : split.train_indices) split.train.push_back(pairs[i]);
  for (auto i : split.validation_indices) split.validation.push_back(pairs[i]);
  for (auto i : split.test_indices) split.test.push_back(pairs[i]);
  return split;
}

std::vector<std::string> split_whitespace(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream ss(text);
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

std::string synthesize_query(const std::string& sd_text,
                             const CorruptionConfig& config) {
  check_rate(config.abbreviation_rate, "abbreviation_rate");
  check_rate(config.token_drop_rate, "token_drop_rate");
  check_rate(config.typo_rate, "typo_rate");
  check_rate(config.lexicon_swap_rate, "lexicon_swap_rate");

  auto tokens = split_whitespace(sd_text);
  if (tokens.empty()) return sd_text;

  Rng rng(mix_seed(config.seed, fnv1a(sd_text)));
  bool changed = false;
  std::vector<bool> dropped(tokens.size(), false);

  for (std::size_t t = 0; t < tokens.size(); ++t) {
    auto& tok = tokens[t];
    // Fixed draw count per token keeps the stream aligned across configs.
    const double u_swap = uniform01(rng);
    const double u_abbr = uniform01(rng);
    const double u_typo = uniform01(rng);
    const double u_drop = uniform01(rng);
    const auto aux_abbr = rng();
    const auto aux_pos = rng();
    const auto aux_char = rng();

    if (config.preserve_numeric_tokens && has_digit(tok)) continue;

    if (u_swap < config.lexicon_swap_rate) {
      auto it = config.lexicon.find(tok);
      if (it != config.lexicon.end() && !it->second.empty() &&
          it->second != tok) {
        tok = it->second;
        changed = true;
      }
    }
    if (u_abbr < config.abbreviation_rate) {
      const auto offs = codepoint_offsets(tok);
      const std::size_t len = offs.size() - 1;
      if (len > 3) {
        const std::size_t keep = 3 + aux_abbr % (len - 3);
        tok = tok.substr(0, offs[keep]);
        changed = true;
      }
    }
    if (u_typo < config.typo_rate) {
      const auto offs = codepoint_offsets(tok);
      const std::size_t len = offs.size() - 1;
      if (len > 0) {
        const std::size_t pos = aux_pos % len;
        const std::string old = tok.substr(offs[pos], offs[pos + 1] - offs[pos]);
        char repl = static_cast<char>('a' + aux_char % 26);
        if (old.size() == 1 && old[0] == repl) repl = repl == 'z' ? 'a' : repl + 1;
        tok.replace(offs[pos], offs[pos + 1] - offs[pos], 1, repl);
        changed = true;
      }
    }
    if (u_drop < config.token_drop_rate) {
      dropped[t] = true;
      changed = true;
    }
  }

  if (!changed) return sd_text;

  if (std::all_of(dropped.begin(), dropped.end(), [](bool d) { return d; })) {
    dropped[uniform_index(rng, tokens.size())] = false;
  }
  std::string out;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (dropped[t]) continue;
    if (!out.empty()) out += ' ';
    out += tokens[t];
  }
  return out;
}

}  // namespace tpdr
