#include "tpdr/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "json.hpp"
#include "tpdr/catalog.hpp"
#include "tpdr/error.hpp"

namespace tpdr {

using nlohmann::json;

namespace {

std::vector<std::string> codepoints(const std::string& word) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < word.size();) {
    std::size_t j = i + 1;
    while (j < word.size() &&
           (static_cast<unsigned char>(word[j]) & 0xC0) == 0x80) {
      ++j;
    }
    out.push_back(word.substr(i, j - i));
    i = j;
  }
  return out;
}

void merge_in_place(std::vector<std::string>& symbols, const std::string& a,
                    const std::string& b) {
  std::vector<std::string> out;
  out.reserve(symbols.size());
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    if (i + 1 < symbols.size() && symbols[i] == a && symbols[i + 1] == b) {
      out.push_back(a + b);
      ++i;
    } else {
      out.push_back(std::move(symbols[i]));
    }
  }
  symbols = std::move(out);
}

}  // namespace

TokenizerModel::TokenizerModel(
    std::vector<std::string> tokens,
    std::vector<std::pair<std::string, std::string>> merges)
    : tokens_(std::move(tokens)), merges_(std::move(merges)) {
  if (tokens_.size() < 2 || tokens_[kPadId] != kPadToken ||
      tokens_[kUnknownId] != kUnknownToken) {
    throw FormatError("tokenizer: ids 0 and 1 must be <pad> and <unk>");
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!ids_.emplace(tokens_[i], static_cast<int>(i)).second) {
      throw FormatError("tokenizer: duplicate token \"" + tokens_[i] + "\"");
    }
  }
  for (std::size_t r = 0; r < merges_.size(); ++r) {
    if (!ids_.contains(merges_[r].first + merges_[r].second)) {
      throw FormatError("tokenizer: merge result missing from vocab");
    }
    merge_rank_.emplace(merges_[r], r);
  }
}

int TokenizerModel::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnknownId : it->second;
}

std::vector<std::string> TokenizerModel::segment_word(
    const std::string& word) const {
  auto symbols = codepoints(word);
  while (symbols.size() > 1) {
    std::size_t best_rank = merge_rank_.size();
    std::size_t best_pos = 0;
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      auto it = merge_rank_.find({symbols[i], symbols[i + 1]});
      if (it != merge_rank_.end() && it->second < best_rank) {
        best_rank = it->second;
        best_pos = i;
      }
    }
    if (best_rank == merge_rank_.size()) break;
    const auto a = symbols[best_pos];
    const auto b = symbols[best_pos + 1];
    merge_in_place(symbols, a, b);
  }
  return symbols;
}

std::string normalize_text(const std::string& text) {
  std::string out;
  out.reserve(text.size());
  for (const auto& word : split_whitespace(text)) {
    if (!out.empty()) out += ' ';
    for (char c : word) {
      out += (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
    }
  }
  return out;
}

TokenizerModel train_bpe(std::span<const std::string> corpus,
                         std::size_t target_vocab_size) {
  std::map<std::string, std::size_t> word_counts;
  bool multi_word = false;
  for (const auto& text : corpus) {
    const auto words = split_whitespace(normalize_text(text));
    multi_word = multi_word || words.size() > 1;
    for (const auto& w : words) ++word_counts[w];
  }
  if (word_counts.empty()) throw ValidationError("empty corpus");

  std::set<std::string> base;
  std::vector<std::pair<std::vector<std::string>, std::size_t>> words;
  for (const auto& [w, count] : word_counts) {
    auto symbols = codepoints(w);
    base.insert(symbols.begin(), symbols.end());
    words.emplace_back(std::move(symbols), count);
  }
  if (multi_word) base.insert(TokenizerModel::kSeparator);

  if (target_vocab_size <= base.size() + 2) {
    throw ValidationError("target vocab size " +
                          std::to_string(target_vocab_size) +
                          " must exceed base symbols + specials (" +
                          std::to_string(base.size() + 2) + ")");
  }

  std::vector<std::string> tokens{TokenizerModel::kPadToken,
                                  TokenizerModel::kUnknownToken};
  tokens.insert(tokens.end(), base.begin(), base.end());
  std::set<std::string> known(tokens.begin(), tokens.end());
  std::vector<std::pair<std::string, std::string>> merges;

  while (tokens.size() < target_vocab_size) {
    std::map<std::pair<std::string, std::string>, std::size_t> pair_counts;
    for (const auto& [symbols, count] : words) {
      for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
        pair_counts[{symbols[i], symbols[i + 1]}] += count;
      }
    }
    const std::pair<std::string, std::string>* best = nullptr;
    std::size_t best_count = 1;
    std::string best_merged;
    for (const auto& [pair, count] : pair_counts) {
      if (count < 2) continue;
      std::string merged = pair.first + pair.second;
      // map order already breaks equal merged strings by left symbol.
      if (count > best_count || (count == best_count && merged < best_merged)) {
        best = &pair;
        best_count = count;
        best_merged = std::move(merged);
      }
    }
    if (best == nullptr) break;

    const auto merge = *best;
    merges.push_back(merge);
    if (known.insert(best_merged).second) tokens.push_back(best_merged);
    for (auto& [symbols, count] : words) {
      merge_in_place(symbols, merge.first, merge.second);
    }
  }
  return TokenizerModel(std::move(tokens), std::move(merges));
}

EncodedText encode(const TokenizerModel& model, const std::string& text,
                   std::size_t max_len) {
  if (max_len < 1) throw ValidationError("max_len must be >= 1");
  EncodedText out;
  out.ids.reserve(max_len);
  const int sep = model.id(TokenizerModel::kSeparator);
  const auto words = split_whitespace(normalize_text(text));
  for (std::size_t w = 0; w < words.size() && out.ids.size() < max_len; ++w) {
    if (w > 0 && sep != TokenizerModel::kUnknownId) out.ids.push_back(sep);
    for (const auto& sym : model.segment_word(words[w])) {
      if (out.ids.size() == max_len) break;
      out.ids.push_back(model.id(sym));
    }
  }
  out.ids.resize(std::min(out.ids.size(), max_len));
  out.length = out.ids.size();
  out.ids.resize(max_len, TokenizerModel::kPadId);
  return out;
}

std::string decode(const TokenizerModel& model, std::span<const int> ids) {
  std::string out;
  for (int id : ids) {
    if (id == TokenizerModel::kPadId) continue;
    if (id < 0 || static_cast<std::size_t>(id) >= model.vocab_size()) {
      throw ValidationError("token id out of range");
    }
    out += model.tokens()[static_cast<std::size_t>(id)];
  }
  return out;
}

void save_tokenizer(const TokenizerModel& model,
                    const std::filesystem::path& path) {
  json vocab = json::object();
  for (std::size_t i = 0; i < model.tokens().size(); ++i) {
    vocab[model.tokens()[i]] = i;
  }
  json merges = json::array();
  for (const auto& [a, b] : model.merges()) merges.push_back({a, b});
  json j{{"vocab", vocab},
         {"merges", merges},
         {"specials",
          {{"pad", TokenizerModel::kPadId},
           {"unk", TokenizerModel::kUnknownId}}}};
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(1) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

TokenizerModel load_tokenizer(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  try {
    const auto& vocab = j.at("vocab");
    std::vector<std::string> tokens(vocab.size());
    std::vector<bool> filled(vocab.size(), false);
    for (const auto& [tok, id_json] : vocab.items()) {
      const auto id = id_json.get<std::size_t>();
      if (id >= tokens.size() || filled[id]) {
        throw FormatError(path.string() + ": vocab ids not contiguous");
      }
      tokens[id] = tok;
      filled[id] = true;
    }
    std::vector<std::pair<std::string, std::string>> merges;
    for (const auto& m : j.at("merges")) {
      merges.emplace_back(m.at(0).get<std::string>(),
                          m.at(1).get<std::string>());
    }
    const auto& specials = j.at("specials");
    if (specials.at("pad").get<int>() != TokenizerModel::kPadId ||
        specials.at("unk").get<int>() != TokenizerModel::kUnknownId) {
      throw FormatError(path.string() + ": unexpected special ids");
    }
    return TokenizerModel(std::move(tokens), std::move(merges));
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace tpdr
