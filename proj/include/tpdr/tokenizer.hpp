#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace tpdr {

/// Byte-pair encoding model. Ids are contiguous: 0 = pad, 1 = unknown, then
/// base symbols in lexicographic order, then one id per new merged symbol.
/// Words are merged independently; a " " symbol separates words when the
/// training corpus contained multi-word texts.
class TokenizerModel {
 public:
  static constexpr int kPadId = 0;
  static constexpr int kUnknownId = 1;
  static constexpr const char* kPadToken = "<pad>";
  static constexpr const char* kUnknownToken = "<unk>";
  static constexpr const char* kSeparator = " ";

  TokenizerModel() = default;
  TokenizerModel(std::vector<std::string> tokens,
                 std::vector<std::pair<std::string, std::string>> merges);

  std::size_t vocab_size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::vector<std::pair<std::string, std::string>>& merges() const {
    return merges_;
  }
  /// Token id, or kUnknownId.
  int id(const std::string& token) const;

  /// Splits one normalized word into merged symbols.
  std::vector<std::string> segment_word(const std::string& word) const;

  bool operator==(const TokenizerModel& o) const {
    return tokens_ == o.tokens_ && merges_ == o.merges_;
  }

 private:
  std::vector<std::string> tokens_;
  std::vector<std::pair<std::string, std::string>> merges_;
  std::unordered_map<std::string, int> ids_;
  std::map<std::pair<std::string, std::string>, std::size_t> merge_rank_;
};

struct EncodedText {
  std::vector<int> ids;     // always max_len entries
  std::size_t length = 0;   // non-pad prefix length
};

/// Lowercases ASCII letters and collapses whitespace runs to one space.
std::string normalize_text(const std::string& text);

/// Greedy highest-count merges until target_vocab_size or no pair occurs
/// at least twice; ties go to the lexicographically smallest merged string.
TokenizerModel train_bpe(std::span<const std::string> corpus,
                         std::size_t target_vocab_size);

EncodedText encode(const TokenizerModel& model, const std::string& text,
                   std::size_t max_len);

/// Concatenates the first `length` tokens.
std::string decode(const TokenizerModel& model, std::span<const int> ids);

// JSON {"vocab": {token: id}, "merges": [[a, b], ...],
//       "specials": {"pad": 0, "unk": 1}}
void save_tokenizer(const TokenizerModel& model,
                    const std::filesystem::path& path);
TokenizerModel load_tokenizer(const std::filesystem::path& path);

}  // namespace tpdr
