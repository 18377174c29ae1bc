// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace sketch {

using TokenId = std::uint32_t;

/// Word-level tokenizer with a byte-level fallback for out-of-vocabulary
/// words. Ids 0..2 are PAD/BOS/EOS, 3..258 are raw bytes, words follow.
class Tokenizer {
 public:
  static constexpr std::size_t kMaxLength = 77;
  static constexpr std::size_t kMaxVocab = 2048;
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kFirstByte = 3;
  static constexpr TokenId kFirstWord = kFirstByte + 256;

  /// Byte-only tokenizer (no word entries).
  Tokenizer();

  /// Vocabulary from corpus word frequencies (descending, ties alphabetical),
  /// capped at `max_vocab` ids in total.
  static Tokenizer build(std::span<const std::string> corpus, std::size_t max_vocab = kMaxVocab);
  /// Rebuilds from a word list in id order (as stored in checkpoints).
  static Tokenizer from_words(std::vector<std::string> words);

  /// Lowercased word and punctuation pieces.
  static std::vector<std::string> pretokenize(std::string_view text);

  /// [BOS, t1..tk, EOS] with k <= 75, cut between pieces.
  std::vector<TokenId> encode(std::string_view text) const;
  /// Content tokens back to normalized text; specials are dropped.
  std::string decode(std::span<const TokenId> ids) const;
  /// Normalized text of what `encode` keeps.
  std::string truncate(std::string_view text) const;
  /// Number of ids `encode` would emit, before truncation.
  std::size_t untruncated_length(std::string_view text) const;

  std::size_t size() const { return kFirstWord + words_.size(); }
  const std::vector<std::string>& words() const { return words_; }
  bool operator==(const Tokenizer& other) const { return words_ == other.words_; }

 private:
  std::vector<TokenId> content_ids(std::string_view text,
                                   std::vector<std::size_t>* piece_ends = nullptr) const;

  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> index_;
};

}  // namespace sketch
