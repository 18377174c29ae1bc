// SPDX-License-Identifier: Apache-2.0
#include "sketch/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <map>

#include "sketch/error.hpp"

namespace sketch {
namespace {

bool is_word_byte(unsigned char c) { return std::isalnum(c) || c == '\'' || c >= 0x80; }
bool is_space(unsigned char c) { return std::isspace(c) != 0; }

}  // namespace

Tokenizer::Tokenizer() = default;

Tokenizer Tokenizer::build(std::span<const std::string> corpus, std::size_t max_vocab) {
  if (max_vocab < kFirstWord)
    throw ConfigError("tokenizer vocabulary cap must be at least " + std::to_string(kFirstWord));
  std::map<std::string, std::size_t> counts;
  for (const auto& text : corpus)
    for (auto& piece : pretokenize(text)) ++counts[piece];
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> words;
  for (auto& [w, c] : ranked) {
    if (words.size() + kFirstWord >= max_vocab) break;
    words.push_back(w);
  }
  return from_words(std::move(words));
}

Tokenizer Tokenizer::from_words(std::vector<std::string> words) {
  Tokenizer t;
  if (words.size() + kFirstWord > kMaxVocab)
    throw ConfigError("tokenizer vocabulary exceeds " + std::to_string(kMaxVocab) + " entries");
  t.words_ = std::move(words);
  for (std::size_t i = 0; i < t.words_.size(); ++i) {
    if (t.words_[i].empty()) throw FormatError("tokenizer vocabulary contains an empty word");
    if (!t.index_.emplace(t.words_[i], static_cast<TokenId>(kFirstWord + i)).second)
      throw FormatError("tokenizer vocabulary repeats '" + t.words_[i] + "'");
  }
  return t;
}

std::vector<std::string> Tokenizer::pretokenize(std::string_view text) {
  std::vector<std::string> pieces;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (is_space(c)) {
      ++i;
    } else if (is_word_byte(c)) {
      std::string word;
      while (i < text.size() && is_word_byte(static_cast<unsigned char>(text[i]))) {
        word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(text[i]))));
        ++i;
      }
      pieces.push_back(std::move(word));
    } else {
      pieces.emplace_back(1, static_cast<char>(c));
      ++i;
    }
  }
  return pieces;
}

std::vector<TokenId> Tokenizer::content_ids(std::string_view text,
                                           std::vector<std::size_t>* piece_ends) const {
  std::vector<TokenId> ids;
  bool first = true;
  for (const auto& piece : pretokenize(text)) {
    if (auto it = index_.find(piece); it != index_.end()) {
      ids.push_back(it->second);
    } else {
      // Unknown words become bytes; a leading space byte keeps word
      // boundaries recoverable by decode.
      if (!first) ids.push_back(kFirstByte + static_cast<unsigned char>(' '));
      for (unsigned char b : piece) ids.push_back(kFirstByte + b);
    }
    if (piece_ends) piece_ends->push_back(ids.size());
    first = false;
  }
  return ids;
}

std::vector<TokenId> Tokenizer::encode(std::string_view text) const {
  std::vector<std::size_t> ends;
  auto content = content_ids(text, &ends);
  if (content.empty()) throw ValidationError("cannot tokenize empty text");
  // Cut at the last whole piece that fits, so decode(encode(x)) re-encodes
  // to the same ids. A single oversized first piece is cut mid-word.
  std::size_t keep = std::min(content.size(), kMaxLength - 2);
  if (keep < content.size()) {
    const auto it = std::upper_bound(ends.begin(), ends.end(), keep);
    if (it != ends.begin()) keep = *std::prev(it);
  }
  std::vector<TokenId> ids;
  ids.reserve(keep + 2);
  ids.push_back(kBos);
  ids.insert(ids.end(), content.begin(), content.begin() + static_cast<std::ptrdiff_t>(keep));
  ids.push_back(kEos);
  return ids;
}

std::size_t Tokenizer::untruncated_length(std::string_view text) const {
  return content_ids(text).size() + 2;
}

std::string Tokenizer::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (const auto id : ids) {
    if (id == kPad || id == kBos || id == kEos) continue;
    if (id < kFirstWord) {
      out.push_back(static_cast<char>(id - kFirstByte));
      continue;
    }
    const std::size_t w = id - kFirstWord;
    if (w >= words_.size())
      throw ValidationError("token id " + std::to_string(id) + " is outside the vocabulary");
    if (!out.empty()) out.push_back(' ');
    out += words_[w];
  }
  return out;
}

std::string Tokenizer::truncate(std::string_view text) const {
  const auto ids = encode(text);
  return decode(ids);
}

}  // namespace sketch
