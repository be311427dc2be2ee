#pragma once

#include <span>
#include <string>
#include <vector>

namespace cull::vocab {

// Fixed token layout shared by every toy model:
//   0..3    specials
//   4..11   language tags
//   12..    content words w0, w1, ...
inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kSep = 3;
inline constexpr int kFirstTag = 4;
inline constexpr int kMaxTags = 8;
inline constexpr int kFirstWord = kFirstTag + kMaxTags;
inline constexpr int kDefaultContentWords = 64;

inline constexpr int tag_token(int language_index) { return kFirstTag + language_index; }
inline constexpr int word_token(int word_index) { return kFirstWord + word_index; }
inline constexpr bool is_word(int token) { return token >= kFirstWord; }
inline constexpr int word_index(int token) { return token - kFirstWord; }

/// Smallest vocabulary that holds `content_words` words.
inline constexpr int min_vocab_size(int content_words) { return kFirstWord + content_words; }

/// Surface string of a token: "w17" for words, "<eos>" style for the rest.
std::string token_string(int token);

/// Whitespace-joined surface form of a token sequence.
std::string render(std::span<const int> tokens);

/// Parses a whitespace-separated sentence of word surfaces ("w3 w17") back into token ids.
std::vector<int> parse_words(const std::string& sentence);

}  // namespace cull::vocab
