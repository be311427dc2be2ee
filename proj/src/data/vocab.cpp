#include "cull/data/vocab.hpp"

#include <sstream>

#include "cull/error.hpp"

namespace cull::vocab {

std::string token_string(int token) {
  switch (token) {
    case kPad: return "<pad>";
    case kBos: return "<bos>";
    case kEos: return "<eos>";
    case kSep: return "<sep>";
    default: break;
  }
  if (token >= kFirstTag && token < kFirstWord) return "<L" + std::to_string(token - kFirstTag) + ">";
  if (token >= kFirstWord) return "w" + std::to_string(word_index(token));
  return "<unk>";
}

std::string render(std::span<const int> tokens) {
  std::string out;
  for (int t : tokens) {
    if (!out.empty()) out += ' ';
    out += token_string(t);
  }
  return out;
}

std::vector<int> parse_words(const std::string& sentence) {
  std::vector<int> out;
  std::istringstream in(sentence);
  std::string word;
  while (in >> word) {
    if (word.size() < 2 || word[0] != 'w') throw FormatError("not a word token: '" + word + "'");
    int index = 0;
    for (std::size_t i = 1; i < word.size(); ++i) {
      if (word[i] < '0' || word[i] > '9') throw FormatError("not a word token: '" + word + "'");
      index = index * 10 + (word[i] - '0');
    }
    out.push_back(word_token(index));
  }
  return out;
}

}  // namespace cull::vocab
