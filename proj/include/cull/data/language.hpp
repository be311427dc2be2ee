#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cull/model/layered_model.hpp"

namespace cull {

/// A cipher language over the content words: a word permutation followed by
/// a cyclic left rotation of word order. The canonical target language has
/// the identity permutation and rotation 0.
struct Language {
  std::string name;
  int tag = 0;
  std::vector<int> permutation;  // word index -> word index
  int rotation = 0;

  /// Canonical sentence (word tokens) -> this language's surface.
  std::vector<int> encipher(std::span<const int> words) const;
  /// Inverse of encipher.
  std::vector<int> decipher(std::span<const int> words) const;
  bool is_identity() const;
};

struct LanguageSet {
  Language target;
  std::vector<Language> sources;

  const Language& find(const std::string& name) const;
};

/// `k` cipher languages L1..Lk plus the canonical target T. Permutations are
/// distinct from each other and from the identity; rotations are drawn from {0,1,2}.
LanguageSet gen_languages(int k, int content_words, std::uint64_t seed);

/// Ordered language pair with a priority weight.
struct Direction {
  std::string src;
  std::string tgt;
  DirectionTags tags;
  double weight = 1.0;

  std::string name() const { return src + "-" + tgt; }
  bool operator==(const Direction&) const = default;
};

Direction make_direction(const LanguageSet& langs, const std::string& src, const std::string& tgt, double weight = 1.0);

/// Validates a direction set: src != tgt, weights >= 0 and not all zero, unique names.
void validate_directions(std::span<const Direction> directions);

}  // namespace cull
