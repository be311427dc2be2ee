#include "cull/data/language.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <set>

#include "cull/data/vocab.hpp"
#include "cull/error.hpp"

namespace cull {

std::vector<int> Language::encipher(std::span<const int> words) const {
  const std::size_t n = words.size();
  std::vector<int> mapped(n);
  for (std::size_t i = 0; i < n; ++i) {
    mapped[i] = vocab::word_token(permutation.at(static_cast<std::size_t>(vocab::word_index(words[i]))));
  }
  if (n == 0) return mapped;
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = mapped[(i + static_cast<std::size_t>(rotation)) % n];
  return out;
}

std::vector<int> Language::decipher(std::span<const int> words) const {
  const std::size_t n = words.size();
  std::vector<int> inverse(permutation.size());
  for (std::size_t i = 0; i < permutation.size(); ++i) inverse[static_cast<std::size_t>(permutation[i])] = static_cast<int>(i);
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int w = words[i];
    out[(i + static_cast<std::size_t>(rotation)) % n] = vocab::word_token(inverse.at(static_cast<std::size_t>(vocab::word_index(w))));
  }
  return out;
}

bool Language::is_identity() const {
  if (rotation != 0) return false;
  for (std::size_t i = 0; i < permutation.size(); ++i) {
    if (permutation[i] != static_cast<int>(i)) return false;
  }
  return true;
}

const Language& LanguageSet::find(const std::string& name) const {
  if (target.name == name) return target;
  for (const auto& l : sources) {
    if (l.name == name) return l;
  }
  throw ConfigError("unknown language '" + name + "'");
}

LanguageSet gen_languages(int k, int content_words, std::uint64_t seed) {
  if (k < 1 || k >= vocab::kMaxTags) throw ConfigError("gen_languages: k must be in [1, " + std::to_string(vocab::kMaxTags - 1) + "]");
  if (content_words < 16) throw ConfigError("gen_languages: need at least 16 content words");
  LanguageSet set;
  set.target.name = "T";
  set.target.tag = vocab::tag_token(0);
  set.target.permutation.resize(static_cast<std::size_t>(content_words));
  std::iota(set.target.permutation.begin(), set.target.permutation.end(), 0);

  std::mt19937_64 rng(seed);
  std::set<std::vector<int>> seen{set.target.permutation};
  for (int i = 1; i <= k; ++i) {
    Language l;
    l.name = "L" + std::to_string(i);
    l.tag = vocab::tag_token(i);
    l.permutation = set.target.permutation;
    do {
      std::shuffle(l.permutation.begin(), l.permutation.end(), rng);
    } while (seen.count(l.permutation) != 0);
    seen.insert(l.permutation);
    l.rotation = std::uniform_int_distribution<int>(0, 2)(rng);
    set.sources.push_back(std::move(l));
  }
  return set;
}

Direction make_direction(const LanguageSet& langs, const std::string& src, const std::string& tgt, double weight) {
  const Language& s = langs.find(src);
  const Language& t = langs.find(tgt);
  if (src == tgt) throw ConfigError("direction source and target are both '" + src + "'");
  return Direction{src, tgt, DirectionTags{s.tag, t.tag}, weight};
}

void validate_directions(std::span<const Direction> directions) {
  if (directions.empty()) throw ConfigError("no directions configured");
  double total = 0;
  std::set<std::string> names;
  for (const auto& d : directions) {
    if (d.src == d.tgt) throw ConfigError("direction " + d.name() + " has src == tgt");
    if (!(d.weight >= 0)) throw ConfigError("direction " + d.name() + " has a negative weight");
    if (!names.insert(d.name()).second) throw ConfigError("duplicate direction " + d.name());
    total += d.weight;
  }
  if (!(total > 0)) throw ConfigError("direction weights are all zero");
}

}  // namespace cull
