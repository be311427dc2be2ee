#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cull/data/language.hpp"

namespace cull {

enum class Split { Train, Dev, Test };

std::string to_string(Split s);
Split parse_split(const std::string& s);

struct SentencePair {
  std::vector<int> src;  // word tokens
  std::vector<int> tgt;
  bool operator==(const SentencePair&) const = default;
};

struct ParallelCorpus {
  Direction direction;
  Split split = Split::Train;
  std::vector<SentencePair> pairs;
  /// Extra header fields (e.g. kd=true, teacher=<hash>).
  std::map<std::string, std::string> meta;

  std::size_t size() const { return pairs.size(); }
};

struct LengthRange {
  int min = 4;
  int max = 12;
};

/// `n` pairs whose canonical sentences are uniform random word sequences;
/// source and target are the canonical sentence enciphered by each side's language.
ParallelCorpus gen_corpus(const LanguageSet& langs, const Direction& d, int n, LengthRange len, std::uint64_t seed,
                          int content_words = 64, Split split = Split::Train);

struct SplitSizes {
  int train = 4000;
  int dev = 256;
  int test = 512;
};

struct CorpusSplits {
  ParallelCorpus train;
  ParallelCorpus dev;
  ParallelCorpus test;
};

/// Disjoint train/dev/test draws: no canonical sentence appears in two splits.
CorpusSplits gen_splits(const LanguageSet& langs, const Direction& d, SplitSizes sizes, LengthRange len,
                        std::uint64_t seed, int content_words = 64);

enum class FilterSide { Source, Target, Both };

/// Keeps pairs whose word count exceeds the corpus mean on `side`, preserving
/// order. Throws FilterDegenerateError when nothing survives unless
/// `pass_through` is set, in which case the input is returned unchanged.
ParallelCorpus length_filter(const ParallelCorpus& c, bool pass_through = false, FilterSide side = FilterSide::Source);

/// Splits each whitespace-separated word into consecutive chunks of at most
/// two characters (UTF-8 code points).
std::vector<std::string> subword_tokenize(const std::string& sentence);

/// File format: a header line `#` followed by space-separated key=value
/// fields (direction, src, tgt, src_tag, tgt_tag, weight, split, extras),
/// then one `source<TAB>target` line per pair. Targets may be empty only in
/// files flagged kd=true.
void write_corpus(const std::filesystem::path& path, const ParallelCorpus& c);
ParallelCorpus read_corpus(const std::filesystem::path& path);

}  // namespace cull
