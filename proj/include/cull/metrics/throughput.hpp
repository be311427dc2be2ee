#pragma once

#include <span>
#include <vector>

#include "cull/data/corpus.hpp"
#include "cull/metrics/bleu.hpp"
#include "cull/model/layered_model.hpp"

namespace cull {

/// Generation budget for a source of `src_words` words: src_words + 4,
/// bounded by what the model's positional range allows.
int decode_budget(const ModelConfig& config, std::size_t src_words);

/// Greedy translations of every source in `c` under `mask`, <eos> stripped.
/// Sentences are decoded in parallel; output order follows the corpus.
std::vector<std::vector<int>> translate(const LayeredModel& m, const LayerMask& mask, const ParallelCorpus& c);

/// spBLEU of greedy translations against the corpus references.
BleuScore score_corpus(const LayeredModel& m, const LayerMask& mask, const ParallelCorpus& c);

struct TranslationPrompt {
  std::vector<int> src_words;
  DirectionTags tags;
};

struct Throughput {
  double tokens_per_second = 0;
  long total_tokens = 0;
  double wall_seconds = 0;
};

inline constexpr std::size_t kThroughputWarmup = 3;
inline constexpr std::size_t kThroughputMinPrompts = 20;

/// Tokens generated per second at batch size 1 on the calling thread. The
/// first kThroughputWarmup prompts are decoded but not timed. Every prompt
/// generates max_new tokens (or up to the positional limit) regardless of
/// <eos>, so models are timed on identical work. Must not run
/// alongside other compute-heavy work.
Throughput measure_throughput(const LayeredModel& m, std::span<const TranslationPrompt> prompts, int max_new);

}  // namespace cull
