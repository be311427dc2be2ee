#include "cull/metrics/throughput.hpp"

#include <algorithm>
#include <chrono>

#include "cull/data/vocab.hpp"
#include "cull/error.hpp"
#include "cull/util/parallel.hpp"

namespace cull {

int decode_budget(const ModelConfig& config, std::size_t src_words) {
  int budget = static_cast<int>(src_words) + 4;
  if (config.arch == Arch::DecoderOnly) {
    const int prompt = static_cast<int>(src_words) + 3;
    budget = std::min(budget, config.max_len - prompt + 1);
  }
  return std::clamp(budget, 0, config.max_len);
}

std::vector<std::vector<int>> translate(const LayeredModel& m, const LayerMask& mask, const ParallelCorpus& c) {
  std::vector<std::vector<int>> out(c.pairs.size());
  parallel_for(c.pairs.size(), [&](std::size_t i) {
    const auto& src = c.pairs[i].src;
    auto hyp = greedy_decode(m, mask, src, c.direction.tags, decode_budget(m.config, src.size()));
    if (!hyp.empty() && hyp.back() == vocab::kEos) hyp.pop_back();
    out[i] = std::move(hyp);
  });
  return out;
}

BleuScore score_corpus(const LayeredModel& m, const LayerMask& mask, const ParallelCorpus& c) {
  const auto hyps = translate(m, mask, c);
  std::vector<std::string> h, r;
  h.reserve(hyps.size());
  r.reserve(hyps.size());
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    h.push_back(vocab::render(hyps[i]));
    r.push_back(vocab::render(c.pairs[i].tgt));
  }
  return corpus_spbleu(h, r);
}

Throughput measure_throughput(const LayeredModel& m, std::span<const TranslationPrompt> prompts, int max_new) {
  if (prompts.size() < kThroughputMinPrompts) {
    throw ContractError("measure_throughput: need at least " + std::to_string(kThroughputMinPrompts) + " prompts");
  }
  auto run = [&](const TranslationPrompt& p) {
    return greedy_decode(m, m.mask, p.src_words, p.tags, max_new, /*stop_at_eos=*/false).size();
  };
  for (std::size_t i = 0; i < kThroughputWarmup; ++i) run(prompts[i]);
  using Clock = std::chrono::steady_clock;
  Throughput t;
  const auto start = Clock::now();
  for (std::size_t i = kThroughputWarmup; i < prompts.size(); ++i) {
    t.total_tokens += static_cast<long>(run(prompts[i]));
  }
  t.wall_seconds = std::chrono::duration<double>(Clock::now() - start).count();
  if (t.total_tokens == 0) throw MeasurementError("measure_throughput: no tokens generated");
  if (t.wall_seconds <= 0) throw MeasurementError("measure_throughput: clock did not advance");
  t.tokens_per_second = static_cast<double>(t.total_tokens) / t.wall_seconds;
  return t;
}

}  // namespace cull
