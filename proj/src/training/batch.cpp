#include "cull/training/batch.hpp"

#include <algorithm>

#include "cull/data/vocab.hpp"

namespace cull {

std::vector<LaidOutExample> make_examples(Arch arch, std::span<const ParallelCorpus> corpora) {
  std::vector<LaidOutExample> out;
  for (const auto& c : corpora) {
    for (const auto& p : c.pairs) out.push_back(layout_example(arch, p.src, c.direction.tags, p.tgt));
  }
  return out;
}

std::pair<SequenceBatch, std::vector<int>> collate(std::span<const LaidOutExample> examples,
                                                   std::span<const std::size_t> indices) {
  SequenceBatch b;
  b.batch = static_cast<int>(indices.size());
  for (std::size_t i : indices) {
    b.src_len = std::max(b.src_len, static_cast<int>(examples[i].src.size()));
    b.tgt_len = std::max(b.tgt_len, static_cast<int>(examples[i].tgt.size()));
  }
  const bool has_src = b.src_len > 0;
  if (has_src) b.src.assign(static_cast<std::size_t>(b.batch) * b.src_len, vocab::kPad);
  b.tgt.assign(static_cast<std::size_t>(b.batch) * b.tgt_len, vocab::kPad);
  std::vector<int> targets(b.tgt.size(), vocab::kPad);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto& ex = examples[indices[k]];
    if (has_src) {
      std::copy(ex.src.begin(), ex.src.end(), b.src.begin() + static_cast<std::ptrdiff_t>(k * b.src_len));
      b.src_lengths.push_back(static_cast<int>(ex.src.size()));
    }
    std::copy(ex.tgt.begin(), ex.tgt.end(), b.tgt.begin() + static_cast<std::ptrdiff_t>(k * b.tgt_len));
    std::copy(ex.targets.begin(), ex.targets.end(), targets.begin() + static_cast<std::ptrdiff_t>(k * b.tgt_len));
    b.tgt_lengths.push_back(static_cast<int>(ex.tgt.size()));
  }
  return {std::move(b), std::move(targets)};
}

}  // namespace cull
