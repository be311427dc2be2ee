#pragma once

#include <span>
#include <vector>

#include "cull/data/corpus.hpp"
#include "cull/model/layered_model.hpp"

namespace cull {

/// Lays out every pair of every corpus for `arch`.
std::vector<LaidOutExample> make_examples(Arch arch, std::span<const ParallelCorpus> corpora);

/// Pads the selected examples into one batch. Returns the batch and the
/// flattened targets (padding positions hold vocab::kPad).
std::pair<SequenceBatch, std::vector<int>> collate(std::span<const LaidOutExample> examples,
                                                   std::span<const std::size_t> indices);

}  // namespace cull
