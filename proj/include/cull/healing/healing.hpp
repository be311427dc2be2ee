#pragma once

#include <span>
#include <string>
#include <vector>

#include "cull/data/corpus.hpp"
#include "cull/model/layered_model.hpp"
#include "cull/training/trainer.hpp"

namespace cull {

enum class HealMode { Lora, Full };

std::string to_string(HealMode m);
HealMode parse_heal_mode(const std::string& s);

struct HealOptimizer {
  /// 0 selects the mode default: 1e-3 for lora, 3e-4 for full.
  double learning_rate = 0;
  int steps = 600;
  int batch_size = 16;
  std::uint64_t seed = 7;
};

struct HealingPlan {
  int kd_sentences_per_direction = 2000;
  HealMode mode = HealMode::Lora;
  LoraConfig lora;
  HealOptimizer optimizer;
  double label_smoothing = 0.1;
  /// Fold adapters into the base weights once training ends.
  bool merge_adapters = false;

  void validate() const;
  double learning_rate() const;
};

/// Teacher translations of training sources, one corpus per direction.
struct KdCorpus {
  std::string teacher_hash;
  std::vector<ParallelCorpus> corpora;

  std::size_t size() const;
  /// The first n pairs of every direction.
  KdCorpus head(int n) const;
};

/// Greedy-decodes the first plan.kd_sentences_per_direction sources of each
/// training corpus with the unpruned teacher, keeping the content words of
/// each output. Throws ContractError if the teacher has removed layers and
/// ConfigError if a corpus is too small.
KdCorpus build_kd_corpus(const LayeredModel& teacher, std::span<const ParallelCorpus> train, const HealingPlan& plan);

struct HealResult {
  LayeredModel model;
  std::vector<TrainLogEntry> log;
};

/// Fine-tunes the pruned model on the KD pairs. In lora mode adapters are
/// attached first when absent and the base weights stay untouched. Zero
/// steps returns the input unchanged.
HealResult heal(const LayeredModel& pruned, const KdCorpus& kd, const HealingPlan& plan);

struct KdSweepRow {
  int size = 0;
  double pruned_spbleu = 0;
  double healed_spbleu = 0;
};

/// One healing run per KD size from the same pruned snapshot and seed,
/// scored as mean dev spBLEU. Sizes must be ascending.
std::vector<KdSweepRow> kd_size_sweep(const LayeredModel& pruned, const LayeredModel& teacher,
                                      std::span<const ParallelCorpus> train, std::span<const ParallelCorpus> dev,
                                      std::span<const int> sizes, const HealingPlan& plan);

}  // namespace cull
