#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cull/data/corpus.hpp"
#include "cull/model/layered_model.hpp"

namespace cull {

struct TrainConfig {
  int steps = 3000;
  double learning_rate = 1e-3;
  int batch_size = 32;
  std::uint64_t seed = 7;
  /// Early stop once the mean dev spBLEU over directions reaches this value.
  double target_spbleu = 95.0;
  int eval_every = 250;
  /// Dev pairs per direction used for early-stop checks (0 = all).
  int eval_pairs = 0;
  double label_smoothing = 0.1;
  int warmup_steps = 100;
  double clip_norm = 1.0;

  void validate() const;
};

struct TrainLogEntry {
  int step = 0;
  double loss = 0;
  std::optional<double> dev_spbleu;
};

/// JSON-lines rendering: {"step":..,"loss":..[,"dev_spbleu":..]} per line.
std::string train_log_jsonl(std::span<const TrainLogEntry> log);

/// Options of the shared supervised loop used by base training and healing.
struct FitOptions {
  int steps = 0;
  double learning_rate = 1e-3;
  int batch_size = 16;
  std::uint64_t seed = 0;
  double label_smoothing = 0.0;
  int warmup_steps = 0;
  double clip_norm = 1.0;
  bool train_base = true;
  bool train_adapters = false;
  bool dropout = false;
  /// Examples per independent forward/backward graph; 0 = whole batch.
  /// Gradients are summed in micro-batch order, so results do not depend on thread count.
  int micro_batch = 0;
  int eval_every = 0;
  /// Called every eval_every steps; returning true stops training.
  std::function<bool(const LayeredModel&, int step, TrainLogEntry&)> on_eval;
  /// Where to dump the model if training diverges (optional).
  std::filesystem::path divergence_dump;
};

struct FitResult {
  std::vector<TrainLogEntry> log;
  int steps_run = 0;
  bool stopped_early = false;
};

/// Cross-entropy training of `m` in place on `examples`.
FitResult fit(LayeredModel& m, std::span<const LaidOutExample> examples, const FitOptions& opts);

struct TrainResult {
  LayeredModel model;
  std::vector<TrainLogEntry> log;
  bool reached_target = false;
  double final_dev_spbleu = 0;
  std::string status;
};

/// Trains a freshly built model on the union of `train` until the mean dev
/// spBLEU reaches tc.target_spbleu or the step budget runs out. Throws
/// ContractError if a dev/test pair also occurs in training data.
TrainResult train_base(const ModelConfig& config, std::span<const ParallelCorpus> train,
                       std::span<const ParallelCorpus> dev, const TrainConfig& tc,
                       std::span<const ParallelCorpus> held_out = {});

/// Mean spBLEU over corpora, each truncated to `limit` pairs when limit > 0.
double mean_spbleu(const LayeredModel& m, const LayerMask& mask, std::span<const ParallelCorpus> corpora, int limit = 0);

}  // namespace cull
