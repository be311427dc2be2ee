#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "cull/data/corpus.hpp"
#include "cull/model/layered_model.hpp"

namespace cull {

/// What the stopping threshold is compared against.
enum class StopRule {
  Cumulative,  // weighted drop of the candidate vs the original model
  PerStep,     // increase over the previously committed weighted drop
};

std::string to_string(StopRule r);
StopRule parse_stop_rule(const std::string& s);

struct PruneConfig {
  double threshold = 3.0;
  std::vector<Direction> directions;
  std::set<Section> sections = {Section::Encoder, Section::Decoder};
  std::optional<int> max_removals;
  StopRule stop_rule = StopRule::Cumulative;
  /// Dev pairs per direction used for scoring (0 = all).
  int dev_pairs = 0;

  void validate() const;
  /// Direction weights scaled to sum to 1.
  std::vector<double> normalized_weights() const;
};

struct ImportanceRecord {
  int step = 0;
  LayerId candidate;
  std::vector<double> spbleu;  // per direction, candidate masked
  std::vector<double> drop;    // baseline - spbleu, per direction
  double weighted_drop = 0;

  bool operator==(const ImportanceRecord&) const = default;
};

enum class StopReason { Threshold, MaxRemovals, Exhausted };

std::string to_string(StopReason r);
StopReason parse_stop_reason(const std::string& s);

struct PruneTrace {
  std::vector<std::string> directions;
  std::vector<double> weights;   // normalized
  std::vector<double> baseline;  // per direction, original model
  double threshold = 0;
  StopRule stop_rule = StopRule::Cumulative;
  LayerMask initial_mask;
  std::vector<LayerId> candidates;  // initial candidate set
  /// Candidate records of every scan, in LayerId order. A scan that ended
  /// the run by threshold is included.
  std::vector<std::vector<ImportanceRecord>> scans;
  /// Committed removals, one per step.
  std::vector<ImportanceRecord> chosen;
  StopReason stop_reason = StopReason::Exhausted;

  LayerMask final_mask() const;
  /// Mask after the first k committed removals.
  LayerMask mask_after(std::size_t k) const;
  bool operator==(const PruneTrace&) const = default;
};

struct PruneResult {
  LayeredModel model;
  PruneTrace trace;
};

/// Dev corpora reordered to match `directions`, each truncated to `limit`
/// pairs when limit > 0. Throws ConfigError when a direction has no corpus.
std::vector<ParallelCorpus> select_dev(std::span<const Direction> directions, std::span<const ParallelCorpus> dev,
                                       int limit = 0);

/// Per-direction spBLEU under `mask`.
std::vector<double> evaluate_mask(const LayeredModel& m, const LayerMask& mask, std::span<const ParallelCorpus> dev);

/// Scores the model with `layer` additionally masked. `m` is not modified.
ImportanceRecord evaluate_layer(const LayeredModel& m, LayerId layer, std::span<const ParallelCorpus> dev,
                                std::span<const double> baseline, std::span<const double> weights);

/// Layers still removable under `mask`: remaining layers of the configured
/// sections whose removal leaves the section non-empty, in LayerId order.
std::vector<LayerId> prune_candidates(const ModelConfig& config, const LayerMask& mask,
                                      const std::set<Section>& sections);

/// Greedy layer pruning: each step scores every remaining candidate and
/// commits the one with the smallest weighted drop (ties: lowest LayerId),
/// stopping before a removal that would exceed the threshold.
PruneResult cull_prune(const LayeredModel& m, const PruneConfig& cfg, std::span<const ParallelCorpus> dev);

/// The trace a run with `threshold` and `max_removals` would have produced,
/// derived from a longer run with the same directions and data. Valid because
/// the greedy order does not depend on the threshold. Throws ContractError
/// when `trace` stopped before the derived run would have.
PruneTrace truncate_trace(const PruneTrace& trace, double threshold, std::optional<int> max_removals = std::nullopt);

/// Masks the n highest layers, taking sections in `order`.
LayeredModel topn_prune(const LayeredModel& m, int n,
                        std::span<const Section> order = std::vector<Section>{Section::Decoder, Section::Encoder});

/// Masks the contiguous block of n layers of `section` that ends at index L-4.
LayeredModel blockwise_prune(const LayeredModel& m, int n, Section section = Section::Decoder);

/// The removal sets used by the two baselines, without building a model.
LayerMask topn_mask(const ModelConfig& config, int n, std::span<const Section> order);
LayerMask blockwise_mask(const ModelConfig& config, int n, Section section);

/// Step x layer matrix of weighted drops. Cells of removed layers are
/// flagged; cells of layers not scored in a scan are empty.
struct ImportanceMatrix {
  enum class Cell { Value, Removed, Empty };
  std::vector<LayerId> layers;
  std::vector<std::vector<Cell>> state;
  std::vector<std::vector<double>> drop;

  std::size_t rows() const { return state.size(); }
  bool operator==(const ImportanceMatrix&) const = default;
};

ImportanceMatrix importance_matrix(const PruneTrace& trace);
std::string importance_csv(const ImportanceMatrix& mx);
ImportanceMatrix parse_importance_csv(const std::string& csv);

/// drop_d(layer) / baseline_d for every candidate of scan `scan`.
struct NormalizedDrops {
  std::vector<std::string> directions;
  std::vector<LayerId> layers;
  std::vector<std::vector<double>> values;  // [layer][direction]
};

NormalizedDrops normalized_direction_drops(const PruneTrace& trace, std::size_t scan = 0);
std::string normalized_drops_csv(const NormalizedDrops& nd);

/// JSON lines: a header record, one record per scored candidate, a footer.
std::string trace_jsonl(const PruneTrace& trace);
PruneTrace parse_trace_jsonl(const std::string& text);
void write_trace(const std::filesystem::path& path, const PruneTrace& trace);
PruneTrace read_trace(const std::filesystem::path& path);

}  // namespace cull
