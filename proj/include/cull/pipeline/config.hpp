#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cull/data/corpus.hpp"
#include "cull/healing/healing.hpp"
#include "cull/model/config.hpp"
#include "cull/pruning/pruning.hpp"
#include "cull/training/trainer.hpp"

namespace cull {

enum class Strategy { Cull, TopN, Blockwise };

std::string to_string(Strategy s);
Strategy parse_strategy(const std::string& s);

struct DataSpec {
  int languages = 3;
  int content_words = 64;
  LengthRange length;
  SplitSizes sizes{12000, 256, 512};
};

struct DirectionSpec {
  std::string src;
  std::string tgt;
  double weight = 1.0;
  /// Training pairs used for base training (0 = the whole train split).
  int train_pairs = 0;
  /// Whether pruning and healing target this direction.
  bool prune = true;
};

struct PruneSpec {
  Strategy strategy = Strategy::Cull;
  double threshold = 3.0;
  std::set<Section> sections = {Section::Encoder, Section::Decoder};
  std::optional<int> max_removals;
  StopRule stop_rule = StopRule::Cumulative;
  int dev_pairs = 128;
  /// Removals explored past the threshold for the layers-removed curve.
  int horizon = 8;
  /// Removal count for the topn / blockwise strategies and the strategy table.
  int n = 4;
  std::vector<Section> topn_order = {Section::Decoder, Section::Encoder};
  Section block_section = Section::Decoder;
};

struct HealSpec {
  HealingPlan plan;
  std::vector<int> kd_sweep;
  /// Also heal with full fine-tuning for comparison.
  bool compare_full = false;
};

struct EvalSpec {
  int throughput_prompts = 120;
  int throughput_max_new = 12;
  /// Timed passes per model; the median is reported.
  int throughput_repeats = 3;
};

struct PipelineConfig {
  std::uint64_t seed = 11;
  std::filesystem::path output_dir = "run";
  DataSpec data;
  std::vector<DirectionSpec> directions;
  ModelConfig model;
  TrainConfig train;
  PruneSpec prune;
  HealSpec heal;
  EvalSpec eval;

  void validate() const;
  /// Directions used for pruning and healing, with their weights.
  std::vector<Direction> prune_directions(const LanguageSet& langs) const;
  std::vector<Direction> all_directions(const LanguageSet& langs) const;
  PruneConfig prune_config(const LanguageSet& langs) const;
};

/// Parses a JSON config. Unknown keys and invalid values raise ConfigError.
PipelineConfig parse_pipeline_config(const std::string& json_text);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

/// Canonical JSON of sections of the config, used for stage keys.
std::string data_json(const PipelineConfig& c);
std::string train_json(const PipelineConfig& c);
std::string prune_json(const PipelineConfig& c);
std::string heal_json(const PipelineConfig& c);
std::string eval_json(const PipelineConfig& c);
std::string to_json(const PipelineConfig& c);

}  // namespace cull
