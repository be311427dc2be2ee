#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "cull/pipeline/config.hpp"

namespace cull {

/// File layout below the output directory.
namespace layout {
inline constexpr const char* kCorpora = "corpora";
inline constexpr const char* kCheckpoints = "checkpoints";
inline constexpr const char* kTraces = "traces";
inline constexpr const char* kReports = "reports";
inline constexpr const char* kManifests = "manifests";

std::string corpus_file(const std::string& direction, Split split);
std::string kd_file(const std::string& direction);
}  // namespace layout

enum class Stage { GenData, Train, Prune, Heal, Eval, Report };

std::string to_string(Stage s);
std::vector<Stage> all_stages();

struct StageOutcome {
  Stage stage = Stage::GenData;
  bool cached = false;
  std::string key;
};

/// Runs one stage. A stage is skipped when its manifest records the same
/// input key and every recorded output still has the recorded hash. Missing
/// inputs raise DependencyError naming the artifact.
StageOutcome run_stage(const PipelineConfig& cfg, Stage stage);

/// All stages in order.
std::vector<StageOutcome> run_pipeline(const PipelineConfig& cfg);

/// Progress sink for stage messages (defaults to stderr).
void set_progress_sink(std::function<void(const std::string&)> sink);

}  // namespace cull
