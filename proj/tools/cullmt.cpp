// Command-line driver for the layer-pruning pipeline.
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "cull/error.hpp"
#include "cull/pipeline/pipeline.hpp"

namespace {

enum ExitCode : int {
  kOk = 0,
  kUnexpected = 1,
  kConfig = 2,
  kDependency = 3,
  kTraining = 4,
  kFormat = 5,
  kNumeric = 6,
  kMeasurement = 7,
  kContract = 8,
};

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> strategy;
  std::optional<int> n;
  std::optional<double> threshold;
  std::optional<std::string> mode;
  std::optional<std::string> out;
};

cull::PipelineConfig resolve(const Overrides& o) {
  cull::PipelineConfig cfg = cull::load_pipeline_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.strategy) cfg.prune.strategy = cull::parse_strategy(*o.strategy);
  if (o.n) cfg.prune.n = *o.n;
  if (o.threshold) cfg.prune.threshold = *o.threshold;
  if (o.mode) cfg.heal.plan.mode = cull::parse_heal_mode(*o.mode);
  if (o.out) cfg.output_dir = *o.out;
  cfg.validate();
  return cfg;
}

int run(const Overrides& o, const std::optional<cull::Stage>& stage) {
  const auto cfg = resolve(o);
  if (stage) {
    cull::run_stage(cfg, *stage);
  } else {
    cull::run_pipeline(cfg);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Greedy layer pruning and healing for multilingual translation models"};
  app.require_subcommand(1);
  Overrides o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "Pipeline config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "Global seed override");
    sub->add_option("--out", o.out, "Output directory override");
  };

  std::optional<cull::Stage> stage;
  struct Command {
    const char* name;
    const char* help;
    std::optional<cull::Stage> stage;
  };
  const Command commands[] = {
      {"gen-data", "Generate the synthetic parallel corpora", cull::Stage::GenData},
      {"train", "Train the base model", cull::Stage::Train},
      {"prune", "Prune layers with the configured strategy", cull::Stage::Prune},
      {"heal", "Distil the original model into the pruned one", cull::Stage::Heal},
      {"eval", "Score and time the original, pruned and healed models", cull::Stage::Eval},
      {"report", "Write tables and figure data", cull::Stage::Report},
      {"run", "Run every stage in order", std::nullopt},
  };
  for (const auto& c : commands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    add_common(sub);
    if (!c.stage || *c.stage == cull::Stage::Prune) {
      sub->add_option("--strategy", o.strategy, "cull, topn or blockwise")
          ->check(CLI::IsMember({"cull", "topn", "blockwise"}));
      sub->add_option("--n", o.n, "Layers removed by topn / blockwise")->check(CLI::NonNegativeNumber);
      sub->add_option("--threshold", o.threshold, "Maximum tolerated weighted spBLEU drop")
          ->check(CLI::NonNegativeNumber);
    }
    if (!c.stage || *c.stage == cull::Stage::Heal) {
      sub->add_option("--mode", o.mode, "lora or full")->check(CLI::IsMember({"lora", "full"}));
    }
    sub->callback([&stage, s = c.stage] { stage = s; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    return run(o, stage);
  } catch (const cull::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const cull::DependencyError& e) {
    std::cerr << "dependency error: " << e.what() << '\n';
    return kDependency;
  } catch (const cull::TrainingError& e) {
    std::cerr << "training error: " << e.what() << '\n';
    return kTraining;
  } catch (const cull::FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return kFormat;
  } catch (const cull::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const cull::MeasurementError& e) {
    std::cerr << "measurement error: " << e.what() << '\n';
    return kMeasurement;
  } catch (const cull::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kContract;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << '\n';
    return kUnexpected;
  }
}
