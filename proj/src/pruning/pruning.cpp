#include "cull/pruning/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "cull/error.hpp"
#include "cull/metrics/throughput.hpp"
#include "cull/util/parallel.hpp"

namespace cull {

std::string to_string(StopRule r) { return r == StopRule::Cumulative ? "cumulative" : "per-step"; }

StopRule parse_stop_rule(const std::string& s) {
  if (s == "cumulative") return StopRule::Cumulative;
  if (s == "per-step") return StopRule::PerStep;
  throw ConfigError("unknown stop rule '" + s + "'");
}

std::string to_string(StopReason r) {
  switch (r) {
    case StopReason::Threshold: return "threshold";
    case StopReason::MaxRemovals: return "max-removals";
    case StopReason::Exhausted: return "exhausted";
  }
  return "?";
}

StopReason parse_stop_reason(const std::string& s) {
  if (s == "threshold") return StopReason::Threshold;
  if (s == "max-removals") return StopReason::MaxRemovals;
  if (s == "exhausted") return StopReason::Exhausted;
  throw FormatError("unknown stop reason '" + s + "'");
}

void PruneConfig::validate() const {
  if (!(threshold >= 0)) throw ConfigError("prune: threshold must be >= 0");
  if (directions.empty()) throw ConfigError("prune: no directions");
  validate_directions(directions);
  if (sections.empty()) throw ConfigError("prune: no candidate sections");
  if (max_removals && *max_removals < 0) throw ConfigError("prune: max removals must be >= 0");
  if (dev_pairs < 0) throw ConfigError("prune: dev pairs must be >= 0");
}

std::vector<double> PruneConfig::normalized_weights() const {
  double total = 0;
  for (const auto& d : directions) total += d.weight;
  std::vector<double> w;
  for (const auto& d : directions) w.push_back(d.weight / total);
  return w;
}

LayerMask PruneTrace::mask_after(std::size_t k) const {
  if (k > chosen.size()) throw ContractError("mask_after: only " + std::to_string(chosen.size()) + " removals");
  LayerMask m = initial_mask;
  for (std::size_t i = 0; i < k; ++i) m.removed.insert(chosen[i].candidate);
  return m;
}

LayerMask PruneTrace::final_mask() const { return mask_after(chosen.size()); }

std::vector<ParallelCorpus> select_dev(std::span<const Direction> directions, std::span<const ParallelCorpus> dev,
                                       int limit) {
  std::vector<ParallelCorpus> out;
  for (const auto& d : directions) {
    auto it = std::find_if(dev.begin(), dev.end(), [&](const ParallelCorpus& c) { return c.direction.name() == d.name(); });
    if (it == dev.end()) throw ConfigError("no dev corpus for direction " + d.name());
    if (it->pairs.empty()) throw ConfigError("dev corpus for direction " + d.name() + " is empty");
    ParallelCorpus c = *it;
    if (limit > 0 && static_cast<int>(c.pairs.size()) > limit) c.pairs.resize(static_cast<std::size_t>(limit));
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<double> evaluate_mask(const LayeredModel& m, const LayerMask& mask, std::span<const ParallelCorpus> dev) {
  std::vector<double> out;
  for (const auto& c : dev) out.push_back(score_corpus(m, mask, c).score);
  return out;
}

namespace {

double weighted_sum(std::span<const double> w, std::span<const double> v) {
  double s = 0;
  for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * v[i];
  return s;
}

bool exceeds(const PruneTrace& t, const ImportanceRecord& best, double threshold) {
  double prev = 0;
  if (t.stop_rule == StopRule::PerStep && !t.chosen.empty()) prev = t.chosen.back().weighted_drop;
  return best.weighted_drop - prev > threshold;
}

const ImportanceRecord& argmin(const std::vector<ImportanceRecord>& scan) {
  // Records are in LayerId order, so the first strict minimum wins ties.
  const ImportanceRecord* best = &scan.front();
  for (const auto& r : scan) {
    if (r.weighted_drop < best->weighted_drop) best = &r;
  }
  return *best;
}

}  // namespace

ImportanceRecord evaluate_layer(const LayeredModel& m, LayerId layer, std::span<const ParallelCorpus> dev,
                                std::span<const double> baseline, std::span<const double> weights) {
  if (!m.config.has_layer(layer)) throw ContractError("evaluate_layer: no layer " + layer.name());
  if (m.mask.contains(layer)) throw ContractError("evaluate_layer: " + layer.name() + " is already removed");
  if (baseline.size() != dev.size() || weights.size() != dev.size()) {
    throw DimensionError("evaluate_layer: baseline/weights do not match the dev corpora");
  }
  ImportanceRecord r;
  r.candidate = layer;
  r.spbleu = evaluate_mask(m, m.mask.with(layer), dev);
  for (std::size_t d = 0; d < dev.size(); ++d) r.drop.push_back(baseline[d] - r.spbleu[d]);
  r.weighted_drop = weighted_sum(weights, r.drop);
  return r;
}

std::vector<LayerId> prune_candidates(const ModelConfig& config, const LayerMask& mask,
                                      const std::set<Section>& sections) {
  std::vector<LayerId> out;
  for (Section s : sections) {
    int remaining = 0;
    for (int i = 0; i < config.layer_count(s); ++i) remaining += !mask.contains({s, i});
    if (remaining < 2) continue;
    for (int i = 0; i < config.layer_count(s); ++i) {
      if (!mask.contains({s, i})) out.push_back({s, i});
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

PruneResult cull_prune(const LayeredModel& m, const PruneConfig& cfg, std::span<const ParallelCorpus> dev) {
  cfg.validate();
  const auto corpora = select_dev(cfg.directions, dev, cfg.dev_pairs);
  for (Section s : cfg.sections) {
    if (m.config.layer_count(s) == 0) throw ConfigError("prune: model has no " + to_string(s) + " layers");
  }

  PruneTrace t;
  for (const auto& d : cfg.directions) t.directions.push_back(d.name());
  t.weights = cfg.normalized_weights();
  t.threshold = cfg.threshold;
  t.stop_rule = cfg.stop_rule;
  t.initial_mask = m.mask;
  t.baseline = evaluate_mask(m, m.mask, corpora);
  t.candidates = prune_candidates(m.config, m.mask, cfg.sections);

  LayeredModel work = m;
  for (;;) {
    if (cfg.max_removals && static_cast<int>(t.chosen.size()) >= *cfg.max_removals) {
      t.stop_reason = StopReason::MaxRemovals;
      break;
    }
    const auto cands = prune_candidates(m.config, work.mask, cfg.sections);
    if (cands.empty()) {
      t.stop_reason = StopReason::Exhausted;
      break;
    }
    const int step = static_cast<int>(t.chosen.size()) + 1;
    std::vector<ImportanceRecord> scan(cands.size());
    parallel_for(cands.size(), [&](std::size_t i) {
      scan[i] = evaluate_layer(work, cands[i], corpora, t.baseline, t.weights);
      scan[i].step = step;
    });
    t.scans.push_back(scan);
    const ImportanceRecord best = argmin(t.scans.back());
    if (exceeds(t, best, cfg.threshold)) {
      t.stop_reason = StopReason::Threshold;
      break;
    }
    t.chosen.push_back(best);
    work.mask.removed.insert(best.candidate);
  }
  return {std::move(work), std::move(t)};
}

PruneTrace truncate_trace(const PruneTrace& trace, double threshold, std::optional<int> max_removals) {
  if (!(threshold >= 0)) throw ConfigError("truncate_trace: threshold must be >= 0");
  PruneTrace t = trace;
  t.threshold = threshold;
  t.scans.clear();
  t.chosen.clear();
  for (std::size_t s = 0;; ++s) {
    if (max_removals && static_cast<int>(t.chosen.size()) >= *max_removals) {
      t.stop_reason = StopReason::MaxRemovals;
      return t;
    }
    if (s == trace.scans.size()) {
      if (trace.stop_reason == StopReason::Exhausted) {
        t.stop_reason = StopReason::Exhausted;
        return t;
      }
      throw ContractError("truncate_trace: source trace stops before the requested threshold");
    }
    t.scans.push_back(trace.scans[s]);
    const ImportanceRecord& best = argmin(t.scans.back());
    if (exceeds(t, best, threshold)) {
      t.stop_reason = StopReason::Threshold;
      return t;
    }
    if (s == trace.chosen.size()) throw ContractError("truncate_trace: source trace stops before the requested threshold");
    t.chosen.push_back(trace.chosen[s]);
  }
}

LayerMask topn_mask(const ModelConfig& config, int n, std::span<const Section> order) {
  if (n < 0) throw ConfigError("topn: n must be >= 0");
  if (n >= config.total_layers()) {
    throw ConfigError("topn: n = " + std::to_string(n) + " must be below the layer count " +
                      std::to_string(config.total_layers()));
  }
  LayerMask mask;
  int left = n;
  for (Section s : order) {
    for (int i = config.layer_count(s) - 1; i >= 0 && left > 0; --i, --left) mask.removed.insert({s, i});
  }
  if (left > 0) throw ConfigError("topn: section order does not cover " + std::to_string(n) + " layers");
  return mask;
}

LayerMask blockwise_mask(const ModelConfig& config, int n, Section section) {
  const int layers = config.layer_count(section);
  if (n < 0) throw ConfigError("blockwise: n must be >= 0");
  const int last = layers - 4;
  if (last < 0 || n > last + 1) {
    throw ConfigError("blockwise: a block of " + std::to_string(n) + " ending at index L-4 does not fit " +
                      std::to_string(layers) + " " + to_string(section) + " layers");
  }
  LayerMask mask;
  for (int i = last - n + 1; i <= last; ++i) mask.removed.insert({section, i});
  return mask;
}

LayeredModel topn_prune(const LayeredModel& m, int n, std::span<const Section> order) {
  LayeredModel out = m;
  for (LayerId id : topn_mask(m.config, n, order).removed) out.mask.removed.insert(id);
  return out;
}

LayeredModel blockwise_prune(const LayeredModel& m, int n, Section section) {
  LayeredModel out = m;
  for (LayerId id : blockwise_mask(m.config, n, section).removed) out.mask.removed.insert(id);
  return out;
}

ImportanceMatrix importance_matrix(const PruneTrace& trace) {
  if (trace.scans.empty()) throw ContractError("importance_matrix: trace has no scans");
  ImportanceMatrix mx;
  mx.layers = trace.candidates;
  LayerMask removed = trace.initial_mask;
  for (std::size_t s = 0; s < trace.scans.size(); ++s) {
    std::vector<ImportanceMatrix::Cell> state(mx.layers.size(), ImportanceMatrix::Cell::Empty);
    std::vector<double> drop(mx.layers.size(), 0.0);
    for (std::size_t j = 0; j < mx.layers.size(); ++j) {
      if (removed.contains(mx.layers[j])) state[j] = ImportanceMatrix::Cell::Removed;
    }
    for (const auto& r : trace.scans[s]) {
      auto it = std::find(mx.layers.begin(), mx.layers.end(), r.candidate);
      if (it == mx.layers.end()) throw ContractError("importance_matrix: " + r.candidate.name() + " is not a candidate");
      const auto j = static_cast<std::size_t>(it - mx.layers.begin());
      state[j] = ImportanceMatrix::Cell::Value;
      drop[j] = r.weighted_drop;
    }
    mx.state.push_back(std::move(state));
    mx.drop.push_back(std::move(drop));
    if (s < trace.chosen.size()) removed.removed.insert(trace.chosen[s].candidate);
  }
  return mx;
}

NormalizedDrops normalized_direction_drops(const PruneTrace& trace, std::size_t scan) {
  if (scan >= trace.scans.size()) throw ContractError("normalized_direction_drops: no scan " + std::to_string(scan));
  for (std::size_t d = 0; d < trace.baseline.size(); ++d) {
    if (!(trace.baseline[d] > 0)) {
      throw ContractError("normalized_direction_drops: baseline of " + trace.directions[d] + " is not positive");
    }
  }
  NormalizedDrops nd;
  nd.directions = trace.directions;
  for (const auto& r : trace.scans[scan]) {
    nd.layers.push_back(r.candidate);
    std::vector<double> row;
    for (std::size_t d = 0; d < r.drop.size(); ++d) row.push_back(r.drop[d] / trace.baseline[d]);
    nd.values.push_back(std::move(row));
  }
  return nd;
}

}  // namespace cull
