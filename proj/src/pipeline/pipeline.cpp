#include "cull/pipeline/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>

#include "json.hpp"

#include "cull/error.hpp"
#include "cull/healing/healing.hpp"
#include "cull/metrics/throughput.hpp"
#include "cull/model/checkpoint.hpp"
#include "cull/pruning/pruning.hpp"
#include "cull/training/trainer.hpp"
#include "cull/util/hash.hpp"

namespace cull {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace layout {
std::string corpus_file(const std::string& direction, Split split) {
  return std::string(kCorpora) + "/" + direction + "." + to_string(split) + ".tsv";
}
std::string kd_file(const std::string& direction) { return std::string(kCorpora) + "/kd." + direction + ".tsv"; }
}  // namespace layout

std::string to_string(Stage s) {
  switch (s) {
    case Stage::GenData: return "gen-data";
    case Stage::Train: return "train";
    case Stage::Prune: return "prune";
    case Stage::Heal: return "heal";
    case Stage::Eval: return "eval";
    case Stage::Report: return "report";
  }
  return "?";
}

std::vector<Stage> all_stages() {
  return {Stage::GenData, Stage::Train, Stage::Prune, Stage::Heal, Stage::Eval, Stage::Report};
}

namespace {

std::function<void(const std::string&)>& sink() {
  static std::function<void(const std::string&)> s = [](const std::string& msg) { std::cerr << msg << '\n'; };
  return s;
}

void progress(Stage stage, const std::string& msg) { sink()("[" + to_string(stage) + "] " + msg); }

std::string fixed(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// Stage inputs and outputs are tracked by path relative to the output directory.
class Workspace {
 public:
  Workspace(const PipelineConfig& cfg, Stage stage) : root_(cfg.output_dir), stage_(stage) {
    for (const char* d : {layout::kCorpora, layout::kCheckpoints, layout::kTraces, layout::kReports, layout::kManifests}) {
      std::error_code ec;
      fs::create_directories(root_ / d, ec);
      if (ec) throw ConfigError("output directory " + (root_ / d).string() + " is not writable: " + ec.message());
    }
  }

  fs::path path(const std::string& rel) const { return root_ / rel; }
  bool exists(const std::string& rel) const { return fs::exists(path(rel)); }

  fs::path input(const std::string& rel) {
    if (!exists(rel)) throw DependencyError(rel, to_string(stage_));
    inputs_[rel] = file_hash(path(rel));
    return path(rel);
  }

  void write(const std::string& rel, const std::string& bytes) {
    const fs::path p = path(rel);
    const fs::path tmp = p.string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw Error("cannot write " + tmp.string());
      out << bytes;
      if (!out) throw Error("write failed for " + tmp.string());
    }
    fs::rename(tmp, p);
    outputs_.push_back(rel);
  }
  void written(const std::string& rel) { outputs_.push_back(rel); }

  std::string key(const std::string& config_json) const {
    Fnv1a h;
    h.update(to_string(stage_)).update(config_json);
    for (const auto& [rel, hash] : inputs_) h.update(rel).update(hash);
    return h.hex();
  }

  bool cached(const std::string& key, const std::string& name) const {
    const fs::path mf = root_ / layout::kManifests / (name + ".json");
    if (!fs::exists(mf)) return false;
    try {
      std::ifstream in(mf);
      const Json j = Json::parse(in);
      if (j.at("key") != key) return false;
      for (const auto& [rel, hash] : j.at("outputs").items()) {
        if (!exists(rel) || file_hash(path(rel)) != hash.get<std::string>()) return false;
      }
      return true;
    } catch (const std::exception&) {
      return false;
    }
  }

  void commit(const std::string& key, const std::string& name) {
    Json j;
    j["stage"] = name;
    j["key"] = key;
    Json in = Json::object(), out = Json::object();
    for (const auto& [rel, hash] : inputs_) in[rel] = hash;
    for (const auto& rel : outputs_) out[rel] = file_hash(path(rel));
    j["inputs"] = in;
    j["outputs"] = out;
    std::ofstream f(root_ / layout::kManifests / (name + ".json"), std::ios::trunc);
    f << j.dump(2) << '\n';
  }

 private:
  fs::path root_;
  Stage stage_;
  std::map<std::string, std::string> inputs_;
  std::vector<std::string> outputs_;
};

LanguageSet languages(const PipelineConfig& cfg) {
  return gen_languages(cfg.data.languages, cfg.data.content_words, cfg.seed);
}

std::vector<ParallelCorpus> load_split(Workspace& ws, std::span<const Direction> dirs, Split split) {
  std::vector<ParallelCorpus> out;
  for (const auto& d : dirs) out.push_back(read_corpus(ws.input(layout::corpus_file(d.name(), split))));
  return out;
}

LayeredModel load_model(Workspace& ws, const std::string& rel) { return load(ws.input(rel)); }

void save_model(Workspace& ws, const std::string& rel, const LayeredModel& m) { ws.write(rel, serialize(m)); }

Json layer_list(const LayerMask& mask) {
  Json j = Json::array();
  for (LayerId id : mask.removed) j.push_back(id.name());
  return j;
}

Json read_json(Workspace& ws, const std::string& rel) {
  std::ifstream in(ws.input(rel));
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(rel + ": " + e.what());
  }
}

StageOutcome gen_data(const PipelineConfig& cfg) {
  Workspace ws(cfg, Stage::GenData);
  const std::string key = ws.key(data_json(cfg));
  const auto langs = languages(cfg);
  const auto dirs = cfg.all_directions(langs);
  if (ws.cached(key, "gen-data")) return {Stage::GenData, true, key};
  for (const auto& d : dirs) {
    const auto s = gen_splits(langs, d, cfg.data.sizes, cfg.data.length, cfg.seed, cfg.data.content_words);
    for (const ParallelCorpus* c : {&s.train, &s.dev, &s.test}) {
      const std::string rel = layout::corpus_file(d.name(), c->split);
      write_corpus(ws.path(rel), *c);
      ws.written(rel);
    }
    progress(Stage::GenData, d.name() + ": " + std::to_string(s.train.size()) + " train, " +
                                 std::to_string(s.dev.size()) + " dev, " + std::to_string(s.test.size()) + " test");
  }
  ws.commit(key, "gen-data");
  return {Stage::GenData, false, key};
}

StageOutcome train(const PipelineConfig& cfg) {
  Workspace ws(cfg, Stage::Train);
  const auto dirs = cfg.all_directions(languages(cfg));
  auto tr = load_split(ws, dirs, Split::Train);
  const auto dev = load_split(ws, dirs, Split::Dev);
  const auto test = load_split(ws, dirs, Split::Test);
  const std::string key = ws.key(train_json(cfg) + data_json(cfg));
  if (ws.cached(key, "train")) return {Stage::Train, true, key};
  for (std::size_t i = 0; i < tr.size(); ++i) {
    const int n = cfg.directions[i].train_pairs;
    if (n > 0) tr[i].pairs.resize(static_cast<std::size_t>(n));
  }
  progress(Stage::Train, "training " + to_string(cfg.model.arch) + " with " + std::to_string(cfg.model.total_layers()) +
                             " layers for up to " + std::to_string(cfg.train.steps) + " steps");
  const auto r = train_base(cfg.model, tr, dev, cfg.train, test);
  progress(Stage::Train, r.status + ", dev spBLEU " + fixed(r.final_dev_spbleu) + " after " +
                             std::to_string(r.log.empty() ? 0 : r.log.back().step) + " steps");
  save_model(ws, std::string(layout::kCheckpoints) + "/original.ckpt", r.model);
  ws.write(std::string(layout::kReports) + "/train_log.jsonl", train_log_jsonl(r.log));
  Json st;
  st["status"] = r.status;
  st["reached_target"] = r.reached_target;
  st["final_dev_spbleu"] = r.final_dev_spbleu;
  st["steps"] = r.log.empty() ? 0 : r.log.back().step;
  ws.write(std::string(layout::kReports) + "/train_status.json", st.dump(2) + "\n");
  ws.commit(key, "train");
  return {Stage::Train, false, key};
}

const std::string kOriginal = std::string(layout::kCheckpoints) + "/original.ckpt";
const std::string kPruned = std::string(layout::kCheckpoints) + "/pruned.ckpt";
const std::string kHealed = std::string(layout::kCheckpoints) + "/healed.ckpt";
const std::string kHorizonTrace = std::string(layout::kTraces) + "/cull_horizon.jsonl";
const std::string kTrace = std::string(layout::kTraces) + "/cull.jsonl";

std::string healed_alt(HealMode primary) {
  return std::string(layout::kCheckpoints) + "/healed_" + to_string(primary == HealMode::Lora ? HealMode::Full : HealMode::Lora) +
         ".ckpt";
}

// The greedy order does not depend on the threshold, so one run past the
// threshold serves both the pruned model and the layers-removed curve.
PruneTrace horizon_trace(const PipelineConfig& cfg, const LayeredModel& original, std::span<const ParallelCorpus> dev,
                         const PruneConfig& pc) {
  Workspace ws(cfg, Stage::Prune);
  ws.input(kOriginal);
  for (const auto& d : pc.directions) ws.input(layout::corpus_file(d.name(), Split::Dev));
  Json j = Json::parse(prune_json(cfg));
  j.erase("threshold");
  j.erase("strategy");
  j.erase("n");
  j.erase("max_removals");
  Json w = Json::array();
  for (const auto& d : pc.directions) w.push_back({d.name(), d.weight});
  j["weights"] = w;
  const std::string key = ws.key(j.dump());
  if (!ws.cached(key, "prune-horizon")) {
    PruneConfig h = pc;
    h.threshold = std::numeric_limits<double>::infinity();
    h.max_removals = cfg.prune.horizon;
    progress(Stage::Prune, "greedy scan over " + std::to_string(cfg.prune.horizon) + " removals");
    const auto r = cull_prune(original, h, dev);
    ws.write(kHorizonTrace, trace_jsonl(r.trace));
    ws.commit(key, "prune-horizon");
  }
  return read_trace(ws.path(kHorizonTrace));
}

StageOutcome prune(const PipelineConfig& cfg) {
  Workspace ws(cfg, Stage::Prune);
  const auto langs = languages(cfg);
  const PruneConfig pc = cfg.prune_config(langs);
  const LayeredModel original = load_model(ws, kOriginal);
  const auto dev = load_split(ws, pc.directions, Split::Dev);
  const std::string key = ws.key(prune_json(cfg));
  if (ws.cached(key, "prune")) return {Stage::Prune, true, key};

  std::optional<PruneTrace> horizon;
  if (cfg.prune.horizon > 0) {
    horizon = horizon_trace(cfg, original, dev, pc);
    ws.input(kHorizonTrace);
  }
  LayeredModel pruned = original;
  std::string stop = "fixed count";
  if (cfg.prune.strategy == Strategy::Cull) {
    std::optional<PruneTrace> t;
    if (horizon) {
      try {
        t = truncate_trace(*horizon, pc.threshold, pc.max_removals);
      } catch (const ContractError&) {
        progress(Stage::Prune, "scan horizon too short for the threshold, pruning directly");
      }
    }
    if (!t) t = cull_prune(original, pc, dev).trace;
    ws.write(kTrace, trace_jsonl(*t));
    pruned.mask = t->final_mask();
    stop = to_string(t->stop_reason);
  } else if (cfg.prune.strategy == Strategy::TopN) {
    pruned = topn_prune(original, cfg.prune.n, cfg.prune.topn_order);
  } else {
    pruned = blockwise_prune(original, cfg.prune.n, cfg.prune.block_section);
  }
  std::string names;
  for (LayerId id : pruned.mask.removed) names += (names.empty() ? "" : " ") + id.name();
  progress(Stage::Prune, to_string(cfg.prune.strategy) + " removed " + std::to_string(pruned.mask.size()) + " layers [" +
                             names + "], stop: " + stop);
  save_model(ws, kPruned, pruned);
  Json s;
  s["strategy"] = to_string(cfg.prune.strategy);
  s["removed"] = layer_list(pruned.mask);
  s["stop_reason"] = stop;
  s["remaining_layers"] = pruned.config.total_layers() - static_cast<int>(pruned.mask.size());
  ws.write(std::string(layout::kReports) + "/prune_summary.json", s.dump(2) + "\n");
  ws.commit(key, "prune");
  return {Stage::Prune, false, key};
}

StageOutcome heal_stage(const PipelineConfig& cfg) {
  Workspace ws(cfg, Stage::Heal);
  const auto dirs = cfg.prune_directions(languages(cfg));
  const LayeredModel original = load_model(ws, kOriginal);
  const LayeredModel pruned = load_model(ws, kPruned);
  const auto train = load_split(ws, dirs, Split::Train);
  const auto dev = load_split(ws, dirs, Split::Dev);
  const std::string key = ws.key(heal_json(cfg));
  if (ws.cached(key, "heal")) return {Stage::Heal, true, key};

  const HealingPlan& plan = cfg.heal.plan;
  Json summary;
  summary["mode"] = to_string(plan.mode);
  if (pruned.mask.empty()) {
    progress(Stage::Heal, "pruned model has no removed layers, nothing to heal");
    save_model(ws, kHealed, pruned);
    summary["healed"] = false;
    ws.write(std::string(layout::kReports) + "/heal_summary.json", summary.dump(2) + "\n");
    ws.commit(key, "heal");
    return {Stage::Heal, false, key};
  }

  int kd_size = plan.kd_sentences_per_direction;
  for (int n : cfg.heal.kd_sweep) kd_size = std::max(kd_size, n);
  std::vector<ParallelCorpus> sources;
  for (const auto& c : train) sources.push_back(length_filter(c));
  HealingPlan big = plan;
  big.kd_sentences_per_direction = kd_size;
  progress(Stage::Heal, "decoding " + std::to_string(kd_size) + " KD targets per direction");
  const KdCorpus kd = build_kd_corpus(original, sources, big);
  for (const auto& c : kd.corpora) {
    write_corpus(ws.path(layout::kd_file(c.direction.name())), c);
    ws.written(layout::kd_file(c.direction.name()));
  }

  auto run = [&](HealMode mode, int n) {
    HealingPlan p = plan;
    p.mode = mode;
    p.kd_sentences_per_direction = n;
    progress(Stage::Heal, to_string(mode) + " healing on " + std::to_string(n) + " pairs per direction");
    return heal(pruned, kd.head(n), p);
  };
  const auto primary = run(plan.mode, plan.kd_sentences_per_direction);
  save_model(ws, kHealed, primary.model);
  ws.write(std::string(layout::kReports) + "/heal_log.jsonl", train_log_jsonl(primary.log));
  summary["healed"] = true;
  summary["kd_teacher"] = kd.teacher_hash;
  summary["kd_sentences_per_direction"] = plan.kd_sentences_per_direction;
  if (!primary.log.empty()) {
    summary["initial_loss"] = primary.log.front().loss;
    summary["final_loss"] = primary.log.back().loss;
  }
  if (cfg.heal.compare_full) {
    const HealMode other = plan.mode == HealMode::Lora ? HealMode::Full : HealMode::Lora;
    const auto alt = run(other, plan.kd_sentences_per_direction);
    save_model(ws, healed_alt(plan.mode), alt.model);
    ws.write(std::string(layout::kReports) + "/heal_" + to_string(other) + "_log.jsonl", train_log_jsonl(alt.log));
  }
  if (!cfg.heal.kd_sweep.empty()) {
    const double before = mean_spbleu(pruned, pruned.mask, dev);
    Json rows = Json::array();
    for (int n : cfg.heal.kd_sweep) {
      double after = 0;
      if (n == plan.kd_sentences_per_direction) {
        after = mean_spbleu(primary.model, primary.model.mask, dev);
      } else {
        const auto h = run(plan.mode, n);
        after = mean_spbleu(h.model, h.model.mask, dev);
      }
      progress(Stage::Heal, "KD size " + std::to_string(n) + ": dev spBLEU " + fixed(before) + " -> " + fixed(after));
      rows.push_back({{"size", n}, {"pruned_spbleu", before}, {"healed_spbleu", after}});
    }
    summary["kd_sweep"] = rows;
  }
  ws.write(std::string(layout::kReports) + "/heal_summary.json", summary.dump(2) + "\n");
  ws.commit(key, "heal");
  return {Stage::Heal, false, key};
}

std::vector<TranslationPrompt> throughput_prompts(std::span<const ParallelCorpus> test, int count) {
  std::vector<TranslationPrompt> out;
  for (std::size_t i = 0; static_cast<int>(out.size()) < count; ++i) {
    bool any = false;
    for (const auto& c : test) {
      if (i < c.pairs.size() && static_cast<int>(out.size()) < count) {
        out.push_back({c.pairs[i].src, c.direction.tags});
        any = true;
      }
    }
    if (!any) break;
  }
  return out;
}

Json score_map(const std::vector<std::string>& names, const std::vector<double>& scores) {
  Json j = Json::object();
  for (std::size_t i = 0; i < names.size(); ++i) j[names[i]] = scores[i];
  return j;
}

StageOutcome eval(const PipelineConfig& cfg) {
  Workspace ws(cfg, Stage::Eval);
  const auto langs = languages(cfg);
  const auto dirs = cfg.all_directions(langs);
  const PruneConfig pc = cfg.prune_config(langs);
  const auto dev = load_split(ws, dirs, Split::Dev);
  const auto test = load_split(ws, dirs, Split::Test);
  const auto pdev = select_dev(pc.directions, dev);
  const auto ptest = select_dev(pc.directions, test);
  std::vector<std::pair<std::string, LayeredModel>> models;
  models.emplace_back("original", load_model(ws, kOriginal));
  models.emplace_back("pruned", load_model(ws, kPruned));
  models.emplace_back("healed", load_model(ws, kHealed));
  if (cfg.heal.compare_full && ws.exists(healed_alt(cfg.heal.plan.mode))) {
    const HealMode other = cfg.heal.plan.mode == HealMode::Lora ? HealMode::Full : HealMode::Lora;
    models.emplace_back("healed_" + to_string(other), load_model(ws, healed_alt(cfg.heal.plan.mode)));
  }
  std::optional<PruneTrace> horizon;
  if (ws.exists(kHorizonTrace)) horizon = read_trace(ws.input(kHorizonTrace));
  const std::string key = ws.key(eval_json(cfg) + prune_json(cfg) + heal_json(cfg));
  if (ws.cached(key, "eval")) return {Stage::Eval, true, key};

  std::vector<std::string> names, pnames;
  for (const auto& d : dirs) names.push_back(d.name());
  for (const auto& d : pc.directions) pnames.push_back(d.name());
  const auto weights = pc.normalized_weights();
  auto weighted = [&](const std::vector<double>& s) {
    double v = 0;
    for (std::size_t i = 0; i < s.size(); ++i) v += weights[i] * s[i];
    return v;
  };

  Json out;
  out["directions"] = names;
  out["prune_directions"] = pnames;
  out["weights"] = weights;
  const auto prompts = throughput_prompts(ptest, cfg.eval.throughput_prompts);
  Json jm = Json::array(), jt = Json::array();
  for (const auto& [name, m] : models) {
    progress(Stage::Eval, "scoring " + name);
    Json e;
    e["name"] = name;
    e["removed"] = layer_list(m.mask);
    e["layers"] = m.config.total_layers() - static_cast<int>(m.mask.size());
    e["adapters"] = !m.adapters.empty();
    const auto d = evaluate_mask(m, m.mask, dev);
    const auto t = evaluate_mask(m, m.mask, test);
    e["dev"] = score_map(names, d);
    e["test"] = score_map(names, t);
    e["dev_weighted"] = weighted(evaluate_mask(m, m.mask, pdev));
    e["test_weighted"] = weighted(evaluate_mask(m, m.mask, ptest));
    jm.push_back(e);

    // Timed with adapters folded into the base weights.
    const LayeredModel merged = merge_lora(m);
    std::vector<Throughput> runs;
    for (int r = 0; r < cfg.eval.throughput_repeats; ++r) {
      runs.push_back(measure_throughput(merged, prompts, cfg.eval.throughput_max_new));
    }
    Json tj;
    tj["name"] = name;
    tj["layers"] = e["layers"];
    tj["runs"] = Json::array();
    for (const auto& r : runs) tj["runs"].push_back(r.tokens_per_second);
    std::sort(runs.begin(), runs.end(),
              [](const Throughput& a, const Throughput& b) { return a.tokens_per_second < b.tokens_per_second; });
    tj["tokens_per_second"] = runs[runs.size() / 2].tokens_per_second;
    tj["timed_tokens"] = runs[runs.size() / 2].total_tokens;
    jt.push_back(tj);
  }
  out["models"] = jm;

  const LayeredModel& original = models.front().second;
  std::vector<int> ks = {1};
  if (cfg.prune.n > 1) ks.push_back(cfg.prune.n);
  Json js = Json::array();
  for (int k : ks) {
    std::vector<std::pair<std::string, LayerMask>> masks;
    if (horizon && static_cast<std::size_t>(k) <= horizon->chosen.size()) masks.emplace_back("cull", horizon->mask_after(k));
    try {
      masks.emplace_back("topn", topn_mask(original.config, k, cfg.prune.topn_order));
    } catch (const ConfigError&) {
    }
    try {
      masks.emplace_back("blockwise", blockwise_mask(original.config, k, cfg.prune.block_section));
    } catch (const ConfigError&) {
    }
    for (const auto& [strategy, mask] : masks) {
      progress(Stage::Eval, strategy + " at " + std::to_string(k) + " removals");
      const auto s = evaluate_mask(original, mask, pdev);
      Json e;
      e["k"] = k;
      e["strategy"] = strategy;
      e["removed"] = layer_list(mask);
      e["dev"] = score_map(pnames, s);
      e["dev_weighted"] = weighted(s);
      js.push_back(e);
    }
  }
  out["strategies"] = js;
  ws.write(std::string(layout::kReports) + "/eval.json", out.dump(2) + "\n");
  Json tp;
  tp["prompts"] = prompts.size();
  tp["max_new"] = cfg.eval.throughput_max_new;
  tp["models"] = jt;
  ws.write(std::string(layout::kReports) + "/throughput.json", tp.dump(2) + "\n");
  ws.commit(key, "eval");
  return {Stage::Eval, false, key};
}

StageOutcome report(const PipelineConfig& cfg) {
  Workspace ws(cfg, Stage::Report);
  const Json ev = read_json(ws, std::string(layout::kReports) + "/eval.json");
  const Json tp = read_json(ws, std::string(layout::kReports) + "/throughput.json");
  std::optional<Json> heal_summary;
  if (ws.exists(std::string(layout::kReports) + "/heal_summary.json")) {
    heal_summary = read_json(ws, std::string(layout::kReports) + "/heal_summary.json");
  }
  std::optional<PruneTrace> horizon, trace;
  if (ws.exists(kHorizonTrace)) horizon = read_trace(ws.input(kHorizonTrace));
  if (ws.exists(kTrace)) trace = read_trace(ws.input(kTrace));
  const std::string key = ws.key("report");
  if (ws.cached(key, "report")) return {Stage::Report, true, key};

  const auto names = ev.at("directions").get<std::vector<std::string>>();
  const auto pnames = ev.at("prune_directions").get<std::vector<std::string>>();
  const std::string reports = std::string(layout::kReports) + "/";

  // Per-model test quality, and speed.
  std::string t2 = "model,layers";
  for (const auto& n : names) t2 += "," + n;
  t2 += ",weighted\n";
  for (const auto& m : ev.at("models")) {
    t2 += m.at("name").get<std::string>() + "," + std::to_string(m.at("layers").get<int>());
    for (const auto& n : names) t2 += "," + fixed(m.at("test").at(n).get<double>());
    t2 += "," + fixed(m.at("test_weighted").get<double>()) + "\n";
  }
  ws.write(reports + "table2_models.csv", t2);
  std::string t2s = "model,layers,tokens_per_second,speedup\n";
  const double base_tps = tp.at("models").at(0).at("tokens_per_second").get<double>();
  for (const auto& m : tp.at("models")) {
    const double tps = m.at("tokens_per_second").get<double>();
    t2s += m.at("name").get<std::string>() + "," + std::to_string(m.at("layers").get<int>()) + "," + fixed(tps, 1) +
           "," + fixed(tps / base_tps, 3) + "\n";
  }
  ws.write(reports + "table2_throughput.csv", t2s);

  // Strategies at equal removal counts.
  std::string t1 = "removed,strategy,layers";
  for (const auto& n : pnames) t1 += "," + n;
  t1 += ",weighted\n";
  for (const auto& s : ev.at("strategies")) {
    std::string layers;
    for (const auto& l : s.at("removed")) layers += (layers.empty() ? "" : " ") + l.get<std::string>();
    t1 += std::to_string(s.at("k").get<int>()) + "," + s.at("strategy").get<std::string>() + "," + layers;
    for (const auto& n : pnames) t1 += "," + fixed(s.at("dev").at(n).get<double>());
    t1 += "," + fixed(s.at("dev_weighted").get<double>()) + "\n";
  }
  ws.write(reports + "table1_strategies.csv", t1);

  if (horizon) {
    std::string f3 = "removed,layer";
    for (const auto& n : horizon->directions) f3 += "," + n;
    f3 += ",weighted\n";
    auto row = [&](std::size_t k, const std::string& layer, const std::vector<double>& s) {
      double w = 0;
      for (std::size_t i = 0; i < s.size(); ++i) w += horizon->weights[i] * s[i];
      f3 += std::to_string(k) + "," + layer;
      for (double v : s) f3 += "," + fixed(v, 4);
      f3 += "," + fixed(w, 4) + "\n";
    };
    row(0, "", horizon->baseline);
    for (std::size_t k = 0; k < horizon->chosen.size(); ++k) {
      row(k + 1, horizon->chosen[k].candidate.name(), horizon->chosen[k].spbleu);
    }
    ws.write(reports + "fig3_layers_removed.csv", f3);
  }
  if (trace && !trace->scans.empty()) {
    ws.write(reports + "fig4_importance.csv", importance_csv(importance_matrix(*trace)));
    try {
      ws.write(reports + "fig5_normalized_drops.csv", normalized_drops_csv(normalized_direction_drops(*trace)));
    } catch (const ContractError& e) {
      progress(Stage::Report, std::string("skipping normalized drops: ") + e.what());
    }
  }
  if (heal_summary && heal_summary->contains("kd_sweep")) {
    std::string t3 = "kd_pairs_per_direction,pruned,healed\n";
    for (const auto& r : heal_summary->at("kd_sweep")) {
      t3 += std::to_string(r.at("size").get<int>()) + "," + fixed(r.at("pruned_spbleu").get<double>()) + "," +
            fixed(r.at("healed_spbleu").get<double>()) + "\n";
    }
    ws.write(reports + "table3_kd_sweep.csv", t3);
  }
  std::string modes = "model";
  for (const auto& n : pnames) modes += "," + n;
  modes += ",weighted\n";
  for (const auto& m : ev.at("models")) {
    const std::string name = m.at("name");
    if (name.rfind("healed", 0) != 0 && name != "pruned") continue;
    modes += name;
    for (const auto& n : pnames) modes += "," + fixed(m.at("dev").at(n).get<double>());
    modes += "," + fixed(m.at("dev_weighted").get<double>()) + "\n";
  }
  ws.write(reports + "heal_modes.csv", modes);
  ws.commit(key, "report");
  progress(Stage::Report, "wrote reports to " + ws.path(layout::kReports).string());
  return {Stage::Report, false, key};
}

}  // namespace

void set_progress_sink(std::function<void(const std::string&)> s) { sink() = std::move(s); }

StageOutcome run_stage(const PipelineConfig& cfg, Stage stage) {
  StageOutcome r;
  switch (stage) {
    case Stage::GenData: r = gen_data(cfg); break;
    case Stage::Train: r = train(cfg); break;
    case Stage::Prune: r = prune(cfg); break;
    case Stage::Heal: r = heal_stage(cfg); break;
    case Stage::Eval: r = eval(cfg); break;
    case Stage::Report: r = report(cfg); break;
  }
  if (r.cached) progress(stage, "up to date (" + r.key + ")");
  return r;
}

std::vector<StageOutcome> run_pipeline(const PipelineConfig& cfg) {
  std::vector<StageOutcome> out;
  for (Stage s : all_stages()) out.push_back(run_stage(cfg, s));
  return out;
}

}  // namespace cull
