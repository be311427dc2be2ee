// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "cull/data/vocab.hpp"
#include "cull/error.hpp"
#include "cull/metrics/bleu.hpp"
#include "cull/metrics/throughput.hpp"
#include "cull/model/checkpoint.hpp"
#include "cull/pipeline/pipeline.hpp"
#include "cull/util/hash.hpp"
#include "json.hpp"
#include "support.hpp"

using namespace cull;
namespace fs = std::filesystem;
using Json = nlohmann::json;
using Clock = std::chrono::steady_clock;
using test::MatD;
using test::random_matrix;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Json read_json(const fs::path& p) { return Json::parse(slurp(p)); }

// ---------------------------------------------------------------------------
// 1. Gradient correctness

Verdict gradients() {
  const auto t0 = Clock::now();
  double worst = 0;
  auto op = [&](std::vector<MatD> params, const test::LossFn& f) {
    worst = std::max(worst, test::finite_difference_check(params, f).max_rel_error);
  };
  using V = std::vector<Var<double>>;
  std::mt19937_64 rng(1);
  op({random_matrix(rng, 3, 4), random_matrix(rng, 4, 5)},
     [](auto&, const V& v) { return test::probe(matmul(v[0], v[1]), 1); });
  op({random_matrix(rng, 3, 4)}, [](auto&, const V& v) { return test::probe(transpose(v[0]), 2); });
  op({random_matrix(rng, 3, 4), random_matrix(rng, 3, 4)}, [](auto&, const V& v) { return test::probe(v[0] + v[1], 3); });
  op({random_matrix(rng, 3, 4), random_matrix(rng, 1, 4)},
     [](auto&, const V& v) { return test::probe(add_bias(v[0], v[1]), 4); });
  op({random_matrix(rng, 3, 4)}, [](auto&, const V& v) { return test::probe(scale(v[0], -1.5), 5); });
  op({random_matrix(rng, 3, 4), random_matrix(rng, 3, 4)},
     [](auto&, const V& v) { return test::probe(hadamard(v[0], v[1]), 6); });
  op({random_matrix(rng, 4, 6)}, [](auto&, const V& v) { return test::probe(softmax(v[0]), 7); });
  op({random_matrix(rng, 4, 6), random_matrix(rng, 1, 6), random_matrix(rng, 1, 6)},
     [](auto&, const V& v) { return test::probe(layer_norm(v[0], v[1], v[2]), 8); });
  op({random_matrix(rng, 4, 6, 2.0)}, [](auto&, const V& v) { return test::probe(gelu(v[0]), 9); });
  const std::vector<int> ids = {3, 0, 3, 5};
  op({random_matrix(rng, 6, 4)}, [&](auto&, const V& v) { return test::probe(embedding(v[0], ids), 10); });
  op({random_matrix(rng, 5, 8)}, [](auto&, const V& v) {
    std::mt19937_64 drop_rng(5);
    return test::probe(dropout(v[0], 0.3, drop_rng), 11);
  });
  for (const AttentionShape& shape : {AttentionShape{2, 3, 5, 2, false, {5, 2}}, AttentionShape{2, 4, 4, 2, true, {4, 3}}}) {
    op({random_matrix(rng, shape.batch * shape.q_len, 8), random_matrix(rng, shape.batch * shape.k_len, 8),
        random_matrix(rng, shape.batch * shape.k_len, 8)},
       [shape](auto&, const V& v) { return test::probe(attention(v[0], v[1], v[2], shape), 12); });
  }
  const std::vector<int> targets = {2, 0, 5, 1, 0, 3};
  op({random_matrix(rng, 6, 7)}, [&](auto&, const V& v) { return softmax_ce(v[0], targets, 0, 0.1); });

  const DirectionTags tags{vocab::tag_token(1), vocab::tag_token(0)};
  auto w = [](std::initializer_list<int> idx) {
    std::vector<int> out;
    for (int i : idx) out.push_back(vocab::word_token(i));
    return out;
  };
  for (Arch arch : {Arch::EncoderDecoder, Arch::DecoderOnly}) {
    const std::vector<LaidOutExample> ex = {layout_example(arch, w({1, 2, 3}), tags, w({3, 2, 1})),
                                            layout_example(arch, w({4, 5, 6, 7}), tags, w({9, 8}))};
    const std::vector<std::size_t> idx = {0, 1};
    const auto [batch, tgt] = collate(ex, idx);
    const LayeredModel m = build(test::tiny_config(arch));
    worst = std::max(worst, test::model_grad_check(m, batch, tgt).max_rel_error);
    LayeredModel masked = m;
    masked.mask = LayerMask{}.with({Section::Decoder, 1});
    LayeredModel lora = attach_lora(masked, LoraConfig{2, 4, 0.0, all_linear_roles()}, 3);
    std::mt19937_64 brng(4);
    std::normal_distribution<float> dist(0.0f, 0.2f);
    for (auto& [name, ad] : lora.adapters) {
      for (Eigen::Index i = 0; i < ad.b.size(); ++i) ad.b.data()[i] = dist(brng);
    }
    worst = std::max(worst, test::model_grad_check(lora, batch, tgt).max_rel_error);
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-3 && secs < 60,
          "max relative error " + fmt(worst, 3) + " (< 1e-3) in " + fmt(secs, 3) + " s (< 60 s)"};
}

// ---------------------------------------------------------------------------
// 2. spBLEU

Verdict bleu() {
  static const char* kWords[] = {"a", "bb", "abc", "w12", "w3", "x\xC3\xA9y", "zz", "q"};
  std::mt19937_64 rng(77);
  auto side = [&](std::size_t n, bool allow_empty) {
    std::uniform_int_distribution<int> len(allow_empty ? 0 : 1, 9), pick(0, 7);
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) {
      std::string s;
      const int l = len(rng);
      for (int k = 0; k < l; ++k) s += std::string(k ? " " : "") + kWords[pick(rng)];
      out.push_back(s);
    }
    return out;
  };
  double worst = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng() % 12;
    const auto hyps = side(n, true);
    const auto refs = side(n, false);
    std::vector<std::vector<std::string>> h, r;
    for (const auto& s : hyps) h.push_back(test::oracle_chunks(s));
    for (const auto& s : refs) r.push_back(test::oracle_chunks(s));
    worst = std::max(worst, std::abs(corpus_spbleu(hyps, refs).score - test::oracle_bleu(h, r)));
  }
  const std::vector<std::string> same = {"w1 w2 w3 w4 w5", "w7 w8 w9"};
  const double identical = corpus_spbleu(same, same).score;
  const double hand = corpus_bleu({{"a", "b", "c", "d"}}, {{"a", "b", "c", "d", "e"}}).score;
  return {worst <= 1e-6 && identical == 100.0 && std::abs(hand - 77.88) <= 0.01,
          "oracle max deviation " + fmt(worst, 3) + " over 50 corpora, identical " + fmt(identical, 6) +
              ", hand case " + fmt(hand, 6)};
}

// ---------------------------------------------------------------------------
// Rebuilt-model harness

/// `m` rebuilt without every layer of `removed`.
LayeredModel rebuild(const LayeredModel& m, const std::set<LayerId>& removed) {
  LayeredModel out = m;
  out.mask = LayerMask{};
  for (auto it = removed.rbegin(); it != removed.rend(); ++it) out = test::rebuild_without(out, *it);
  return out;
}

// ---------------------------------------------------------------------------
// 3. Masking identity

Verdict masking(const fs::path& configs) {
  int layers = 0;
  float worst = 0;
  bool decode_same = true;
  const DirectionTags tags{vocab::tag_token(2), vocab::tag_token(0)};
  const std::vector<std::vector<int>> sources = {{12, 20, 31, 14}, {40, 41, 42, 43, 44, 45, 46, 47}, {75}};
  for (const char* name : {"toy_multiway_encdec.json", "toy_multiway_deconly.json"}) {
    const PipelineConfig cfg = load_pipeline_config(configs / name);
    const LayeredModel m = build(cfg.model);
    for (LayerId id : m.config.layers()) {
      const LayeredModel r = test::rebuild_without(m, id);
      const LayerMask mask = LayerMask{}.with(id);
      for (const auto& src : sources) {
        std::vector<int> in, prefix = {tags.tgt_tag, 15, 16};
        if (m.config.arch == Arch::EncoderDecoder) {
          in = encoder_input(src, tags);
        } else {
          in = decoder_prompt(src, tags);
          prefix.erase(prefix.begin());
        }
        worst = std::max(worst, (forward(m, mask, in, prefix) - forward(r, in, prefix)).cwiseAbs().maxCoeff());
        const int budget = decode_budget(m.config, src.size());
        decode_same = decode_same && greedy_decode(m, mask, src, tags, budget) == greedy_decode(r, src, tags, budget);
      }
      ++layers;
    }
  }
  return {worst == 0.0f && decode_same, std::to_string(layers) + " layers over both architectures, max |masked - rebuilt| " +
                                            fmt(worst, 3) + ", greedy outputs " + (decode_same ? "equal" : "differ")};
}

// ---------------------------------------------------------------------------
// Pipeline runs

struct Run {
  PipelineConfig cfg;
  fs::path dir;
  double seconds = 0;
  std::string error;
};

Run run_fresh(const fs::path& configs, const std::string& name, const fs::path& dir) {
  Run r;
  r.cfg = load_pipeline_config(configs / name);
  r.cfg.output_dir = dir;
  r.dir = dir;
  fs::remove_all(dir);
  const auto t0 = Clock::now();
  try {
    run_pipeline(r.cfg);
  } catch (const std::exception& e) {
    r.error = e.what();
  }
  r.seconds = seconds_since(t0);
  return r;
}

std::map<std::string, std::string> tree_hashes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    out[fs::relative(e.path(), root).generic_string()] = file_hash(e.path());
  }
  return out;
}

/// Re-scores models from the run's own dev corpora with the oracle metric.
struct Harness {
  const Run& run;
  std::vector<ParallelCorpus> dev;
  std::vector<double> weights;

  explicit Harness(const Run& r) : run(r) {
    double total = 0;
    for (const auto& d : r.cfg.directions) {
      if (!d.prune) continue;
      ParallelCorpus c = read_corpus(r.dir / layout::corpus_file(d.src + "-" + d.tgt, Split::Dev));
      if (r.cfg.prune.dev_pairs > 0 && static_cast<int>(c.pairs.size()) > r.cfg.prune.dev_pairs) {
        c.pairs.resize(static_cast<std::size_t>(r.cfg.prune.dev_pairs));
      }
      dev.push_back(std::move(c));
      weights.push_back(d.weight);
      total += d.weight;
    }
    for (double& w : weights) w /= total;
  }

  /// Per-direction oracle BLEU of an unmasked model.
  std::vector<double> scores(const LayeredModel& m) const {
    std::vector<double> out;
    for (const auto& c : dev) {
      std::vector<std::vector<std::string>> h, r;
      for (const auto& p : c.pairs) {
        auto hyp = greedy_decode(m, p.src, c.direction.tags, decode_budget(m.config, p.src.size()));
        if (!hyp.empty() && hyp.back() == vocab::kEos) hyp.pop_back();
        h.push_back(test::oracle_chunks(vocab::render(hyp)));
        r.push_back(test::oracle_chunks(vocab::render(p.tgt)));
      }
      out.push_back(test::oracle_bleu(h, r));
    }
    return out;
  }

  double weighted_drop(const std::vector<double>& base, const std::vector<double>& s) const {
    double v = 0;
    for (std::size_t i = 0; i < s.size(); ++i) v += weights[i] * (base[i] - s[i]);
    return v;
  }
};

/// Layers removable after `removed`: remaining layers of configured sections
/// whose section keeps at least two layers.
std::vector<LayerId> harness_candidates(const PipelineConfig& cfg, const std::set<LayerId>& removed) {
  std::vector<LayerId> out;
  for (LayerId id : cfg.model.layers()) {
    if (!cfg.prune.sections.count(id.section) || removed.count(id)) continue;
    int left = 0;
    for (LayerId o : cfg.model.layers()) left += o.section == id.section && !removed.count(o);
    if (left >= 2) out.push_back(id);
  }
  return out;
}

/// Argmin with ties (within 1e-9) resolved to the lowest LayerId.
LayerId argmin(const std::vector<LayerId>& ids, const std::vector<double>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] < v[best] - 1e-9) best = i;
  }
  return ids[best];
}

// ---------------------------------------------------------------------------
// 4. Greedy contract against an exhaustive rebuilt-model sweep

Verdict greedy_contract(const Run& run) {
  const Harness h(run);
  const LayeredModel original = load(run.dir / "checkpoints/original.ckpt");
  const PruneTrace trace = read_trace(run.dir / "traces/cull.jsonl");
  const auto base = h.scores(original);
  double worst = 0;
  for (std::size_t d = 0; d < base.size(); ++d) worst = std::max(worst, std::abs(base[d] - trace.baseline[d]));
  int scored = 0;
  bool ok = true;
  std::string why;
  for (std::size_t s = 0; s < trace.scans.size(); ++s) {
    const std::set<LayerId> removed = trace.mask_after(s).removed;
    const auto cands = harness_candidates(run.cfg, removed);
    const auto& recs = trace.scans[s];
    std::vector<LayerId> traced;
    for (const auto& r : recs) traced.push_back(r.candidate);
    if (traced != cands) {
      ok = false;
      why += " scan " + std::to_string(s + 1) + " candidate set differs;";
      continue;
    }
    std::vector<double> drops;
    for (std::size_t i = 0; i < cands.size(); ++i) {
      std::set<LayerId> gone = removed;
      gone.insert(cands[i]);
      drops.push_back(h.weighted_drop(base, h.scores(rebuild(original, gone))));
      worst = std::max(worst, std::abs(drops.back() - recs[i].weighted_drop));
      ++scored;
    }
    const LayerId best = argmin(cands, drops);
    if (s == 0 && cands != original.config.layers()) {
      ok = false;
      why += " first scan is not exhaustive;";
    }
    if (s < trace.chosen.size() && trace.chosen[s].candidate != best) {
      ok = false;
      why += " step " + std::to_string(s + 1) + " committed " + trace.chosen[s].candidate.name() + " but argmin is " +
             best.name() + ";";
    }
  }
  ok = ok && worst <= 1e-6 && !trace.chosen.empty();
  std::string removed;
  for (const auto& c : trace.chosen) removed += " " + c.candidate.name();
  return {ok, std::to_string(scored) + " candidates re-scored on rebuilt models over " +
                  std::to_string(trace.scans.size()) + " scans, max |harness - trace| " + fmt(worst, 3) +
                  ", removed" + removed + why};
}

// ---------------------------------------------------------------------------
// 5. Baselines

Verdict baselines(const Run& encdec, const Run& deconly) {
  ModelConfig deep = deconly.cfg.model;
  deep.n_decoder_layers = 32;
  const std::vector<Section> order = {Section::Decoder};
  std::set<LayerId> top, block;
  for (int i : {28, 29, 30, 31}) top.insert({Section::Decoder, i});
  for (int i : {25, 26, 27, 28}) block.insert({Section::Decoder, i});
  const bool masks_ok = topn_mask(deep, 4, order).removed == top &&
                        blockwise_mask(deep, 4, Section::Decoder).removed == block;
  bool ok = masks_ok;
  std::string detail = std::string("32-layer masks ") + (masks_ok ? "match" : "differ");
  for (const Run* r : {&encdec, &deconly}) {
    const Json ev = read_json(r->dir / "reports/eval.json");
    std::map<std::string, double> at4;
    for (const auto& s : ev.at("strategies")) {
      if (s.at("k") == r->cfg.prune.n) at4[s.at("strategy")] = s.at("dev_weighted").get<double>();
    }
    const bool beats = at4.count("cull") && at4["cull"] >= at4["topn"] && at4["cull"] >= at4["blockwise"];
    // The multi-way encoder-decoder run is the graded scenario.
    if (r == &encdec) ok = ok && beats;
    detail += "; " + to_string(r->cfg.model.arch) + " k=" + std::to_string(r->cfg.prune.n) + " cull " +
              fmt(at4["cull"]) + " topn " + fmt(at4["topn"]) + " blockwise " + fmt(at4["blockwise"]);
  }
  return {ok, detail};
}

// ---------------------------------------------------------------------------
// 6. Stopping rule

Verdict stopping(const Run& encdec, const Run& deconly) {
  bool ok = true;
  std::string detail;
  {
    const PipelineConfig& cfg = deconly.cfg;
    const LanguageSet langs = gen_languages(cfg.data.languages, cfg.data.content_words, cfg.seed);
    PruneConfig pc = cfg.prune_config(langs);
    pc.threshold = 0;
    const Harness h(deconly);
    const PruneResult r = cull_prune(load(deconly.dir / "checkpoints/original.ckpt"), pc, h.dev);
    double min1 = std::numeric_limits<double>::infinity();
    for (const auto& rec : r.trace.scans.at(0)) min1 = std::min(min1, rec.weighted_drop);
    ok = ok && min1 > 0 && r.trace.chosen.empty() && r.model.mask.empty();
    detail += "decoder-only tau=0 removed " + std::to_string(r.trace.chosen.size()) + " (min first-scan drop " +
              fmt(min1) + ")";
  }
  for (const Run* run : {&encdec, &deconly}) {
    const PruneTrace t = read_trace(run->dir / "traces/cull.jsonl");
    const double tau = t.threshold;
    const double final_drop = t.chosen.empty() ? 0.0 : t.chosen.back().weighted_drop;
    double next = std::numeric_limits<double>::infinity();
    if (t.scans.size() > t.chosen.size()) {
      for (const auto& rec : t.scans.back()) next = std::min(next, rec.weighted_drop);
    }
    const Harness h(*run);
    const LayeredModel original = load(run->dir / "checkpoints/original.ckpt");
    const LayeredModel pruned = load(run->dir / "checkpoints/pruned.ckpt");
    const double measured = h.weighted_drop(h.scores(original), h.scores(rebuild(original, pruned.mask.removed)));
    const bool good = t.stop_reason == StopReason::Threshold && final_drop <= tau && measured <= tau + 1e-9 &&
                      next > tau && pruned.mask == t.final_mask();
    ok = ok && good;
    detail += "; " + to_string(run->cfg.model.arch) + " tau=" + fmt(tau) + " removed " +
              std::to_string(t.chosen.size()) + ", final drop " + fmt(final_drop) + " (rebuilt " + fmt(measured) +
              "), next best " + fmt(next);
  }
  return {ok, detail};
}

// ---------------------------------------------------------------------------
// 7. Healing

Verdict healing(const Run& run, double margin) {
  const Json ev = read_json(run.dir / "reports/eval.json");
  std::map<std::string, Json> models;
  for (const auto& m : ev.at("models")) models[m.at("name")] = m;
  bool ok = true;
  std::string detail = "dev per direction healed/pruned:";
  for (const auto& d : ev.at("prune_directions")) {
    const double healed = models.at("healed").at("dev").at(d.get<std::string>()).get<double>();
    const double pruned = models.at("pruned").at("dev").at(d.get<std::string>()).get<double>();
    ok = ok && healed > pruned;
    detail += " " + d.get<std::string>() + " " + fmt(healed) + "/" + fmt(pruned);
  }
  const double orig = models.at("original").at("dev_weighted").get<double>();
  const double healed = models.at("healed").at("dev_weighted").get<double>();
  ok = ok && healed >= orig - margin;
  detail += "; weighted healed " + fmt(healed) + " vs original " + fmt(orig) + " (margin " + fmt(margin) + ")";

  const LayeredModel pruned = load(run.dir / "checkpoints/pruned.ckpt");
  const LayeredModel healed_m = load(run.dir / "checkpoints/healed.ckpt");
  const LayeredModel fresh = attach_lora(pruned, run.cfg.heal.plan.lora, 9);
  const Harness h(run);
  float identity = 0;
  for (const auto& c : h.dev) {
    for (std::size_t i = 0; i < 8 && i < c.pairs.size(); ++i) {
      const auto src = encoder_input(c.pairs[i].src, c.direction.tags);
      std::vector<int> prefix = {c.direction.tags.tgt_tag};
      prefix.insert(prefix.end(), c.pairs[i].tgt.begin(), c.pairs[i].tgt.end());
      identity = std::max(identity, (forward(fresh, src, prefix) - forward(pruned, src, prefix)).cwiseAbs().maxCoeff());
    }
  }
  const bool frozen = healed_m.weights == pruned.weights && healed_m.mask == pruned.mask;
  ok = ok && identity <= 1e-6f && frozen && !healed_m.adapters.empty();
  detail += "; fresh adapters max |delta| " + fmt(identity, 3) + ", base weights " +
            (frozen ? "bitwise unchanged" : "changed");
  return {ok, detail};
}

// ---------------------------------------------------------------------------
// 8. Throughput

Verdict throughput(const Run& run) {
  const LayeredModel original = load(run.dir / "checkpoints/original.ckpt");
  const PruneTrace horizon = read_trace(run.dir / "traces/cull_horizon.jsonl");
  if (horizon.chosen.size() < 3) return {false, "horizon trace has fewer than 3 removals"};
  LayeredModel pruned = original;
  pruned.mask = horizon.mask_after(3);
  std::vector<TranslationPrompt> prompts;
  std::vector<ParallelCorpus> test;
  for (const auto& d : run.cfg.directions) {
    test.push_back(read_corpus(run.dir / layout::corpus_file(d.src + "-" + d.tgt, Split::Test)));
  }
  for (std::size_t i = 0; prompts.size() < 120; ++i) {
    for (const auto& c : test) {
      if (prompts.size() < 120) prompts.push_back({c.pairs.at(i).src, c.direction.tags});
    }
  }
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  double orig[2], fast[2];
  for (int session = 0; session < 2; ++session) {
    std::vector<double> o, p;
    for (int r = 0; r < 3; ++r) {
      o.push_back(measure_throughput(original, prompts, 12).tokens_per_second);
      p.push_back(measure_throughput(pruned, prompts, 12).tokens_per_second);
    }
    orig[session] = median(o);
    fast[session] = median(p);
  }
  const double s0 = fast[0] / orig[0], s1 = fast[1] / orig[1];
  const double drift = std::max(std::abs(orig[1] - orig[0]) / orig[0], std::abs(fast[1] - fast[0]) / fast[0]);
  std::string removed;
  for (LayerId id : pruned.mask.removed) removed += " " + id.name();
  return {s0 >= 1.1 && s1 >= 1.1 && drift <= 0.25,
          "decoder-only without" + removed + ": speedup " + fmt(s0) + " / " + fmt(s1) + " (>= 1.1), " +
              fmt(orig[0]) + " -> " + fmt(fast[0]) + " tokens/s, repeat drift " + fmt(100 * drift, 3) + "% (<= 25%)"};
}

// ---------------------------------------------------------------------------
// 9. Weight scaling

Verdict weight_scaling(const Run& run) {
  const PipelineConfig& cfg = run.cfg;
  const LanguageSet langs = gen_languages(cfg.data.languages, cfg.data.content_words, cfg.seed);
  const LayeredModel original = load(run.dir / "checkpoints/original.ckpt");
  const Harness h(run);
  std::vector<std::vector<LayerId>> sequences;
  std::string detail;
  for (double factor : {1.0, 7.3, 0.01}) {
    PruneConfig pc = cfg.prune_config(langs);
    pc.threshold = std::numeric_limits<double>::infinity();
    pc.max_removals = 3;
    pc.dev_pairs = 32;
    for (auto& d : pc.directions) d.weight *= factor;
    const PruneTrace t = cull_prune(original, pc, h.dev).trace;
    std::vector<LayerId> seq;
    for (const auto& c : t.chosen) seq.push_back(c.candidate);
    sequences.push_back(seq);
    detail += (detail.empty() ? "x" : "; x") + fmt(factor) + ":";
    for (LayerId id : seq) detail += " " + id.name();
  }
  const bool ok = sequences[0].size() == 3 && sequences[1] == sequences[0] && sequences[2] == sequences[0];
  return {ok, detail};
}

// ---------------------------------------------------------------------------
// 10. Reproducibility

Verdict reproducibility(const Run& a, const Run& b) {
  if (!a.error.empty()) return {false, "first run failed: " + a.error};
  if (!b.error.empty()) return {false, "second run failed: " + b.error};
  std::string missing;
  for (const char* f : {"reports/table1_strategies.csv", "reports/table2_models.csv", "reports/table2_throughput.csv",
                        "reports/fig3_layers_removed.csv", "reports/fig4_importance.csv",
                        "reports/fig5_normalized_drops.csv", "reports/eval.json", "traces/cull.jsonl",
                        "checkpoints/healed.ckpt"}) {
    if (!fs::exists(a.dir / f)) missing += std::string(" ") + f;
  }
  auto comparable = [](std::map<std::string, std::string> h) {
    std::erase_if(h, [](const auto& kv) {
      return kv.first == "manifests/eval.json" || kv.first == "manifests/report.json" ||
             kv.first == "reports/throughput.json" ||
             kv.first == "reports/table2_throughput.csv";
    });
    return h;
  };
  const auto ha = comparable(tree_hashes(a.dir));
  const auto hb = comparable(tree_hashes(b.dir));
  std::vector<std::string> differ;
  for (const auto& [f, hash] : ha) {
    if (!hb.count(f) || hb.at(f) != hash) differ.push_back(f);
  }
  if (ha.size() != hb.size()) differ.push_back("(file sets differ)");

  const auto before = tree_hashes(a.dir);
  bool all_cached = true;
  for (const auto& s : run_pipeline(a.cfg)) all_cached = all_cached && s.cached;
  const bool untouched = tree_hashes(a.dir) == before;

  std::map<std::string, std::string> reports;
  for (const char* f : {"reports/table1_strategies.csv", "reports/table2_models.csv", "reports/fig3_layers_removed.csv",
                        "reports/fig4_importance.csv", "reports/fig5_normalized_drops.csv"}) {
    reports[f] = slurp(a.dir / f);
    fs::remove(a.dir / f);
  }
  run_stage(a.cfg, Stage::Report);
  bool regenerated = true;
  for (const auto& [f, text] : reports) regenerated = regenerated && slurp(a.dir / f) == text;

  const bool ok = a.seconds < 1800 && missing.empty() && differ.empty() && all_cached && untouched && regenerated;
  std::string detail = "fresh run " + fmt(a.seconds, 4) + " s (< 1800 s), rerun " + fmt(b.seconds, 4) + " s, " +
                       std::to_string(ha.size()) + " files compared, " + std::to_string(differ.size()) + " differ";
  if (!differ.empty()) detail += " (first: " + differ.front() + ")";
  if (!missing.empty()) detail += ", missing" + missing;
  detail += std::string(", cached rerun ") + (all_cached && untouched ? "unchanged" : "changed") + ", reports " +
            (regenerated ? "regenerate identically" : "differ on regeneration");
  return {ok, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::string configs = CULL_CONFIG_DIR;
  std::string workdir = "acceptance_runs";
  double margin = 1.0;
  app.add_option("--configs", configs, "Directory holding the toy configs");
  app.add_option("--workdir", workdir, "Directory for pipeline runs (wiped)");
  app.add_option("--heal-margin", margin, "Allowed weighted dev spBLEU loss of the healed model");
  CLI11_PARSE(app, argc, argv);

  fs::create_directories(workdir);
  std::ofstream log(fs::path(workdir) / "pipeline.log");
  set_progress_sink([&log](const std::string& msg) { log << msg << '\n' << std::flush; });

  int failures = 0;
  auto report = [&](int id, const std::string& title, const std::function<Verdict()>& check) {
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    failures += !v.pass;
    std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << id << " " << title << ": " << v.detail << std::endl;
  };

  report(1, "gradient correctness", gradients);
  report(2, "spBLEU against oracle", bleu);
  report(3, "masking identity", [&] { return masking(configs); });

  const fs::path root = fs::absolute(workdir);
  const Run encdec = run_fresh(configs, "toy_multiway_encdec.json", root / "encdec");
  const Run rerun = run_fresh(configs, "toy_multiway_encdec.json", root / "encdec_rerun");
  const Run deconly = run_fresh(configs, "toy_multiway_deconly.json", root / "deconly");
  auto needs = [](const Run& r, const std::function<Verdict()>& f) {
    return [&r, f] { return r.error.empty() ? f() : Verdict{false, "pipeline failed: " + r.error}; };
  };

  report(4, "greedy contract", needs(encdec, [&] { return greedy_contract(encdec); }));
  report(5, "baseline strategies", needs(deconly, needs(encdec, [&] { return baselines(encdec, deconly); })));
  report(6, "stopping rule", needs(deconly, needs(encdec, [&] { return stopping(encdec, deconly); })));
  report(7, "healing", needs(encdec, [&] { return healing(encdec, margin); }));
  report(8, "throughput", needs(deconly, [&] { return throughput(deconly); }));
  report(9, "weight scaling invariance", needs(encdec, [&] { return weight_scaling(encdec); }));
  report(10, "reproducibility", [&] { return reproducibility(encdec, rerun); });
  return failures == 0 ? 0 : 1;
}
