#include "cull/training/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "json.hpp"

#include "cull/data/vocab.hpp"
#include "cull/error.hpp"
#include "cull/metrics/throughput.hpp"
#include "cull/model/checkpoint.hpp"
#include "cull/training/adam.hpp"
#include "cull/training/batch.hpp"
#include "cull/util/hash.hpp"
#include "cull/util/parallel.hpp"

namespace cull {

void TrainConfig::validate() const {
  if (steps <= 0) throw ConfigError("train: steps must be positive");
  if (!(learning_rate > 0)) throw ConfigError("train: learning rate must be positive");
  if (batch_size <= 0) throw ConfigError("train: batch size must be positive");
  if (!(target_spbleu > 0 && target_spbleu <= 100)) throw ConfigError("train: target spBLEU must be in (0, 100]");
  if (label_smoothing < 0 || label_smoothing >= 1) throw ConfigError("train: label smoothing must be in [0, 1)");
}

std::string train_log_jsonl(std::span<const TrainLogEntry> log) {
  std::string out;
  for (const auto& e : log) {
    nlohmann::ordered_json j;
    j["step"] = e.step;
    j["loss"] = e.loss;
    if (e.dev_spbleu) j["dev_spbleu"] = *e.dev_spbleu;
    out += j.dump() + "\n";
  }
  return out;
}

namespace {

std::map<std::string, Tensor*> trainable(LayeredModel& m, const FitOptions& opts) {
  std::map<std::string, Tensor*> params;
  if (opts.train_base) {
    for (auto& [name, t] : m.weights) params[name] = &t;
  }
  if (opts.train_adapters) {
    for (auto& [name, ad] : m.adapters) {
      params[name + ".lora_a"] = &ad.a;
      params[name + ".lora_b"] = &ad.b;
    }
  }
  return params;
}

struct MicroResult {
  double loss = 0;
  int tokens = 0;
  std::map<std::string, Tensor> grads;
};

int count_targets(std::span<const int> targets) {
  return static_cast<int>(std::count_if(targets.begin(), targets.end(), [](int t) { return t != vocab::kPad; }));
}

}  // namespace

FitResult fit(LayeredModel& m, std::span<const LaidOutExample> examples, const FitOptions& opts) {
  FitResult result;
  if (opts.steps <= 0) return result;
  if (examples.empty()) throw ContractError("fit: no training examples");
  if (opts.batch_size <= 0) throw ConfigError("fit: batch size must be positive");
  if (!opts.train_base && !opts.train_adapters) throw ConfigError("fit: nothing to train");
  if (opts.train_adapters && m.adapters.empty()) throw ConfigError("fit: adapter training without adapters");

  auto params = trainable(m, opts);
  Adam adam;
  std::mt19937_64 rng(opts.seed);
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;
  const int micro = opts.micro_batch > 0 ? opts.micro_batch : opts.batch_size;

  for (int step = 1; step <= opts.steps; ++step) {
    std::vector<std::size_t> batch;
    batch.reserve(static_cast<std::size_t>(opts.batch_size));
    for (int i = 0; i < opts.batch_size; ++i) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(order[cursor++]);
    }
    const std::size_t n_micro = (batch.size() + static_cast<std::size_t>(micro) - 1) / static_cast<std::size_t>(micro);
    std::vector<std::pair<SequenceBatch, std::vector<int>>> collated(n_micro);
    int total_tokens = 0;
    for (std::size_t k = 0; k < n_micro; ++k) {
      const std::size_t lo = k * static_cast<std::size_t>(micro);
      const std::size_t hi = std::min(batch.size(), lo + static_cast<std::size_t>(micro));
      collated[k] = collate(examples, std::span(batch).subspan(lo, hi - lo));
      total_tokens += count_targets(collated[k].second);
    }
    if (total_tokens == 0) throw DegenerateBatchError("fit: batch has no target tokens");

    std::vector<MicroResult> parts(n_micro);
    try {
      parallel_for(n_micro, [&](std::size_t k) {
        std::mt19937_64 drop_rng(Fnv1a().update(opts.seed).update(static_cast<std::uint64_t>(step)).update(k).digest());
        ForwardOptions fo;
        fo.train_base = opts.train_base;
        fo.train_adapters = opts.train_adapters;
        fo.dropout = opts.dropout;
        fo.rng = &drop_rng;
        Graph<float> g(true);
        BoundParams<float> bound;
        const auto& [sb, targets] = collated[k];
        Var<float> logits = forward_logits(g, m, m.mask, sb, fo, &bound);
        Var<float> loss = softmax_ce(logits, targets, vocab::kPad, static_cast<float>(opts.label_smoothing));
        MicroResult& r = parts[k];
        r.tokens = count_targets(targets);
        r.loss = loss.value()(0, 0);
        g.backward(loss, static_cast<float>(r.tokens) / static_cast<float>(total_tokens));
        for (const auto& [name, v] : bound) {
          if (g.has_grad(v)) r.grads.emplace(name, g.grad(v));
        }
      });
    } catch (const NumericError& e) {
      if (!opts.divergence_dump.empty()) save(m, opts.divergence_dump);
      throw TrainingError("training diverged at step " + std::to_string(step) + " (seed " + std::to_string(opts.seed) +
                          "): " + e.what());
    }

    std::map<std::string, Tensor> grads;
    double loss = 0;
    for (auto& part : parts) {
      loss += part.loss * part.tokens / total_tokens;
      for (auto& [name, gr] : part.grads) {
        auto it = grads.find(name);
        if (it == grads.end()) {
          grads.emplace(name, std::move(gr));
        } else {
          it->second += gr;
        }
      }
    }
    if (!std::isfinite(loss)) {
      if (!opts.divergence_dump.empty()) save(m, opts.divergence_dump);
      throw TrainingError("training loss is not finite at step " + std::to_string(step) + " (seed " +
                          std::to_string(opts.seed) + ")");
    }
    if (opts.clip_norm > 0) {
      double sq = 0;
      for (const auto& [name, gr] : grads) sq += gr.cast<double>().squaredNorm();
      const double norm = std::sqrt(sq);
      if (norm > opts.clip_norm) {
        const float f = static_cast<float>(opts.clip_norm / norm);
        for (auto& [name, gr] : grads) gr *= f;
      }
    }
    double lr = opts.learning_rate;
    if (opts.warmup_steps > 0 && step <= opts.warmup_steps) lr *= static_cast<double>(step) / opts.warmup_steps;
    adam.step(params, grads, lr);

    TrainLogEntry entry{step, loss, std::nullopt};
    bool stop = false;
    const bool eval_now = opts.on_eval && opts.eval_every > 0 && (step % opts.eval_every == 0 || step == opts.steps);
    if (eval_now) stop = opts.on_eval(m, step, entry);
    if (step == 1 || step % 25 == 0 || step == opts.steps || eval_now || stop) result.log.push_back(entry);
    result.steps_run = step;
    if (stop) {
      result.stopped_early = step < opts.steps;
      break;
    }
  }
  return result;
}

double mean_spbleu(const LayeredModel& m, const LayerMask& mask, std::span<const ParallelCorpus> corpora, int limit) {
  if (corpora.empty()) throw ContractError("mean_spbleu: no corpora");
  double total = 0;
  for (const auto& c : corpora) {
    if (limit > 0 && static_cast<int>(c.pairs.size()) > limit) {
      ParallelCorpus head = c;
      head.pairs.resize(static_cast<std::size_t>(limit));
      total += score_corpus(m, mask, head).score;
    } else {
      total += score_corpus(m, mask, c).score;
    }
  }
  return total / static_cast<double>(corpora.size());
}

TrainResult train_base(const ModelConfig& config, std::span<const ParallelCorpus> train,
                       std::span<const ParallelCorpus> dev, const TrainConfig& tc,
                       std::span<const ParallelCorpus> held_out) {
  tc.validate();
  if (train.empty()) throw ConfigError("train: no training corpora");
  std::set<std::string> names;
  for (const auto& c : train) names.insert(c.direction.name());
  for (const auto& c : dev) {
    if (!names.count(c.direction.name())) throw ConfigError("train: dev direction " + c.direction.name() + " has no training data");
  }

  auto key = [](const ParallelCorpus& c, const SentencePair& p) {
    return Fnv1a().update(c.direction.name()).update(vocab::render(p.src)).update("\t").update(vocab::render(p.tgt)).digest();
  };
  std::set<std::uint64_t> seen;
  for (const auto& c : train) {
    for (const auto& p : c.pairs) seen.insert(key(c, p));
  }
  auto check_disjoint = [&](std::span<const ParallelCorpus> corpora) {
    for (const auto& c : corpora) {
      for (const auto& p : c.pairs) {
        if (seen.count(key(c, p))) {
          throw ContractError("train: " + to_string(c.split) + " pair of " + c.direction.name() + " occurs in training data");
        }
      }
    }
  };
  check_disjoint(dev);
  check_disjoint(held_out);

  TrainResult out;
  out.model = build(config);
  const auto examples = make_examples(config.arch, train);
  FitOptions fo;
  fo.steps = tc.steps;
  fo.learning_rate = tc.learning_rate;
  fo.batch_size = tc.batch_size;
  fo.seed = tc.seed;
  fo.label_smoothing = tc.label_smoothing;
  fo.warmup_steps = tc.warmup_steps;
  fo.clip_norm = tc.clip_norm;
  fo.train_base = true;
  fo.eval_every = dev.empty() ? 0 : tc.eval_every;
  fo.on_eval = [&](const LayeredModel& m, int, TrainLogEntry& e) {
    e.dev_spbleu = mean_spbleu(m, m.mask, dev, tc.eval_pairs);
    return *e.dev_spbleu >= tc.target_spbleu;
  };
  auto fr = fit(out.model, examples, fo);
  out.log = std::move(fr.log);
  if (!dev.empty()) {
    out.final_dev_spbleu = mean_spbleu(out.model, out.model.mask, dev);
    out.reached_target = out.final_dev_spbleu >= tc.target_spbleu;
  }
  out.status = out.reached_target ? "reached target" : "warning: step budget exhausted before target";
  return out;
}

}  // namespace cull
