#include "cull/healing/healing.hpp"

#include <algorithm>
#include <iterator>

#include "cull/data/vocab.hpp"
#include "cull/error.hpp"
#include "cull/metrics/throughput.hpp"
#include "cull/model/checkpoint.hpp"
#include "cull/training/batch.hpp"

namespace cull {

std::string to_string(HealMode m) { return m == HealMode::Lora ? "lora" : "full"; }

HealMode parse_heal_mode(const std::string& s) {
  if (s == "lora") return HealMode::Lora;
  if (s == "full") return HealMode::Full;
  throw ConfigError("unknown healing mode '" + s + "' (expected lora or full)");
}

void HealingPlan::validate() const {
  if (kd_sentences_per_direction <= 0) throw ConfigError("heal: KD size must be positive");
  if (optimizer.learning_rate < 0) throw ConfigError("heal: learning rate must be >= 0");
  if (optimizer.steps < 0) throw ConfigError("heal: steps must be >= 0");
  if (optimizer.batch_size <= 0) throw ConfigError("heal: batch size must be positive");
  if (label_smoothing < 0 || label_smoothing >= 1) throw ConfigError("heal: label smoothing must be in [0, 1)");
  if (mode == HealMode::Lora) {
    if (lora.rank <= 0 || !(lora.alpha > 0) || lora.dropout < 0 || lora.dropout >= 1 || lora.targets.empty()) {
      throw ConfigError("heal: invalid LoRA config");
    }
  }
}

double HealingPlan::learning_rate() const {
  if (optimizer.learning_rate > 0) return optimizer.learning_rate;
  return mode == HealMode::Lora ? 1e-3 : 3e-4;
}

std::size_t KdCorpus::size() const {
  std::size_t n = 0;
  for (const auto& c : corpora) n += c.size();
  return n;
}

KdCorpus KdCorpus::head(int n) const {
  KdCorpus out = *this;
  for (auto& c : out.corpora) {
    if (static_cast<int>(c.pairs.size()) < n) {
      throw ConfigError("kd: " + c.direction.name() + " has only " + std::to_string(c.pairs.size()) + " pairs");
    }
    c.pairs.resize(static_cast<std::size_t>(n));
  }
  return out;
}

KdCorpus build_kd_corpus(const LayeredModel& teacher, std::span<const ParallelCorpus> train, const HealingPlan& plan) {
  plan.validate();
  if (!teacher.mask.empty()) throw ContractError("kd: the teacher must be the unpruned model");
  KdCorpus kd;
  kd.teacher_hash = model_hash(teacher);
  const auto n = static_cast<std::size_t>(plan.kd_sentences_per_direction);
  for (const auto& c : train) {
    if (c.pairs.size() < n) {
      throw ConfigError("kd: " + c.direction.name() + " offers " + std::to_string(c.pairs.size()) + " sources, " +
                        std::to_string(n) + " requested");
    }
    ParallelCorpus src = c;
    src.pairs.resize(n);
    const auto hyps = translate(teacher, teacher.mask, src);
    ParallelCorpus out;
    out.direction = c.direction;
    out.split = Split::Train;
    out.meta = {{"kd", "true"}, {"teacher", kd.teacher_hash}};
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<int> words;
      std::copy_if(hyps[i].begin(), hyps[i].end(), std::back_inserter(words), vocab::is_word);
      out.pairs.push_back({src.pairs[i].src, std::move(words)});
    }
    kd.corpora.push_back(std::move(out));
  }
  return kd;
}

HealResult heal(const LayeredModel& pruned, const KdCorpus& kd, const HealingPlan& plan) {
  plan.validate();
  if (pruned.mask.empty()) throw ContractError("heal: model has no removed layers");
  if (kd.size() == 0) throw ContractError("heal: empty KD corpus");
  HealResult out{pruned, {}};
  if (plan.optimizer.steps == 0) return out;

  FitOptions fo;
  fo.steps = plan.optimizer.steps;
  fo.learning_rate = plan.learning_rate();
  fo.batch_size = plan.optimizer.batch_size;
  fo.seed = plan.optimizer.seed;
  fo.label_smoothing = plan.label_smoothing;
  if (plan.mode == HealMode::Lora) {
    if (out.model.adapters.empty()) out.model = attach_lora(std::move(out.model), plan.lora, plan.optimizer.seed);
    fo.train_base = false;
    fo.train_adapters = true;
    fo.dropout = true;
  } else {
    if (!out.model.adapters.empty()) throw ContractError("heal: full mode on a model with adapters");
    fo.train_base = true;
  }
  const auto examples = make_examples(pruned.config.arch, kd.corpora);
  out.log = fit(out.model, examples, fo).log;
  if (plan.merge_adapters) out.model = merge_lora(std::move(out.model));
  return out;
}

std::vector<KdSweepRow> kd_size_sweep(const LayeredModel& pruned, const LayeredModel& teacher,
                                      std::span<const ParallelCorpus> train, std::span<const ParallelCorpus> dev,
                                      std::span<const int> sizes, const HealingPlan& plan) {
  if (sizes.empty()) throw ConfigError("kd sweep: no sizes");
  if (!std::is_sorted(sizes.begin(), sizes.end()) || sizes.front() <= 0) {
    throw ConfigError("kd sweep: sizes must be positive and ascending");
  }
  // Sources are taken in corpus order, so smaller KD sets are prefixes of the largest.
  HealingPlan big = plan;
  big.kd_sentences_per_direction = sizes.back();
  const KdCorpus full = build_kd_corpus(teacher, train, big);
  const double before = mean_spbleu(pruned, pruned.mask, dev);
  std::vector<KdSweepRow> rows;
  for (int n : sizes) {
    HealingPlan p = plan;
    p.kd_sentences_per_direction = n;
    const auto healed = heal(pruned, full.head(n), p);
    rows.push_back({n, before, mean_spbleu(healed.model, healed.model.mask, dev)});
  }
  return rows;
}

}  // namespace cull
