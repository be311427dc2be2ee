#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cull/model/config.hpp"
#include "cull/numerics/graph.hpp"

namespace cull {

/// Low-rank pair for a weight W of shape [in x out] (applied as x * W):
/// a is [rank x in], b is [out x rank], and the effective weight is
/// W + scaling * a^T * b^T.
template <class Scalar>
struct LoraAdapter {
  Matrix<Scalar> a;
  Matrix<Scalar> b;
};

/// Transformer whose blocks can be masked out and whose linear weights can
/// carry low-rank adapters.
///
/// Weight naming: `embed.tok`, `embed.pos.{enc,dec}`, `{enc,dec}.<i>.<part>`,
/// `{enc,dec}.ln_f.{g,b}`, `out.{w,b}`. A linear layer `<name>` stores
/// `<name>.w` ([in x out]) and `<name>.b` ([1 x out]); adapters are keyed by
/// `<name>`.
template <class Scalar>
struct BasicLayeredModel {
  ModelConfig config;
  std::map<std::string, Matrix<Scalar>> weights;
  LayerMask mask;
  std::optional<LoraConfig> lora;
  std::map<std::string, LoraAdapter<Scalar>> adapters;
  bool base_frozen = false;

  const Matrix<Scalar>& weight(const std::string& name) const;
  bool removed(LayerId id) const { return mask.contains(id); }
  std::vector<LayerId> remaining_layers() const;
  std::size_t parameter_count() const;

  template <class Other>
  BasicLayeredModel<Other> cast() const {
    BasicLayeredModel<Other> out;
    out.config = config;
    out.mask = mask;
    out.lora = lora;
    out.base_frozen = base_frozen;
    for (const auto& [k, v] : weights) out.weights.emplace(k, v.template cast<Other>());
    for (const auto& [k, v] : adapters) {
      out.adapters.emplace(k, LoraAdapter<Other>{v.a.template cast<Other>(), v.b.template cast<Other>()});
    }
    return out;
  }
};

using LayeredModel = BasicLayeredModel<float>;

/// Source/target language tag tokens of a translation direction.
struct DirectionTags {
  int src_tag = 0;
  int tgt_tag = 0;
  bool operator==(const DirectionTags&) const = default;
};

/// Padded batch of already laid-out sequences (see `layout_example`).
/// `src` is unused for decoder-only models.
struct SequenceBatch {
  int batch = 0;
  int src_len = 0;
  int tgt_len = 0;
  std::vector<int> src;
  std::vector<int> src_lengths;
  std::vector<int> tgt;
  std::vector<int> tgt_lengths;
};

/// One supervised example in model input layout.
///
/// encoder-decoder: src = `<src_tag> x.. <eos>`, tgt = `<tgt_tag> y..`, targets = `y.. <eos>`
/// decoder-only:    tgt = `<src_tag> x.. <sep> <tgt_tag> y..`, targets are
///                  padding over the prompt and `y.. <eos>` after it.
struct LaidOutExample {
  std::vector<int> src;
  std::vector<int> tgt;
  std::vector<int> targets;
};

LaidOutExample layout_example(Arch arch, std::span<const int> src_words, DirectionTags tags,
                              std::span<const int> tgt_words);

/// Decoder-only prompt `<src_tag> x.. <sep> <tgt_tag>`.
std::vector<int> decoder_prompt(std::span<const int> src_words, DirectionTags tags);
/// Encoder input `<src_tag> x.. <eos>`.
std::vector<int> encoder_input(std::span<const int> src_words, DirectionTags tags);

/// Controls which leaves receive gradients and whether dropout is active.
struct ForwardOptions {
  bool train_base = false;
  bool train_adapters = false;
  bool dropout = false;
  std::mt19937_64* rng = nullptr;
};

/// Parameter leaves created by a forward pass, by name (adapters as `<name>.lora_a` / `.lora_b`).
template <class Scalar>
using BoundParams = std::map<std::string, Var<Scalar>>;

/// Logits [batch * tgt_len x vocab] for a padded batch under `mask`.
template <class Scalar>
Var<Scalar> forward_logits(Graph<Scalar>& g, const BasicLayeredModel<Scalar>& m, const LayerMask& mask,
                           const SequenceBatch& batch, const ForwardOptions& opts,
                           BoundParams<Scalar>* bound = nullptr);

/// Seeded initialization: scaled-normal weights, unit layer-norm gains, zero biases.
LayeredModel build(const ModelConfig& config);

/// Logits for one example. Encoder-decoder: `src` feeds the encoder and
/// `tgt_prefix` the decoder. Decoder-only: the sequence is src ++ tgt_prefix
/// and rows for the tgt_prefix positions are returned.
Tensor forward(const LayeredModel& m, std::span<const int> src, std::span<const int> tgt_prefix);
Tensor forward(const LayeredModel& m, const LayerMask& mask, std::span<const int> src,
               std::span<const int> tgt_prefix);

/// Argmax decoding for batch size 1. The returned sequence includes the
/// terminating <eos> when one was produced. With stop_at_eos false, decoding
/// continues past <eos> until max_new tokens or the positional limit.
std::vector<int> greedy_decode(const LayeredModel& m, std::span<const int> src_words, DirectionTags tags,
                               int max_new);
std::vector<int> greedy_decode(const LayeredModel& m, const LayerMask& mask, std::span<const int> src_words,
                               DirectionTags tags, int max_new, bool stop_at_eos = true);

/// Names of linear layers (without .w/.b) of `layer` matching `roles`.
std::vector<std::string> linear_names(const ModelConfig& config, LayerId layer, const std::set<LinearRole>& roles);

/// Attaches adapters (a seeded scaled-normal, b = 0) to every targeted
/// linear of every unmasked block and freezes the base weights.
LayeredModel attach_lora(LayeredModel m, const LoraConfig& cfg, std::uint64_t seed);

/// Folds adapters into base weights and drops them.
LayeredModel merge_lora(LayeredModel m);

}  // namespace cull
