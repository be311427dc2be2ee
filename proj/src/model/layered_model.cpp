#include "cull/model/layered_model.hpp"

#include <algorithm>
#include <cmath>

#include "cull/data/vocab.hpp"
#include "cull/error.hpp"

namespace cull {

// ---------------------------------------------------------------------------
// Config helpers

std::string to_string(Arch arch) { return arch == Arch::EncoderDecoder ? "encoder-decoder" : "decoder-only"; }
std::string to_string(Section s) { return s == Section::Encoder ? "encoder" : "decoder"; }

Arch parse_arch(const std::string& s) {
  if (s == "encoder-decoder") return Arch::EncoderDecoder;
  if (s == "decoder-only") return Arch::DecoderOnly;
  throw ConfigError("unknown architecture '" + s + "'");
}

Section parse_section(const std::string& s) {
  if (s == "encoder" || s == "enc") return Section::Encoder;
  if (s == "decoder" || s == "dec") return Section::Decoder;
  throw ConfigError("unknown section '" + s + "'");
}

std::string LayerId::name() const { return (section == Section::Encoder ? "enc." : "dec.") + std::to_string(index); }

LayerId LayerId::parse(const std::string& name) {
  const auto dot = name.find('.');
  if (dot == std::string::npos) throw FormatError("bad layer id '" + name + "'");
  try {
    return LayerId{parse_section(name.substr(0, dot)), std::stoi(name.substr(dot + 1))};
  } catch (const std::logic_error&) {
    throw FormatError("bad layer id '" + name + "'");
  } catch (const ConfigError&) {
    throw FormatError("bad layer id '" + name + "'");
  }
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("model config: " + what); };
  if (d_model <= 0 || heads <= 0 || d_ffn <= 0 || vocab_size <= 0) fail("dimensions must be positive");
  if (d_model % heads != 0) fail("d_model " + std::to_string(d_model) + " not divisible by heads " + std::to_string(heads));
  if (n_decoder_layers <= 0) fail("n_decoder_layers must be positive");
  if (arch == Arch::EncoderDecoder && n_encoder_layers <= 0) fail("encoder-decoder needs encoder layers");
  if (arch == Arch::DecoderOnly && n_encoder_layers != 0) fail("decoder-only must have 0 encoder layers");
  if (max_len < 4) fail("max_len must be >= 4");
  if (vocab_size < vocab::kFirstWord + 1) fail("vocab too small for the reserved tokens");
}

std::vector<LayerId> ModelConfig::layers() const {
  std::vector<LayerId> out;
  for (int i = 0; i < n_encoder_layers; ++i) out.push_back({Section::Encoder, i});
  for (int i = 0; i < n_decoder_layers; ++i) out.push_back({Section::Decoder, i});
  return out;
}

ModelConfig ModelConfig::toy_encoder_decoder() { return ModelConfig{}; }

ModelConfig ModelConfig::toy_decoder_only() {
  ModelConfig c;
  c.arch = Arch::DecoderOnly;
  c.n_encoder_layers = 0;
  c.n_decoder_layers = 12;
  c.max_len = 32;
  return c;
}

std::string to_string(LinearRole role) {
  switch (role) {
    case LinearRole::AttnQ: return "attn.q";
    case LinearRole::AttnK: return "attn.k";
    case LinearRole::AttnV: return "attn.v";
    case LinearRole::AttnO: return "attn.o";
    case LinearRole::CrossQ: return "cross.q";
    case LinearRole::CrossK: return "cross.k";
    case LinearRole::CrossV: return "cross.v";
    case LinearRole::CrossO: return "cross.o";
    case LinearRole::FfnIn: return "ffn.in";
    case LinearRole::FfnOut: return "ffn.out";
  }
  return "?";
}

LinearRole parse_linear_role(const std::string& s) {
  for (LinearRole r : all_linear_roles()) {
    if (to_string(r) == s) return r;
  }
  throw ConfigError("unknown linear role '" + s + "'");
}

std::set<LinearRole> all_linear_roles() {
  return {LinearRole::AttnQ,  LinearRole::AttnK,  LinearRole::AttnV,  LinearRole::AttnO, LinearRole::CrossQ,
          LinearRole::CrossK, LinearRole::CrossV, LinearRole::CrossO, LinearRole::FfnIn, LinearRole::FfnOut};
}

// ---------------------------------------------------------------------------
// Layout

std::vector<int> encoder_input(std::span<const int> src_words, DirectionTags tags) {
  std::vector<int> out;
  out.reserve(src_words.size() + 2);
  out.push_back(tags.src_tag);
  out.insert(out.end(), src_words.begin(), src_words.end());
  out.push_back(vocab::kEos);
  return out;
}

std::vector<int> decoder_prompt(std::span<const int> src_words, DirectionTags tags) {
  std::vector<int> out;
  out.reserve(src_words.size() + 3);
  out.push_back(tags.src_tag);
  out.insert(out.end(), src_words.begin(), src_words.end());
  out.push_back(vocab::kSep);
  out.push_back(tags.tgt_tag);
  return out;
}

LaidOutExample layout_example(Arch arch, std::span<const int> src_words, DirectionTags tags,
                              std::span<const int> tgt_words) {
  LaidOutExample ex;
  if (arch == Arch::EncoderDecoder) {
    ex.src = encoder_input(src_words, tags);
    ex.tgt.push_back(tags.tgt_tag);
    ex.tgt.insert(ex.tgt.end(), tgt_words.begin(), tgt_words.end());
    ex.targets.assign(tgt_words.begin(), tgt_words.end());
    ex.targets.push_back(vocab::kEos);
  } else {
    ex.tgt = decoder_prompt(src_words, tags);
    ex.targets.assign(ex.tgt.size() - 1, vocab::kPad);
    ex.tgt.insert(ex.tgt.end(), tgt_words.begin(), tgt_words.end());
    ex.targets.insert(ex.targets.end(), tgt_words.begin(), tgt_words.end());
    ex.targets.push_back(vocab::kEos);
  }
  return ex;
}

// ---------------------------------------------------------------------------
// Model

template <class Scalar>
const Matrix<Scalar>& BasicLayeredModel<Scalar>::weight(const std::string& name) const {
  auto it = weights.find(name);
  if (it == weights.end()) throw ContractError("model has no weight '" + name + "'");
  return it->second;
}

template <class Scalar>
std::vector<LayerId> BasicLayeredModel<Scalar>::remaining_layers() const {
  std::vector<LayerId> out;
  for (LayerId id : config.layers()) {
    if (!mask.contains(id)) out.push_back(id);
  }
  return out;
}

template <class Scalar>
std::size_t BasicLayeredModel<Scalar>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [k, v] : weights) n += static_cast<std::size_t>(v.size());
  return n;
}

namespace {

std::string prefix_of(LayerId id) { return id.name() + "."; }

struct WeightSpec {
  std::string name;
  int rows;
  int cols;
  double stddev;  // 0 = zeros, < 0 = ones
};

std::vector<WeightSpec> weight_specs(const ModelConfig& c) {
  std::vector<WeightSpec> out;
  const int d = c.d_model;
  auto linear = [&](const std::string& name, int in, int o, double residual_scale) {
    out.push_back({name + ".w", in, o, residual_scale / std::sqrt(static_cast<double>(in))});
    out.push_back({name + ".b", 1, o, 0.0});
  };
  auto norm = [&](const std::string& name) {
    out.push_back({name + ".g", 1, d, -1.0});
    out.push_back({name + ".b", 1, d, 0.0});
  };
  out.push_back({"embed.tok", c.vocab_size, d, 0.1});
  if (c.arch == Arch::EncoderDecoder) out.push_back({"embed.pos.enc", c.max_len, d, 0.1});
  out.push_back({"embed.pos.dec", c.max_len, d, 0.1});
  for (LayerId id : c.layers()) {
    const std::string p = prefix_of(id);
    const double res = 1.0 / std::sqrt(2.0 * c.layer_count(id.section));
    const bool cross = id.section == Section::Decoder && c.arch == Arch::EncoderDecoder;
    norm(p + "ln1");
    linear(p + "attn.q", d, d, 1.0);
    linear(p + "attn.k", d, d, 1.0);
    linear(p + "attn.v", d, d, 1.0);
    linear(p + "attn.o", d, d, res);
    if (cross) {
      norm(p + "ln2");
      linear(p + "cross.q", d, d, 1.0);
      linear(p + "cross.k", d, d, 1.0);
      linear(p + "cross.v", d, d, 1.0);
      linear(p + "cross.o", d, d, res);
    }
    norm(p + "ln3");
    linear(p + "ffn.in", d, c.d_ffn, 1.0);
    linear(p + "ffn.out", c.d_ffn, d, res);
  }
  if (c.arch == Arch::EncoderDecoder) norm("enc.ln_f");
  norm("dec.ln_f");
  linear("out", d, c.vocab_size, 1.0);
  return out;
}

/// Creates graph leaves for weights and applies linears with optional adapters.
template <class Scalar>
class Binder {
 public:
  Binder(Graph<Scalar>& g, const BasicLayeredModel<Scalar>& m, const ForwardOptions& opts, BoundParams<Scalar>* bound)
      : g_(g), m_(m), opts_(opts), bound_(bound) {}

  Graph<Scalar>& graph() { return g_; }
  const BasicLayeredModel<Scalar>& model() const { return m_; }

  Var<Scalar> w(const std::string& name) {
    auto it = cache_.find(name);
    if (it != cache_.end()) return it->second;
    const auto& value = m_.weight(name);
    Var<Scalar> v = opts_.train_base ? g_.parameter(value) : g_.input(value);
    if (opts_.train_base && bound_) (*bound_)[name] = v;
    cache_.emplace(name, v);
    return v;
  }

  Var<Scalar> linear(Var<Scalar> x, const std::string& name) {
    Var<Scalar> y = add_bias(matmul(x, w(name + ".w")), w(name + ".b"));
    auto ad = m_.adapters.find(name);
    if (ad == m_.adapters.end()) return y;
    auto [at, bt] = adapter(name, ad->second);
    Var<Scalar> xin = x;
    if (opts_.dropout && m_.lora && m_.lora->dropout > 0) {
      if (!opts_.rng) throw ContractError("dropout requested without an rng");
      xin = dropout(x, static_cast<Scalar>(m_.lora->dropout), *opts_.rng);
    }
    Var<Scalar> delta = matmul(matmul(xin, at), bt);
    return y + scale(delta, static_cast<Scalar>(m_.lora->scaling()));
  }

  Var<Scalar> norm(Var<Scalar> x, const std::string& name) { return layer_norm(x, w(name + ".g"), w(name + ".b")); }

 private:
  std::pair<Var<Scalar>, Var<Scalar>> adapter(const std::string& name, const LoraAdapter<Scalar>& ad) {
    auto it = adapter_cache_.find(name);
    if (it != adapter_cache_.end()) return it->second;
    Var<Scalar> a = opts_.train_adapters ? g_.parameter(ad.a) : g_.input(ad.a);
    Var<Scalar> b = opts_.train_adapters ? g_.parameter(ad.b) : g_.input(ad.b);
    if (opts_.train_adapters && bound_) {
      (*bound_)[name + ".lora_a"] = a;
      (*bound_)[name + ".lora_b"] = b;
    }
    auto pair = std::make_pair(transpose(a), transpose(b));
    adapter_cache_.emplace(name, pair);
    return pair;
  }

  Graph<Scalar>& g_;
  const BasicLayeredModel<Scalar>& m_;
  const ForwardOptions& opts_;
  BoundParams<Scalar>* bound_;
  std::map<std::string, Var<Scalar>> cache_;
  std::map<std::string, std::pair<Var<Scalar>, Var<Scalar>>> adapter_cache_;
};

std::vector<int> positions(int batch, int len) {
  std::vector<int> out(static_cast<std::size_t>(batch) * len);
  for (int b = 0; b < batch; ++b) {
    for (int t = 0; t < len; ++t) out[static_cast<std::size_t>(b) * len + t] = t;
  }
  return out;
}

template <class Scalar>
Var<Scalar> embed(Binder<Scalar>& bd, std::span<const int> tokens, int batch, int len, const std::string& pos_table) {
  const int max_len = bd.model().config.max_len;
  if (len > max_len) {
    throw LengthError("sequence of length " + std::to_string(len) + " exceeds max_len " + std::to_string(max_len));
  }
  auto pos = positions(batch, len);
  return embedding(bd.w("embed.tok"), tokens) + embedding(bd.w(pos_table), pos);
}

template <class Scalar>
Var<Scalar> attention_block(Binder<Scalar>& bd, Var<Scalar> h, const std::string& p, const AttentionShape& shape) {
  Var<Scalar> q = bd.linear(h, p + ".q");
  Var<Scalar> k = bd.linear(h, p + ".k");
  Var<Scalar> v = bd.linear(h, p + ".v");
  return bd.linear(attention(q, k, v, shape), p + ".o");
}

template <class Scalar>
Var<Scalar> ffn_block(Binder<Scalar>& bd, Var<Scalar> h, const std::string& p) {
  return bd.linear(gelu(bd.linear(h, p + ".in")), p + ".out");
}

/// Encoder stack output after the final norm.
template <class Scalar>
Var<Scalar> encode(Binder<Scalar>& bd, const LayerMask& mask, std::span<const int> src, int batch, int len,
                   const std::vector<int>& lengths) {
  const auto& c = bd.model().config;
  Var<Scalar> x = embed(bd, src, batch, len, "embed.pos.enc");
  AttentionShape shape{batch, len, len, c.heads, false, lengths};
  for (int i = 0; i < c.n_encoder_layers; ++i) {
    LayerId id{Section::Encoder, i};
    if (mask.contains(id)) continue;
    const std::string p = prefix_of(id);
    x = x + attention_block(bd, bd.norm(x, p + "ln1"), p + "attn", shape);
    x = x + ffn_block(bd, bd.norm(x, p + "ln3"), p + "ffn");
  }
  return bd.norm(x, "enc.ln_f");
}

/// Cross-attention keys/values per decoder layer, computed once per memory.
template <class Scalar>
struct Memory {
  Var<Scalar> states;
  int len = 0;
  std::vector<int> lengths;
  std::map<int, std::pair<Var<Scalar>, Var<Scalar>>> kv;
};

template <class Scalar>
Var<Scalar> decode_stack(Binder<Scalar>& bd, const LayerMask& mask, std::span<const int> tgt, int batch, int len,
                         const std::vector<int>& lengths, Memory<Scalar>* memory) {
  const auto& c = bd.model().config;
  Var<Scalar> x = embed(bd, tgt, batch, len, "embed.pos.dec");
  AttentionShape self{batch, len, len, c.heads, true, lengths};
  for (int i = 0; i < c.n_decoder_layers; ++i) {
    LayerId id{Section::Decoder, i};
    if (mask.contains(id)) continue;
    const std::string p = prefix_of(id);
    x = x + attention_block(bd, bd.norm(x, p + "ln1"), p + "attn", self);
    if (memory) {
      auto it = memory->kv.find(i);
      if (it == memory->kv.end()) {
        auto kv = std::make_pair(bd.linear(memory->states, p + "cross.k"), bd.linear(memory->states, p + "cross.v"));
        it = memory->kv.emplace(i, kv).first;
      }
      Var<Scalar> q = bd.linear(bd.norm(x, p + "ln2"), p + "cross.q");
      AttentionShape cross{batch, len, memory->len, c.heads, false, memory->lengths};
      x = x + bd.linear(attention(q, it->second.first, it->second.second, cross), p + "cross.o");
    }
    x = x + ffn_block(bd, bd.norm(x, p + "ln3"), p + "ffn");
  }
  return bd.norm(x, "dec.ln_f");
}

void check_batch(const ModelConfig& c, const SequenceBatch& b) {
  if (b.batch <= 0 || b.tgt_len <= 0) throw ContractError("empty batch");
  if (b.tgt.size() != static_cast<std::size_t>(b.batch) * b.tgt_len || b.tgt_lengths.size() != std::size_t(b.batch)) {
    throw DimensionError("target batch layout mismatch");
  }
  if (c.arch == Arch::EncoderDecoder) {
    if (b.src_len <= 0 || b.src.size() != static_cast<std::size_t>(b.batch) * b.src_len ||
        b.src_lengths.size() != std::size_t(b.batch)) {
      throw DimensionError("source batch layout mismatch");
    }
  }
}

}  // namespace

template <class Scalar>
Var<Scalar> forward_logits(Graph<Scalar>& g, const BasicLayeredModel<Scalar>& m, const LayerMask& mask,
                           const SequenceBatch& batch, const ForwardOptions& opts, BoundParams<Scalar>* bound) {
  check_batch(m.config, batch);
  Binder<Scalar> bd(g, m, opts, bound);
  std::optional<Memory<Scalar>> memory;
  if (m.config.arch == Arch::EncoderDecoder) {
    memory.emplace();
    memory->states = encode(bd, mask, batch.src, batch.batch, batch.src_len, batch.src_lengths);
    memory->len = batch.src_len;
    memory->lengths = batch.src_lengths;
  }
  Var<Scalar> h = decode_stack(bd, mask, batch.tgt, batch.batch, batch.tgt_len, batch.tgt_lengths,
                               memory ? &*memory : nullptr);
  return bd.linear(h, "out");
}

template struct BasicLayeredModel<float>;
template struct BasicLayeredModel<double>;
template Var<float> forward_logits(Graph<float>&, const BasicLayeredModel<float>&, const LayerMask&,
                                   const SequenceBatch&, const ForwardOptions&, BoundParams<float>*);
template Var<double> forward_logits(Graph<double>&, const BasicLayeredModel<double>&, const LayerMask&,
                                    const SequenceBatch&, const ForwardOptions&, BoundParams<double>*);

LayeredModel build(const ModelConfig& config) {
  config.validate();
  LayeredModel m;
  m.config = config;
  std::mt19937_64 rng(config.seed);
  for (const auto& spec : weight_specs(config)) {
    Tensor t(spec.rows, spec.cols);
    if (spec.stddev == 0.0) {
      t.setZero();
    } else if (spec.stddev < 0.0) {
      t.setOnes();
    } else {
      std::normal_distribution<double> dist(0.0, spec.stddev);
      for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<float>(dist(rng));
    }
    m.weights.emplace(spec.name, std::move(t));
  }
  return m;
}

Tensor forward(const LayeredModel& m, std::span<const int> src, std::span<const int> tgt_prefix) {
  return forward(m, m.mask, src, tgt_prefix);
}

Tensor forward(const LayeredModel& m, const LayerMask& mask, std::span<const int> src,
               std::span<const int> tgt_prefix) {
  SequenceBatch b;
  b.batch = 1;
  std::size_t offset = 0;
  if (m.config.arch == Arch::EncoderDecoder) {
    if (src.empty()) throw ContractError("forward: empty source");
    b.src.assign(src.begin(), src.end());
    b.src_len = static_cast<int>(src.size());
    b.src_lengths = {b.src_len};
    b.tgt.assign(tgt_prefix.begin(), tgt_prefix.end());
  } else {
    b.tgt.assign(src.begin(), src.end());
    b.tgt.insert(b.tgt.end(), tgt_prefix.begin(), tgt_prefix.end());
    offset = src.empty() ? 0 : src.size();
  }
  if (b.tgt.empty()) throw ContractError("forward: empty target prefix");
  b.tgt_len = static_cast<int>(b.tgt.size());
  b.tgt_lengths = {b.tgt_len};
  Graph<float> g(false);
  Var<float> logits = forward_logits(g, m, mask, b, ForwardOptions{});
  const auto rows = static_cast<Eigen::Index>(b.tgt.size() - offset);
  if (rows == 0) return logits.value();
  return logits.value().bottomRows(rows);
}

namespace {

int argmax_next(Binder<float>& bd, Var<float> hidden) {
  const auto& h = hidden.value();
  const auto& w = bd.model().weight("out.w");
  const auto& b = bd.model().weight("out.b");
  Eigen::RowVectorXf logits = h.row(h.rows() - 1) * w + b.row(0);
  Eigen::Index best = 0;
  logits.maxCoeff(&best);
  return static_cast<int>(best);
}

}  // namespace

std::vector<int> greedy_decode(const LayeredModel& m, std::span<const int> src_words, DirectionTags tags,
                               int max_new) {
  return greedy_decode(m, m.mask, src_words, tags, max_new);
}

std::vector<int> greedy_decode(const LayeredModel& m, const LayerMask& mask, std::span<const int> src_words,
                               DirectionTags tags, int max_new, bool stop_at_eos) {
  const auto& c = m.config;
  if (max_new < 0 || max_new > c.max_len) throw ContractError("greedy_decode: max_new must be in [0, max_len]");
  std::vector<int> out;
  if (max_new == 0) return out;
  Graph<float> g(false);
  ForwardOptions opts;
  Binder<float> bd(g, m, opts, nullptr);

  if (c.arch == Arch::EncoderDecoder) {
    auto src = encoder_input(src_words, tags);
    const int len = static_cast<int>(src.size());
    Memory<float> memory;
    memory.states = encode(bd, mask, src, 1, len, {len});
    memory.len = len;
    memory.lengths = {len};
    std::vector<int> dec{tags.tgt_tag};
    while (static_cast<int>(out.size()) < max_new && static_cast<int>(dec.size()) <= c.max_len) {
      const int t = static_cast<int>(dec.size());
      Var<float> h = decode_stack(bd, mask, dec, 1, t, {t}, &memory);
      const int next = argmax_next(bd, h);
      out.push_back(next);
      if (next == vocab::kEos && stop_at_eos) break;
      dec.push_back(next);
    }
  } else {
    std::vector<int> seq = decoder_prompt(src_words, tags);
    if (static_cast<int>(seq.size()) > c.max_len) {
      throw LengthError("prompt of length " + std::to_string(seq.size()) + " exceeds max_len " +
                        std::to_string(c.max_len));
    }
    while (static_cast<int>(out.size()) < max_new && static_cast<int>(seq.size()) <= c.max_len) {
      Graph<float> step(false);
      Binder<float> sb(step, m, opts, nullptr);
      const int t = static_cast<int>(seq.size());
      Var<float> h = decode_stack(sb, mask, seq, 1, t, {t}, static_cast<Memory<float>*>(nullptr));
      const int next = argmax_next(sb, h);
      out.push_back(next);
      if (next == vocab::kEos && stop_at_eos) break;
      seq.push_back(next);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Adapters

std::vector<std::string> linear_names(const ModelConfig& config, LayerId layer, const std::set<LinearRole>& roles) {
  std::vector<std::string> out;
  const bool cross = layer.section == Section::Decoder && config.arch == Arch::EncoderDecoder;
  for (LinearRole r : roles) {
    const bool is_cross = r == LinearRole::CrossQ || r == LinearRole::CrossK || r == LinearRole::CrossV ||
                          r == LinearRole::CrossO;
    if (is_cross && !cross) continue;
    out.push_back(prefix_of(layer) + to_string(r));
  }
  return out;
}

LayeredModel attach_lora(LayeredModel m, const LoraConfig& cfg, std::uint64_t seed) {
  if (cfg.rank <= 0) throw ConfigError("lora: rank must be positive");
  if (!(cfg.alpha > 0)) throw ConfigError("lora: alpha must be positive");
  if (cfg.dropout < 0 || cfg.dropout >= 1) throw ConfigError("lora: dropout must be in [0,1)");
  if (cfg.targets.empty()) throw ConfigError("lora: no target roles");
  if (!m.adapters.empty()) throw ConfigError("lora: adapters already attached");
  std::mt19937_64 rng(seed);
  std::map<std::string, LoraAdapter<float>> adapters;
  for (LayerId id : m.remaining_layers()) {
    for (const auto& name : linear_names(m.config, id, cfg.targets)) {
      const Tensor& w = m.weight(name + ".w");
      const auto in = w.rows(), out = w.cols();
      if (cfg.rank > std::min(in, out)) {
        throw ConfigError("lora: rank " + std::to_string(cfg.rank) + " exceeds min dim of " + name + " " +
                          shape_string(in, out));
      }
      LoraAdapter<float> ad;
      ad.a.resize(cfg.rank, in);
      std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(in)));
      for (Eigen::Index i = 0; i < ad.a.size(); ++i) ad.a.data()[i] = static_cast<float>(dist(rng));
      ad.b = Tensor::Zero(out, cfg.rank);
      adapters.emplace(name, std::move(ad));
    }
  }
  m.adapters = std::move(adapters);
  m.lora = cfg;
  m.base_frozen = true;
  return m;
}

LayeredModel merge_lora(LayeredModel m) {
  if (!m.lora) return m;
  const float s = static_cast<float>(m.lora->scaling());
  for (const auto& [name, ad] : m.adapters) {
    Tensor& w = m.weights.at(name + ".w");
    w.noalias() += s * (ad.a.transpose() * ad.b.transpose());
  }
  m.adapters.clear();
  m.lora.reset();
  m.base_frozen = false;
  return m;
}

}  // namespace cull
