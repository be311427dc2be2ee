#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>

#include "cull/data/vocab.hpp"
#include "cull/model/checkpoint.hpp"
#include "cull/training/batch.hpp"
#include "support.hpp"

using namespace cull;
using cull::test::rebuild_without;
using cull::test::tiny_config;

namespace {

const DirectionTags kTags{vocab::tag_token(0), vocab::tag_token(3)};

std::vector<int> words(std::initializer_list<int> idx) {
  std::vector<int> out;
  for (int i : idx) out.push_back(vocab::word_token(i));
  return out;
}

/// (src, tgt_prefix) pair for `forward` in the model's layout.
std::pair<std::vector<int>, std::vector<int>> sample_input(Arch arch) {
  const auto src = words({1, 5, 2, 7});
  const auto tgt = words({4, 4, 9});
  if (arch == Arch::EncoderDecoder) {
    std::vector<int> dec{kTags.tgt_tag};
    dec.insert(dec.end(), tgt.begin(), tgt.end());
    return {encoder_input(src, kTags), dec};
  }
  return {decoder_prompt(src, kTags), tgt};
}

LayeredModel with_random_adapters(const LayeredModel& m, std::uint64_t seed) {
  LoraConfig lc;
  lc.rank = 2;
  lc.alpha = 4;
  LayeredModel out = attach_lora(m, lc, seed);
  std::mt19937_64 rng(seed + 1);
  std::normal_distribution<float> dist(0.0f, 0.2f);
  for (auto& [name, ad] : out.adapters) {
    for (Eigen::Index i = 0; i < ad.b.size(); ++i) ad.b.data()[i] = dist(rng);
  }
  return out;
}

std::pair<SequenceBatch, std::vector<int>> sample_batch(Arch arch) {
  const std::vector<LaidOutExample> ex = {layout_example(arch, words({1, 2, 3}), kTags, words({3, 2, 1})),
                                          layout_example(arch, words({4, 5, 6, 7, 0}), kTags, words({9, 8}))};
  const std::vector<std::size_t> idx = {0, 1};
  return collate(ex, idx);
}

}  // namespace

TEST_CASE("masked forward equals the rebuilt shallower model") {
  for (Arch arch : {Arch::EncoderDecoder, Arch::DecoderOnly}) {
    const LayeredModel m = build(tiny_config(arch));
    const auto [src, tgt] = sample_input(arch);
    for (LayerId id : m.config.layers()) {
      CAPTURE(id.name());
      const LayeredModel r = rebuild_without(m, id);
      const Tensor masked = forward(m, LayerMask{}.with(id), src, tgt);
      const Tensor rebuilt = forward(r, src, tgt);
      CHECK(masked.rows() == rebuilt.rows());
      CHECK((masked - rebuilt).cwiseAbs().maxCoeff() == 0.0f);
      CHECK(greedy_decode(m, LayerMask{}.with(id), words({1, 5, 2}), kTags, 6) ==
            greedy_decode(r, words({1, 5, 2}), kTags, 6));
    }
    // An empty mask is the unpruned model.
    CHECK((forward(m, LayerMask{}, src, tgt) - forward(m, src, tgt)).norm() == 0.0f);
  }
}

TEST_CASE("full training step passes finite differences") {
  for (Arch arch : {Arch::EncoderDecoder, Arch::DecoderOnly}) {
    CAPTURE(to_string(arch));
    const auto [batch, targets] = sample_batch(arch);
    const LayeredModel m = build(tiny_config(arch));
    CHECK(cull::test::model_grad_check(m, batch, targets).max_rel_error < 1e-3);
    LayeredModel masked = m;
    masked.mask = LayerMask{}.with({Section::Decoder, 1});
    CHECK(cull::test::model_grad_check(with_random_adapters(masked, 5), batch, targets).max_rel_error < 1e-3);
  }
}

TEST_CASE("lora starts as identity and merges exactly") {
  for (Arch arch : {Arch::EncoderDecoder, Arch::DecoderOnly}) {
    const LayeredModel m = build(tiny_config(arch));
    const auto [src, tgt] = sample_input(arch);
    const LayeredModel a = attach_lora(m, LoraConfig{}, 9);
    CHECK(a.base_frozen);
    CHECK(!a.adapters.empty());
    CHECK(a.weights == m.weights);
    CHECK((forward(a, src, tgt) - forward(m, src, tgt)).cwiseAbs().maxCoeff() <= 1e-6f);

    const LayeredModel trained = with_random_adapters(m, 4);
    const Tensor with_adapters = forward(trained, src, tgt);
    CHECK((with_adapters - forward(m, src, tgt)).norm() > 1e-3f);
    const LayeredModel merged = merge_lora(trained);
    CHECK(merged.adapters.empty());
    CHECK((forward(merged, src, tgt) - with_adapters).cwiseAbs().maxCoeff() < 1e-4f);
  }
}

TEST_CASE("lora targets only unmasked blocks and validates rank") {
  LayeredModel m = build(tiny_config(Arch::EncoderDecoder));
  m.mask = LayerMask{}.with({Section::Encoder, 0});
  LoraConfig lc;
  lc.targets = {LinearRole::AttnQ, LinearRole::CrossV};
  const LayeredModel a = attach_lora(m, lc, 1);
  CHECK(a.adapters.size() == 2 + 3 * 2);
  CHECK(a.adapters.count("enc.0.attn.q") == 0);
  CHECK(a.adapters.count("dec.2.cross.v") == 1);
  CHECK(a.adapters.at("dec.2.cross.v").a.rows() == lc.rank);
  lc.rank = 64;
  CHECK_THROWS_AS(attach_lora(m, lc, 1), ConfigError);
  CHECK_THROWS_AS(attach_lora(a, LoraConfig{}, 1), ConfigError);
}

TEST_CASE("checkpoint round trip and corruption") {
  LayeredModel m = with_random_adapters(build(tiny_config(Arch::EncoderDecoder)), 2);
  m.mask = LayerMask{}.with({Section::Decoder, 2});
  const std::string bytes = serialize(m);
  const LayeredModel back = deserialize(bytes);
  CHECK(serialize(back) == bytes);
  CHECK(back.weights == m.weights);
  CHECK(back.mask == m.mask);
  CHECK(back.lora == m.lora);
  CHECK(back.base_frozen);

  const auto path = std::filesystem::temp_directory_path() / "cull_test_model.ckpt";
  save(m, path);
  CHECK(model_hash(load(path)) == model_hash(m));
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load(path), Error);

  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(deserialize(bad_magic), FormatError);
  std::string bad_version = bytes;
  bad_version[8] = 99;
  CHECK_THROWS_AS(deserialize(bad_version), FormatError);
  CHECK_THROWS_AS(deserialize(bytes.substr(0, bytes.size() / 2)), FormatError);
  CHECK_THROWS_AS(deserialize(bytes.substr(0, bytes.size() - 1)), FormatError);
  CHECK_THROWS_AS(deserialize(bytes + "x"), FormatError);
}

TEST_CASE("greedy decoding contract") {
  const LayeredModel enc = build(tiny_config(Arch::EncoderDecoder));
  const auto out = greedy_decode(enc, words({1, 2}), kTags, 5);
  CHECK(out.size() <= 5);
  for (std::size_t i = 0; i + 1 < out.size(); ++i) CHECK(out[i] != vocab::kEos);
  CHECK(greedy_decode(enc, words({1, 2}), kTags, 0).empty());
  CHECK_THROWS_AS(greedy_decode(enc, words({1, 2}), kTags, enc.config.max_len + 1), ContractError);
  CHECK(greedy_decode(enc, LayerMask{}, words({1, 2}), kTags, 7, false).size() == 7);

  const LayeredModel dec = build(tiny_config(Arch::DecoderOnly));
  std::vector<int> long_src(20, vocab::word_token(1));
  CHECK_THROWS_AS(greedy_decode(dec, long_src, kTags, 3), LengthError);
  // The positional range bounds generation.
  std::vector<int> src(10, vocab::word_token(2));
  CHECK(greedy_decode(dec, LayerMask{}, src, kTags, 16, false).size() == 16 - 13 + 1);
}

TEST_CASE("layouts, ids and configuration") {
  const auto ed = layout_example(Arch::EncoderDecoder, words({1, 2}), kTags, words({3}));
  CHECK(ed.src == std::vector<int>{kTags.src_tag, vocab::word_token(1), vocab::word_token(2), vocab::kEos});
  CHECK(ed.tgt == std::vector<int>{kTags.tgt_tag, vocab::word_token(3)});
  CHECK(ed.targets == std::vector<int>{vocab::word_token(3), vocab::kEos});
  const auto dd = layout_example(Arch::DecoderOnly, words({1, 2}), kTags, words({3}));
  CHECK(dd.tgt == std::vector<int>{kTags.src_tag, vocab::word_token(1), vocab::word_token(2), vocab::kSep,
                                   kTags.tgt_tag, vocab::word_token(3)});
  CHECK(dd.targets == std::vector<int>{0, 0, 0, 0, vocab::word_token(3), vocab::kEos});

  CHECK(LayerId::parse("enc.3") == LayerId{Section::Encoder, 3});
  CHECK(LayerId{Section::Decoder, 11}.name() == "dec.11");
  CHECK_THROWS_AS(LayerId::parse("mid.1"), FormatError);
  CHECK_THROWS_AS(LayerId::parse("dec."), FormatError);
  CHECK(LayerId{Section::Encoder, 7} < LayerId{Section::Decoder, 0});

  ModelConfig c = tiny_config(Arch::EncoderDecoder);
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_config(Arch::DecoderOnly);
  c.n_encoder_layers = 2;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(build(tiny_config(Arch::DecoderOnly)).weights.count("embed.pos.enc") == 0);
  CHECK(serialize(build(tiny_config(Arch::EncoderDecoder))) == serialize(build(tiny_config(Arch::EncoderDecoder))));
}
