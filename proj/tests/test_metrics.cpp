#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "cull/data/corpus.hpp"
#include "cull/error.hpp"
#include "cull/metrics/bleu.hpp"
#include "cull/metrics/throughput.hpp"
#include "json.hpp"
#include "support.hpp"

using namespace cull;

namespace {

/// Random sentences over a small alphabet so that n-gram matches are frequent.
std::vector<std::string> random_side(std::mt19937_64& rng, std::size_t n, bool allow_empty) {
  static const char* kWords[] = {"a", "bb", "abc", "w12", "w3", "x\xC3\xA9y", "zz", "q"};
  std::uniform_int_distribution<int> len(allow_empty ? 0 : 1, 9), pick(0, 7);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::string s;
    const int l = len(rng);
    for (int k = 0; k < l; ++k) s += std::string(k ? " " : "") + kWords[pick(rng)];
    out.push_back(s);
  }
  return out;
}

}  // namespace

TEST_CASE("spBLEU matches a brute-force oracle on random corpora") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng() % 12;
    const auto hyps = random_side(rng, n, true);
    const auto refs = random_side(rng, n, false);
    std::vector<std::vector<std::string>> h, r;
    for (const auto& s : hyps) h.push_back(cull::test::oracle_chunks(s));
    for (const auto& s : refs) r.push_back(cull::test::oracle_chunks(s));
    CAPTURE(trial);
    CHECK(std::abs(corpus_spbleu(hyps, refs).score - cull::test::oracle_bleu(h, r)) <= 1e-6);
  }
}

TEST_CASE("identical corpora score exactly 100") {
  const std::vector<std::string> s = {"w1 w2 w3 w4 w5", "w7 w7 w8", "w9"};
  CHECK(corpus_spbleu(s, s).score == 100.0);
}

TEST_CASE("hand case with perfect precisions and brevity penalty exp(-0.25)") {
  const std::vector<std::vector<std::string>> hyp = {{"a", "b", "c", "d"}};
  const std::vector<std::vector<std::string>> ref = {{"a", "b", "c", "d", "e"}};
  const BleuScore s = corpus_bleu(hyp, ref);
  for (double p : s.precisions) CHECK(p == 1.0);
  CHECK(s.brevity_penalty == doctest::Approx(std::exp(-0.25)).epsilon(1e-12));
  CHECK(std::abs(s.score - 77.88) <= 0.01);
}

TEST_CASE("degenerate BLEU inputs") {
  CHECK(corpus_spbleu({"", ""}, {"w1 w2", "w3"}).score == 0.0);
  CHECK_THROWS_AS(corpus_spbleu({"w1"}, {"w1", "w2"}), ContractError);
  CHECK_THROWS_AS(corpus_spbleu({}, {}), ContractError);
  // No 4-gram matches: the floor replaces the zero count.
  const BleuScore s = corpus_bleu({{"a", "b", "c", "x"}}, {{"a", "b", "c", "d"}});
  CHECK(s.precisions[3] == doctest::Approx(0.1));
  CHECK(s.score > 0);
  const auto j = nlohmann::json::parse(bleu_json(s, "L1-T", "dev"));
  CHECK(j["direction"] == "L1-T");
  CHECK(j["p4"].get<double>() == doctest::Approx(0.1));
}

TEST_CASE("decode budget and throughput") {
  const LayeredModel m = build(cull::test::tiny_config(Arch::DecoderOnly));
  CHECK(decode_budget(m.config, 3) == 7);
  CHECK(decode_budget(m.config, 12) <= m.config.max_len - 14);
  std::vector<TranslationPrompt> prompts(kThroughputMinPrompts + kThroughputWarmup,
                                         {{vocab::word_token(1), vocab::word_token(2)}, {5, 4}});
  const Throughput t = measure_throughput(m, prompts, 4);
  CHECK(t.total_tokens == 4 * static_cast<long>(kThroughputMinPrompts));
  CHECK(t.tokens_per_second > 0);
  const std::vector<TranslationPrompt> few(3, prompts[0]);
  CHECK_THROWS_AS(measure_throughput(m, few, 4), ContractError);
  CHECK_THROWS_AS(measure_throughput(m, prompts, 0), MeasurementError);
}
