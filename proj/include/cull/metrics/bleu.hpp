#pragma once

#include <array>
#include <string>
#include <vector>

namespace cull {

/// Clipped-match count substituted for an n-gram order with zero matches.
inline constexpr double kBleuZeroMatchFloor = 0.1;

struct BleuScore {
  double score = 0;                    // [0, 100]
  std::array<double, 4> precisions{};  // p1..p4 after smoothing
  double brevity_penalty = 1;
  long hyp_len = 0;
  long ref_len = 0;
};

/// Corpus BLEU-4 over pre-tokenized units with a single reference per
/// hypothesis. Clipped n-gram matches and totals are summed over the corpus;
/// an order with zero matches uses kBleuZeroMatchFloor matches instead.
/// The brevity penalty is exp(1 - ref_len / hyp_len) when hyp_len < ref_len.
/// An all-empty hypothesis side scores 0.
BleuScore corpus_bleu(const std::vector<std::vector<std::string>>& hyps,
                      const std::vector<std::vector<std::string>>& refs);

/// corpus_bleu after subword-tokenizing both sides (spBLEU).
BleuScore corpus_spbleu(const std::vector<std::string>& hyps, const std::vector<std::string>& refs);

/// One JSON object (no trailing newline) with direction, split, score, p1..p4, bp, hyp_len, ref_len.
std::string bleu_json(const BleuScore& s, const std::string& direction, const std::string& split);

}  // namespace cull
