#include "cull/metrics/bleu.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_map>

#include "json.hpp"

#include "cull/data/corpus.hpp"
#include "cull/error.hpp"

namespace cull {

namespace {

constexpr int kOrder = 4;

/// n-gram -> count, keyed by the joined units (units never contain '\x1f').
std::unordered_map<std::string, int> ngram_counts(const std::vector<std::string>& units, int n) {
  std::unordered_map<std::string, int> counts;
  if (static_cast<int>(units.size()) < n) return counts;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= units.size(); ++i) {
    std::string key = units[i];
    for (int k = 1; k < n; ++k) {
      key += '\x1f';
      key += units[i + static_cast<std::size_t>(k)];
    }
    ++counts[key];
  }
  return counts;
}

}  // namespace

BleuScore corpus_bleu(const std::vector<std::vector<std::string>>& hyps,
                      const std::vector<std::vector<std::string>>& refs) {
  if (hyps.size() != refs.size()) throw ContractError("corpus_bleu: hypothesis and reference counts differ");
  if (hyps.empty()) throw ContractError("corpus_bleu: empty corpus");
  std::array<double, kOrder> matches{}, totals{};
  BleuScore s;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    s.hyp_len += static_cast<long>(hyps[i].size());
    s.ref_len += static_cast<long>(refs[i].size());
    for (int n = 1; n <= kOrder; ++n) {
      const auto h = ngram_counts(hyps[i], n);
      const auto r = ngram_counts(refs[i], n);
      for (const auto& [gram, count] : h) {
        auto it = r.find(gram);
        if (it != r.end()) matches[n - 1] += std::min(count, it->second);
      }
      totals[n - 1] += std::max<double>(0.0, static_cast<double>(hyps[i].size()) - n + 1);
    }
  }
  double log_sum = 0;
  for (int n = 0; n < kOrder; ++n) {
    const double m = matches[n] > 0 ? matches[n] : kBleuZeroMatchFloor;
    s.precisions[n] = m / std::max(totals[n], 1.0);
    log_sum += std::log(s.precisions[n]);
  }
  if (s.hyp_len == 0) {
    s.brevity_penalty = 0;
    s.score = 0;
    return s;
  }
  s.brevity_penalty =
      s.hyp_len < s.ref_len ? std::exp(1.0 - static_cast<double>(s.ref_len) / static_cast<double>(s.hyp_len)) : 1.0;
  s.score = 100.0 * s.brevity_penalty * std::exp(log_sum / kOrder);
  return s;
}

BleuScore corpus_spbleu(const std::vector<std::string>& hyps, const std::vector<std::string>& refs) {
  std::vector<std::vector<std::string>> h, r;
  h.reserve(hyps.size());
  r.reserve(refs.size());
  for (const auto& s : hyps) h.push_back(subword_tokenize(s));
  for (const auto& s : refs) r.push_back(subword_tokenize(s));
  return corpus_bleu(h, r);
}

std::string bleu_json(const BleuScore& s, const std::string& direction, const std::string& split) {
  nlohmann::ordered_json j;
  j["direction"] = direction;
  j["split"] = split;
  j["score"] = s.score;
  for (int n = 0; n < 4; ++n) j["p" + std::to_string(n + 1)] = s.precisions[static_cast<std::size_t>(n)];
  j["bp"] = s.brevity_penalty;
  j["hyp_len"] = s.hyp_len;
  j["ref_len"] = s.ref_len;
  return j.dump();
}

}  // namespace cull
