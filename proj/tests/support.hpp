#pragma once

// Test-side oracles, written independently of the library implementations.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "cull/data/corpus.hpp"
#include "cull/data/vocab.hpp"
#include "cull/training/batch.hpp"
#include "cull/model/layered_model.hpp"
#include "cull/numerics/graph.hpp"

namespace cull::test {

using MatD = Matrix<double>;

inline MatD random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  MatD m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

/// Builds a scalar loss from parameter leaves bound to the given matrices.
using LossFn = std::function<Var<double>(Graph<double>&, const std::vector<Var<double>>&)>;

struct GradCheck {
  double max_rel_error = 0;  // worst norm-wise relative error over parameters
};

/// Central finite differences against the reverse-mode gradient of every
/// parameter. Relative error is ||analytic - numeric|| / (||analytic|| + ||numeric||).
inline GradCheck finite_difference_check(std::vector<MatD>& params, const LossFn& loss, double h = 1e-6) {
  std::vector<MatD> analytic;
  {
    Graph<double> g;
    std::vector<Var<double>> vars;
    for (auto& p : params) vars.push_back(g.parameter(p));
    g.backward(loss(g, vars));
    for (auto& v : vars) analytic.push_back(g.has_grad(v) ? g.grad(v) : MatD::Zero(v.rows(), v.cols()));
  }
  auto eval = [&] {
    Graph<double> g(false);
    std::vector<Var<double>> vars;
    for (auto& p : params) vars.push_back(g.input(p));
    return loss(g, vars).value()(0, 0);
  };
  GradCheck out;
  for (std::size_t k = 0; k < params.size(); ++k) {
    MatD numeric(params[k].rows(), params[k].cols());
    for (Eigen::Index i = 0; i < params[k].size(); ++i) {
      double& x = params[k].data()[i];
      const double saved = x;
      x = saved + h;
      const double up = eval();
      x = saved - h;
      const double down = eval();
      x = saved;
      numeric.data()[i] = (up - down) / (2 * h);
    }
    const double denom = analytic[k].norm() + numeric.norm();
    const double rel = denom == 0 ? 0 : (analytic[k] - numeric).norm() / denom;
    out.max_rel_error = std::max(out.max_rel_error, rel);
  }
  return out;
}

/// Scalar probe sum(x .* r) with a fixed random r, so every output entry matters.
inline Var<double> probe(Var<double> x, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum(hadamard(x, x.graph().constant(random_matrix(rng, x.rows(), x.cols()))));
}

// ---------------------------------------------------------------------------
// Brute-force corpus BLEU-4: n-grams compared element-wise, clipped counts by
// explicit counting over the reference.

inline double oracle_bleu(const std::vector<std::vector<std::string>>& hyps,
                          const std::vector<std::vector<std::string>>& refs) {
  double matches[4] = {0, 0, 0, 0};
  double totals[4] = {0, 0, 0, 0};
  double hyp_len = 0, ref_len = 0;
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    const auto& h = hyps[s];
    const auto& r = refs[s];
    hyp_len += static_cast<double>(h.size());
    ref_len += static_cast<double>(r.size());
    for (std::size_t n = 1; n <= 4; ++n) {
      auto grams = [n](const std::vector<std::string>& t) {
        std::vector<std::vector<std::string>> g;
        for (std::size_t i = 0; i + n <= t.size(); ++i) g.emplace_back(t.begin() + long(i), t.begin() + long(i + n));
        return g;
      };
      const auto hg = grams(h);
      const auto rg = grams(r);
      totals[n - 1] += static_cast<double>(hg.size());
      std::vector<bool> seen(hg.size(), false);
      for (std::size_t i = 0; i < hg.size(); ++i) {
        if (seen[i]) continue;
        double in_h = 0;
        for (std::size_t j = i; j < hg.size(); ++j) {
          if (hg[j] == hg[i]) {
            in_h += 1;
            seen[j] = true;
          }
        }
        const double in_r = static_cast<double>(std::count(rg.begin(), rg.end(), hg[i]));
        matches[n - 1] += std::min(in_h, in_r);
      }
    }
  }
  if (hyp_len == 0) return 0;
  double log_p = 0;
  for (int n = 0; n < 4; ++n) {
    const double m = matches[n] == 0 ? 0.1 : matches[n];
    log_p += std::log(m / std::max(1.0, totals[n])) / 4;
  }
  const double bp = hyp_len < ref_len ? std::exp(1 - ref_len / hyp_len) : 1.0;
  return 100 * bp * std::exp(log_p);
}

/// Whitespace words cut into pieces of at most two UTF-8 code points.
inline std::vector<std::string> oracle_chunks(const std::string& s) {
  std::vector<std::string> out;
  std::vector<std::string> cps;
  auto flush = [&] {
    for (std::size_t i = 0; i < cps.size(); i += 2) out.push_back(cps[i] + (i + 1 < cps.size() ? cps[i + 1] : ""));
    cps.clear();
  };
  for (std::size_t i = 0; i < s.size();) {
    const unsigned char c = static_cast<unsigned char>(s[i]);
    if (c == ' ' || c == '\t' || c == '\n') {
      flush();
      ++i;
      continue;
    }
    const std::size_t len = c < 0x80 ? 1 : c < 0xE0 ? 2 : c < 0xF0 ? 3 : 4;
    cps.push_back(s.substr(i, len));
    i += len;
  }
  flush();
  return out;
}

// ---------------------------------------------------------------------------
// Models

/// Small configuration for fast unit tests.
inline ModelConfig tiny_config(Arch arch, std::uint64_t seed = 3) {
  ModelConfig c;
  c.arch = arch;
  c.d_model = 16;
  c.heads = 2;
  c.d_ffn = 24;
  c.n_encoder_layers = arch == Arch::EncoderDecoder ? 3 : 0;
  c.n_decoder_layers = 3;
  c.vocab_size = 40;
  c.max_len = 16;
  c.seed = seed;
  return c;
}

/// A model built without `layer`: later blocks of the section shift down one
/// index and keep their weights.
inline LayeredModel rebuild_without(const LayeredModel& m, LayerId layer) {
  LayeredModel out;
  out.config = m.config;
  (layer.section == Section::Encoder ? out.config.n_encoder_layers : out.config.n_decoder_layers) -= 1;
  const std::string sec = layer.section == Section::Encoder ? "enc." : "dec.";
  for (const auto& [name, w] : m.weights) {
    if (name.rfind(sec, 0) != 0 || !std::isdigit(static_cast<unsigned char>(name[4]))) {
      out.weights.emplace(name, w);
      continue;
    }
    const auto dot = name.find('.', 4);
    const int idx = std::stoi(name.substr(4, dot - 4));
    if (idx == layer.index) continue;
    const int new_idx = idx > layer.index ? idx - 1 : idx;
    out.weights.emplace(sec + std::to_string(new_idx) + name.substr(dot), w);
  }
  return out;
}

/// Finite-difference check of the full training loss (label-smoothed
/// cross-entropy) of a double-precision copy of `m`, over up to `per_tensor`
/// random entries of every weight and adapter.
inline GradCheck model_grad_check(const LayeredModel& m, const SequenceBatch& batch, const std::vector<int>& targets,
                                  int per_tensor = 12, double h = 1e-6) {
  auto md = m.template cast<double>();
  const bool adapters = !md.adapters.empty();
  ForwardOptions opts;
  opts.train_base = !adapters;
  opts.train_adapters = adapters;
  auto loss_of = [&](Graph<double>& g, BoundParams<double>* bound) {
    return softmax_ce(forward_logits(g, md, md.mask, batch, opts, bound), targets, vocab::kPad, 0.1);
  };
  std::map<std::string, MatD> analytic;
  {
    Graph<double> g;
    BoundParams<double> bound;
    g.backward(loss_of(g, &bound));
    for (auto& [name, v] : bound) analytic[name] = g.has_grad(v) ? g.grad(v) : MatD::Zero(v.rows(), v.cols());
  }
  auto eval = [&] {
    Graph<double> g(false);
    return loss_of(g, nullptr).value()(0, 0);
  };
  auto tensor = [&](const std::string& name) -> MatD& {
    const auto dot = name.rfind('.');
    const auto suffix = name.substr(dot + 1);
    if (suffix == "lora_a") return md.adapters.at(name.substr(0, dot)).a;
    if (suffix == "lora_b") return md.adapters.at(name.substr(0, dot)).b;
    return md.weights.at(name);
  };
  std::mt19937_64 rng(99);
  GradCheck out;
  for (auto& [name, grad] : analytic) {
    MatD& w = tensor(name);
    std::uniform_int_distribution<Eigen::Index> pick(0, w.size() - 1);
    const int n = static_cast<int>(std::min<Eigen::Index>(per_tensor, w.size()));
    Eigen::VectorXd a(n), num(n);
    for (int k = 0; k < n; ++k) {
      const Eigen::Index i = w.size() <= per_tensor ? k : pick(rng);
      double& x = w.data()[i];
      const double saved = x;
      x = saved + h;
      const double up = eval();
      x = saved - h;
      const double down = eval();
      x = saved;
      num[k] = (up - down) / (2 * h);
      a[k] = grad.data()[i];
    }
    const double denom = a.norm() + num.norm();
    // Exactly-zero gradients (key biases) leave only rounding noise.
    if (denom > 1e-7) out.max_rel_error = std::max(out.max_rel_error, (a - num).norm() / denom);
  }
  return out;
}

/// Random sentences over the first `words` content words.
inline ParallelCorpus copy_corpus(const Direction& d, int n, std::uint64_t seed, int words = 8, int min_len = 3,
                                  int max_len = 6) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> len(min_len, max_len), w(0, words - 1);
  ParallelCorpus c;
  c.direction = d;
  for (int i = 0; i < n; ++i) {
    SentencePair p;
    const int l = len(rng);
    for (int k = 0; k < l; ++k) p.src.push_back(vocab::word_token(w(rng)));
    p.tgt = p.src;
    c.pairs.push_back(p);
  }
  return c;
}

}  // namespace cull::test
