#include "cull/numerics/graph.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace cull {

namespace {

template <class Scalar>
void require_same_graph(Var<Scalar> a, Var<Scalar> b, const char* op) {
  if (&a.graph() != &b.graph()) {
    throw ContractError(std::string(op) + ": operands belong to different graphs");
  }
}

template <class Scalar>
void require_same_shape(Var<Scalar> a, Var<Scalar> b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.rows(), a.cols()) +
                         " vs " + shape_string(b.rows(), b.cols()));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Graph

template <class Scalar>
typename Graph<Scalar>::Node& Graph<Scalar>::node(Var<Scalar> v) {
  if (v.graph_ != this || v.id_ >= nodes_.size()) throw ContractError("variable does not belong to this graph");
  return nodes_[v.id_];
}

template <class Scalar>
const typename Graph<Scalar>::Node& Graph<Scalar>::node(Var<Scalar> v) const {
  if (v.graph_ != this || v.id_ >= nodes_.size()) throw ContractError("variable does not belong to this graph");
  return nodes_[v.id_];
}

template <class Scalar>
Var<Scalar> Graph<Scalar>::constant(Mat value) {
  require_finite(value, "constant");
  Node& n = nodes_.emplace_back();
  n.owned = std::move(value);
  return Var<Scalar>(this, nodes_.size() - 1);
}

template <class Scalar>
Var<Scalar> Graph<Scalar>::input(const Mat& value) {
  Node& n = nodes_.emplace_back();
  n.external = &value;
  return Var<Scalar>(this, nodes_.size() - 1);
}

template <class Scalar>
Var<Scalar> Graph<Scalar>::parameter(const Mat& value) {
  Node& n = nodes_.emplace_back();
  n.external = &value;
  n.needs_grad = record_;
  return Var<Scalar>(this, nodes_.size() - 1);
}

template <class Scalar>
Var<Scalar> Graph<Scalar>::emit(Mat value, std::initializer_list<Var<Scalar>> inputs, Backward backward) {
  bool needs = false;
  if (record_) {
    for (auto in : inputs) needs = needs || node(in).needs_grad;
  }
  Node& n = nodes_.emplace_back();
  n.owned = std::move(value);
  n.needs_grad = needs;
  if (needs) n.backward = std::move(backward);
  return Var<Scalar>(this, nodes_.size() - 1);
}

template <class Scalar>
const typename Graph<Scalar>::Mat& Graph<Scalar>::grad(Var<Scalar> v) const {
  const Node& n = node(v);
  if (!n.grad_ready) throw ContractError("gradient requested for a node not reached by backward");
  return n.grad;
}

template <class Scalar>
void Graph<Scalar>::backward(Var<Scalar> loss, Scalar seed) {
  Node& root = node(loss);
  if (root.get().rows() != 1 || root.get().cols() != 1) {
    throw ContractError("backward: loss must be a 1x1 node, got " +
                        shape_string(root.get().rows(), root.get().cols()));
  }
  if (!record_) throw ContractError("backward: graph was built without recording");
  if (swept_) throw ContractError("backward: graph already swept");
  swept_ = true;
  if (!root.needs_grad) return;
  root.grad = Mat::Constant(1, 1, seed);
  root.grad_ready = true;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad_ready && n.backward) {
      n.backward(n.grad);
    }
  }
}

// ---------------------------------------------------------------------------
// Primitives

template <class Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b) {
  require_same_graph(a, b, "matmul");
  auto& g = a.graph();
  Matrix<Scalar> out = cull::matmul(a.value(), b.value());
  return g.emit(std::move(out), {a, b}, [a, b](const Matrix<Scalar>& up) {
    auto& gr = a.graph();
    if (gr.needs_grad(a)) gr.accumulate(a, up * b.value().transpose());
    if (gr.needs_grad(b)) gr.accumulate(b, a.value().transpose() * up);
  });
}

template <class Scalar>
Var<Scalar> transpose(Var<Scalar> a) {
  auto& g = a.graph();
  Matrix<Scalar> out = a.value().transpose();
  return g.emit(std::move(out), {a}, [a](const Matrix<Scalar>& up) { a.graph().accumulate(a, up.transpose()); });
}

template <class Scalar>
Var<Scalar> operator+(Var<Scalar> a, Var<Scalar> b) {
  require_same_graph(a, b, "add");
  require_same_shape(a, b, "add");
  auto& g = a.graph();
  Matrix<Scalar> out = a.value() + b.value();
  require_finite(out, "add");
  return g.emit(std::move(out), {a, b}, [a, b](const Matrix<Scalar>& up) {
    a.graph().accumulate(a, up);
    a.graph().accumulate(b, up);
  });
}

template <class Scalar>
Var<Scalar> add_bias(Var<Scalar> x, Var<Scalar> bias) {
  require_same_graph(x, bias, "add_bias");
  if (bias.rows() != 1 || bias.cols() != x.cols()) {
    throw DimensionError("add_bias: bias " + shape_string(bias.rows(), bias.cols()) + " does not match " +
                         shape_string(x.rows(), x.cols()));
  }
  auto& g = x.graph();
  Matrix<Scalar> out = x.value().rowwise() + bias.value().row(0);
  require_finite(out, "add_bias");
  return g.emit(std::move(out), {x, bias}, [x, bias](const Matrix<Scalar>& up) {
    x.graph().accumulate(x, up);
    if (x.graph().needs_grad(bias)) x.graph().accumulate(bias, up.colwise().sum());
  });
}

template <class Scalar>
Var<Scalar> scale(Var<Scalar> a, Scalar factor) {
  auto& g = a.graph();
  Matrix<Scalar> out = a.value() * factor;
  require_finite(out, "scale");
  return g.emit(std::move(out), {a}, [a, factor](const Matrix<Scalar>& up) { a.graph().accumulate(a, up * factor); });
}

template <class Scalar>
Var<Scalar> hadamard(Var<Scalar> a, Var<Scalar> b) {
  require_same_graph(a, b, "hadamard");
  require_same_shape(a, b, "hadamard");
  auto& g = a.graph();
  Matrix<Scalar> out = a.value().cwiseProduct(b.value());
  require_finite(out, "hadamard");
  return g.emit(std::move(out), {a, b}, [a, b](const Matrix<Scalar>& up) {
    auto& gr = a.graph();
    if (gr.needs_grad(a)) gr.accumulate(a, up.cwiseProduct(b.value()));
    if (gr.needs_grad(b)) gr.accumulate(b, up.cwiseProduct(a.value()));
  });
}

template <class Scalar>
Var<Scalar> sum(Var<Scalar> a) {
  auto& g = a.graph();
  Matrix<Scalar> out = Matrix<Scalar>::Constant(1, 1, a.value().sum());
  require_finite(out, "sum");
  return g.emit(std::move(out), {a}, [a](const Matrix<Scalar>& up) {
    a.graph().accumulate(a, Matrix<Scalar>::Constant(a.rows(), a.cols(), up(0, 0)));
  });
}

template <class Scalar>
Var<Scalar> softmax(Var<Scalar> a) {
  auto& g = a.graph();
  const auto& x = a.value();
  Matrix<Scalar> out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Scalar mx = x.row(i).maxCoeff();
    out.row(i) = (x.row(i).array() - mx).exp();
    out.row(i) /= out.row(i).sum();
  }
  require_finite(out, "softmax");
  auto p = std::make_shared<Matrix<Scalar>>(out);
  return g.emit(std::move(out), {a}, [a, p](const Matrix<Scalar>& up) {
    Matrix<Scalar> dot = up.cwiseProduct(*p).rowwise().sum();
    Matrix<Scalar> dx = p->cwiseProduct(up - dot.replicate(1, up.cols()));
    a.graph().accumulate(a, dx);
  });
}

template <class Scalar>
Var<Scalar> layer_norm(Var<Scalar> x, Var<Scalar> gain, Var<Scalar> bias, Scalar eps) {
  require_same_graph(x, gain, "layer_norm");
  require_same_graph(x, bias, "layer_norm");
  const Eigen::Index n = x.rows(), d = x.cols();
  if (gain.rows() != 1 || gain.cols() != d || bias.rows() != 1 || bias.cols() != d) {
    throw DimensionError("layer_norm: gain/bias must be 1x" + std::to_string(d));
  }
  auto& g = x.graph();
  const auto& xv = x.value();
  auto xhat = std::make_shared<Matrix<Scalar>>(n, d);
  auto inv_std = std::make_shared<Matrix<Scalar>>(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Scalar mean = xv.row(i).mean();
    const Scalar var = (xv.row(i).array() - mean).square().mean();
    const Scalar is = Scalar(1) / std::sqrt(var + eps);
    (*inv_std)(i, 0) = is;
    xhat->row(i) = (xv.row(i).array() - mean) * is;
  }
  Matrix<Scalar> out = (xhat->array().rowwise() * gain.value().row(0).array()).rowwise() + bias.value().row(0).array();
  require_finite(out, "layer_norm");
  return g.emit(std::move(out), {x, gain, bias}, [x, gain, bias, xhat, inv_std](const Matrix<Scalar>& up) {
    auto& gr = x.graph();
    if (gr.needs_grad(gain)) gr.accumulate(gain, up.cwiseProduct(*xhat).colwise().sum());
    if (gr.needs_grad(bias)) gr.accumulate(bias, up.colwise().sum());
    if (gr.needs_grad(x)) {
      const Eigen::Index rows = up.rows();
      Matrix<Scalar> dxhat = up.array().rowwise() * gain.value().row(0).array();
      Matrix<Scalar> dx(rows, up.cols());
      for (Eigen::Index i = 0; i < rows; ++i) {
        const Scalar m1 = dxhat.row(i).mean();
        const Scalar m2 = dxhat.row(i).cwiseProduct(xhat->row(i)).mean();
        dx.row(i) = (*inv_std)(i, 0) * (dxhat.row(i).array() - m1 - xhat->row(i).array() * m2);
      }
      gr.accumulate(x, dx);
    }
  });
}

template <class Scalar>
Var<Scalar> gelu(Var<Scalar> x) {
  auto& g = x.graph();
  const Scalar c = std::sqrt(Scalar(2) / Scalar(3.14159265358979323846));
  const Scalar k = Scalar(0.044715);
  const auto& xv = x.value().array();
  auto t = std::make_shared<Matrix<Scalar>>((c * (xv + k * xv.cube())).tanh().matrix());
  Matrix<Scalar> out = (Scalar(0.5) * xv * (Scalar(1) + t->array())).matrix();
  require_finite(out, "gelu");
  return g.emit(std::move(out), {x}, [x, t, c, k](const Matrix<Scalar>& up) {
    const auto& xv = x.value().array();
    const auto& tv = t->array();
    auto d = Scalar(0.5) * (Scalar(1) + tv) +
             Scalar(0.5) * xv * (Scalar(1) - tv.square()) * c * (Scalar(1) + Scalar(3) * k * xv.square());
    x.graph().accumulate(x, (up.array() * d).matrix());
  });
}

template <class Scalar>
Var<Scalar> embedding(Var<Scalar> table, std::span<const int> ids) {
  auto& g = table.graph();
  const auto& tv = table.value();
  Matrix<Scalar> out(static_cast<Eigen::Index>(ids.size()), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= tv.rows()) {
      throw DimensionError("embedding: id " + std::to_string(ids[i]) + " outside table of " +
                           std::to_string(tv.rows()) + " rows");
    }
    out.row(static_cast<Eigen::Index>(i)) = tv.row(ids[i]);
  }
  auto idx = std::make_shared<std::vector<int>>(ids.begin(), ids.end());
  return g.emit(std::move(out), {table}, [table, idx](const Matrix<Scalar>& up) {
    Matrix<Scalar> dt = Matrix<Scalar>::Zero(table.rows(), table.cols());
    for (std::size_t i = 0; i < idx->size(); ++i) dt.row((*idx)[i]) += up.row(static_cast<Eigen::Index>(i));
    table.graph().accumulate(table, dt);
  });
}

template <class Scalar>
Var<Scalar> dropout(Var<Scalar> x, Scalar p, std::mt19937_64& rng) {
  if (p < Scalar(0) || p >= Scalar(1)) throw ContractError("dropout: p must be in [0,1)");
  if (p == Scalar(0)) return x;
  std::bernoulli_distribution keep(1.0 - static_cast<double>(p));
  Matrix<Scalar> mask(x.rows(), x.cols());
  const Scalar kept = Scalar(1) / (Scalar(1) - p);
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? kept : Scalar(0);
  return hadamard(x, x.graph().constant(std::move(mask)));
}

template <class Scalar>
Var<Scalar> attention(Var<Scalar> q, Var<Scalar> k, Var<Scalar> v, const AttentionShape& shape) {
  require_same_graph(q, k, "attention");
  require_same_graph(q, v, "attention");
  const int B = shape.batch, Tq = shape.q_len, Tk = shape.k_len, H = shape.heads;
  const Eigen::Index D = q.cols();
  if (B <= 0 || Tq <= 0 || Tk <= 0 || H <= 0 || D % H != 0) throw DimensionError("attention: invalid shape");
  if (q.rows() != Eigen::Index(B) * Tq || k.rows() != Eigen::Index(B) * Tk || v.rows() != k.rows() ||
      k.cols() != D || v.cols() != D) {
    throw DimensionError("attention: operand shapes do not match layout");
  }
  if (shape.causal && Tq != Tk) throw DimensionError("attention: causal attention needs q_len == k_len");
  std::vector<int> key_len = shape.key_lengths;
  if (key_len.empty()) key_len.assign(static_cast<std::size_t>(B), Tk);
  if (key_len.size() != static_cast<std::size_t>(B)) throw DimensionError("attention: key_lengths size != batch");
  for (int len : key_len) {
    if (len < 1 || len > Tk) throw DimensionError("attention: key length out of range");
  }

  const Eigen::Index dh = D / H;
  const Scalar sc = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
  auto probs = std::make_shared<std::vector<Matrix<Scalar>>>(static_cast<std::size_t>(B * H));
  Matrix<Scalar> out(q.rows(), D);
  const auto& qv = q.value();
  const auto& kv = k.value();
  const auto& vv = v.value();
  for (int b = 0; b < B; ++b) {
    for (int h = 0; h < H; ++h) {
      auto qh = qv.block(Eigen::Index(b) * Tq, h * dh, Tq, dh);
      auto kh = kv.block(Eigen::Index(b) * Tk, h * dh, Tk, dh);
      auto vh = vv.block(Eigen::Index(b) * Tk, h * dh, Tk, dh);
      Matrix<Scalar>& p = (*probs)[static_cast<std::size_t>(b * H + h)];
      p.noalias() = (qh * kh.transpose()) * sc;
      for (int i = 0; i < Tq; ++i) {
        const int limit = shape.causal ? std::min(key_len[b], i + 1) : key_len[b];
        auto row = p.row(i);
        auto live = row.head(limit);
        const Scalar mx = live.maxCoeff();
        live = (live.array() - mx).exp();
        live /= live.sum();
        row.tail(Tk - limit).setZero();
      }
      out.block(Eigen::Index(b) * Tq, h * dh, Tq, dh).noalias() = p * vh;
    }
  }
  require_finite(out, "attention");
  return q.graph().emit(std::move(out), {q, k, v}, [q, k, v, probs, B, Tq, Tk, H, dh, sc](const Matrix<Scalar>& up) {
    auto& gr = q.graph();
    const Eigen::Index D = q.cols();
    Matrix<Scalar> dq = Matrix<Scalar>::Zero(q.rows(), D);
    Matrix<Scalar> dk = Matrix<Scalar>::Zero(k.rows(), D);
    Matrix<Scalar> dv = Matrix<Scalar>::Zero(v.rows(), D);
    const auto& qv = q.value();
    const auto& kv = k.value();
    const auto& vv = v.value();
    for (int b = 0; b < B; ++b) {
      for (int h = 0; h < H; ++h) {
        const Matrix<Scalar>& p = (*probs)[static_cast<std::size_t>(b * H + h)];
        auto qh = qv.block(Eigen::Index(b) * Tq, h * dh, Tq, dh);
        auto kh = kv.block(Eigen::Index(b) * Tk, h * dh, Tk, dh);
        auto vh = vv.block(Eigen::Index(b) * Tk, h * dh, Tk, dh);
        auto doh = up.block(Eigen::Index(b) * Tq, h * dh, Tq, dh);
        dv.block(Eigen::Index(b) * Tk, h * dh, Tk, dh).noalias() += p.transpose() * doh;
        Matrix<Scalar> dp = doh * vh.transpose();
        Matrix<Scalar> rs = dp.cwiseProduct(p).rowwise().sum();
        Matrix<Scalar> ds = p.cwiseProduct(dp - rs.replicate(1, Tk)) * sc;
        dq.block(Eigen::Index(b) * Tq, h * dh, Tq, dh).noalias() += ds * kh;
        dk.block(Eigen::Index(b) * Tk, h * dh, Tk, dh).noalias() += ds.transpose() * qh;
      }
    }
    gr.accumulate(q, dq);
    gr.accumulate(k, dk);
    gr.accumulate(v, dv);
  });
}

template <class Scalar>
Var<Scalar> softmax_ce(Var<Scalar> logits, std::span<const int> targets, int pad_id, Scalar smoothing) {
  const auto& x = logits.value();
  const Eigen::Index n = x.rows(), vocab = x.cols();
  if (static_cast<std::size_t>(n) != targets.size()) {
    throw DimensionError("softmax_ce: " + std::to_string(targets.size()) + " targets for " + std::to_string(n) +
                         " rows");
  }
  if (smoothing < Scalar(0) || smoothing >= Scalar(1)) throw ContractError("softmax_ce: smoothing must be in [0,1)");
  auto probs = std::make_shared<Matrix<Scalar>>(n, vocab);
  Scalar total = 0;
  int count = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int t = targets[static_cast<std::size_t>(i)];
    if (t < 0 || t >= vocab) throw DimensionError("softmax_ce: target id out of range");
    const Scalar mx = x.row(i).maxCoeff();
    const Scalar lse = mx + std::log((x.row(i).array() - mx).exp().sum());
    probs->row(i) = (x.row(i).array() - lse).exp();
    if (t == pad_id) continue;
    ++count;
    Scalar nll = lse - x(i, t);
    if (smoothing > Scalar(0)) {
      const Scalar mean_nll = lse - x.row(i).mean();
      nll = (Scalar(1) - smoothing) * nll + smoothing * mean_nll;
    }
    total += nll;
  }
  if (count == 0) throw DegenerateBatchError("softmax_ce: every target is padding");
  Matrix<Scalar> out = Matrix<Scalar>::Constant(1, 1, total / Scalar(count));
  require_finite(out, "softmax_ce");
  auto tg = std::make_shared<std::vector<int>>(targets.begin(), targets.end());
  return logits.graph().emit(std::move(out), {logits},
                             [logits, probs, tg, pad_id, smoothing, count](const Matrix<Scalar>& up) {
                               const Eigen::Index rows = probs->rows(), cols = probs->cols();
                               Matrix<Scalar> d = *probs;
                               const Scalar uniform = smoothing / Scalar(cols);
                               for (Eigen::Index i = 0; i < rows; ++i) {
                                 const int t = (*tg)[static_cast<std::size_t>(i)];
                                 if (t == pad_id) {
                                   d.row(i).setZero();
                                   continue;
                                 }
                                 d.row(i).array() -= uniform;
                                 d(i, t) -= Scalar(1) - smoothing;
                               }
                               logits.graph().accumulate(logits, d * (up(0, 0) / Scalar(count)));
                             });
}

// ---------------------------------------------------------------------------

#define CULL_INSTANTIATE(S)                                                                              \
  template class Graph<S>;                                                                               \
  template Var<S> matmul(Var<S>, Var<S>);                                                                \
  template Var<S> transpose(Var<S>);                                                                     \
  template Var<S> operator+(Var<S>, Var<S>);                                                             \
  template Var<S> add_bias(Var<S>, Var<S>);                                                              \
  template Var<S> scale(Var<S>, S);                                                                      \
  template Var<S> hadamard(Var<S>, Var<S>);                                                              \
  template Var<S> sum(Var<S>);                                                                           \
  template Var<S> softmax(Var<S>);                                                                       \
  template Var<S> layer_norm(Var<S>, Var<S>, Var<S>, S);                                                 \
  template Var<S> gelu(Var<S>);                                                                          \
  template Var<S> embedding(Var<S>, std::span<const int>);                                               \
  template Var<S> dropout(Var<S>, S, std::mt19937_64&);                                                  \
  template Var<S> attention(Var<S>, Var<S>, Var<S>, const AttentionShape&);                              \
  template Var<S> softmax_ce(Var<S>, std::span<const int>, int, S);

CULL_INSTANTIATE(float)
CULL_INSTANTIATE(double)

#undef CULL_INSTANTIATE

}  // namespace cull
