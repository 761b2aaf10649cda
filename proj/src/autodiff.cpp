// Copyright 2026 The palmlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "palmlab/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "palmlab/error.hpp"

namespace palmlab {

namespace {

void require_same_tape(Var a, Var b) {
  if (a.tape() == nullptr || a.tape() != b.tape()) {
    throw ShapeMismatch("operands are recorded on different tapes");
  }
}

std::string shape_str(std::size_t r, std::size_t c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

double floored_norm(std::span<const double> a, NormMode mode, const char* what) {
  const double n = l2_norm(a);
  if (mode == NormMode::kStrict) {
    if (!(n > kNormEpsilon)) {
      throw DegenerateNorm(std::string(what) + " of a vector with norm " + std::to_string(n));
    }
    return n;
  }
  return std::max(n, kTrainingNormFloor);
}

void axpy(double k, std::span<const double> x, std::vector<double>& y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += k * x[i];
}

}  // namespace

// ---------------------------------------------------------------------------
// Var

std::span<const double> Var::value() const { return tape_->value_of(id_); }

double Var::scalar() const {
  const auto v = value();
  if (v.size() != 1) throw ShapeMismatch("scalar() on a node of size " + std::to_string(v.size()));
  return v[0];
}

std::size_t Var::rows() const { return tape_->nodes_[id_].rows; }
std::size_t Var::cols() const { return tape_->nodes_[id_].cols; }

// ---------------------------------------------------------------------------
// Tape bookkeeping

std::span<const double> Tape::value_of(std::size_t id) const {
  const Node& n = nodes_[id];
  if (n.op == Op::kLeaf) return n.source->value.flat();
  return n.value;
}

const Tape::Node& Tape::node(Var v) const {
  if (v.tape() != this || v.id() >= nodes_.size()) {
    throw ShapeMismatch("variable does not belong to this tape");
  }
  return nodes_[v.id()];
}

Var Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

bool Tape::any_requires_grad(std::span<const std::size_t> inputs) const {
  return std::any_of(inputs.begin(), inputs.end(),
                     [this](std::size_t i) { return nodes_[i].requires_grad; });
}

Var Tape::leaf(Param& p) {
  if (p.value.size() == 0) throw ShapeMismatch("leaf of an empty Param");
  if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()) {
    p.grad = Matrix(p.value.rows(), p.value.cols());
  }
  Node n{Op::kLeaf, p.value.rows(), p.value.cols(), {}, &p, &p, {}};
  n.requires_grad = !p.frozen;
  return push(std::move(n));
}

Var Tape::leaf(const Param& p) {
  if (p.value.size() == 0) throw ShapeMismatch("leaf of an empty Param");
  return push(Node{Op::kLeaf, p.value.rows(), p.value.cols(), {}, &p, nullptr, {}});
}

Var Tape::constant(Matrix m) {
  if (m.size() == 0) throw ShapeMismatch("empty constant");
  const std::size_t r = m.rows(), c = m.cols();
  auto flat = m.flat();
  return push(Node{Op::kConstant, r, c, std::vector<double>(flat.begin(), flat.end()), nullptr, nullptr, {}});
}

Var Tape::constant(std::span<const double> column) {
  if (column.empty()) throw ShapeMismatch("empty constant");
  return push(Node{Op::kConstant, column.size(), 1,
                   std::vector<double>(column.begin(), column.end()), nullptr, nullptr, {}});
}

// ---------------------------------------------------------------------------
// Primitives

Var Tape::add(Var a, Var b) {
  require_same_tape(a, b);
  const Node& na = node(a);
  const Node& nb = node(b);
  if (na.rows != nb.rows || na.cols != nb.cols) {
    throw ShapeMismatch("add " + shape_str(na.rows, na.cols) + " + " + shape_str(nb.rows, nb.cols));
  }
  const auto va = value_of(a.id());
  const auto vb = value_of(b.id());
  std::vector<double> out(va.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] + vb[i];
  Node n{Op::kAdd, na.rows, na.cols, std::move(out), nullptr, nullptr, {a.id(), b.id()}};
  n.requires_grad = any_requires_grad(n.inputs);
  return push(std::move(n));
}

Var Tape::sum(std::span<const Var> terms) {
  if (terms.empty()) throw ShapeMismatch("sum of zero terms");
  const Node& first = node(terms[0]);
  const std::size_t r = first.rows, c = first.cols;
  std::vector<double> out(r * c, 0.0);
  std::vector<std::size_t> inputs;
  inputs.reserve(terms.size());
  for (Var t : terms) {
    require_same_tape(terms[0], t);
    const Node& nt = node(t);
    if (nt.rows != r || nt.cols != c) {
      throw ShapeMismatch("sum term " + shape_str(nt.rows, nt.cols) + " vs " + shape_str(r, c));
    }
    axpy(1.0, value_of(t.id()), out);
    inputs.push_back(t.id());
  }
  Node n{Op::kSum, r, c, std::move(out), nullptr, nullptr, std::move(inputs)};
  n.requires_grad = any_requires_grad(n.inputs);
  return push(std::move(n));
}

Var Tape::scale(Var a, double k) {
  const Node& na = node(a);
  const auto va = value_of(a.id());
  std::vector<double> out(va.begin(), va.end());
  for (double& x : out) x *= k;
  Node n{Op::kScale, na.rows, na.cols, std::move(out), nullptr, nullptr, {a.id()}, k};
  n.requires_grad = na.requires_grad;
  return push(std::move(n));
}

Var Tape::scale(Var a, Var k) {
  require_same_tape(a, k);
  const Node& na = node(a);
  const double s = k.scalar();
  const auto va = value_of(a.id());
  std::vector<double> out(va.begin(), va.end());
  for (double& x : out) x *= s;
  Node n{Op::kScaleBy, na.rows, na.cols, std::move(out), nullptr, nullptr, {a.id(), k.id()}};
  n.requires_grad = any_requires_grad(n.inputs);
  return push(std::move(n));
}

Var Tape::dot(Var a, Var b) {
  require_same_tape(a, b);
  if (a.size() != b.size()) {
    throw ShapeMismatch("dot of sizes " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
  }
  const double d = palmlab::dot(value_of(a.id()), value_of(b.id()));
  Node n{Op::kDot, 1, 1, {d}, nullptr, nullptr, {a.id(), b.id()}};
  n.requires_grad = any_requires_grad(n.inputs);
  return push(std::move(n));
}

Var Tape::row(Var m, std::size_t r) {
  const Node& nm = node(m);
  if (r >= nm.rows) {
    throw IndexOutOfRange("row " + std::to_string(r) + " of a " + shape_str(nm.rows, nm.cols) + " node");
  }
  const auto vm = value_of(m.id());
  const auto first = vm.begin() + static_cast<std::ptrdiff_t>(r * nm.cols);
  Node n{Op::kRow, nm.cols, 1, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(nm.cols)),
         nullptr, nullptr, {m.id()}};
  n.index = r;
  n.requires_grad = nm.requires_grad;
  return push(std::move(n));
}

Var Tape::concat(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeMismatch("concat of zero parts");
  std::vector<double> out;
  std::vector<std::size_t> inputs;
  for (Var p : parts) {
    require_same_tape(parts[0], p);
    const auto vp = value_of(p.id());
    out.insert(out.end(), vp.begin(), vp.end());
    inputs.push_back(p.id());
  }
  const std::size_t len = out.size();
  Node n{Op::kConcat, len, 1, std::move(out), nullptr, nullptr, std::move(inputs)};
  n.requires_grad = any_requires_grad(n.inputs);
  return push(std::move(n));
}

Var Tape::matvec(Var w, Var x) {
  require_same_tape(w, x);
  const Node& nw = node(w);
  if (nw.cols != x.size()) {
    throw ShapeMismatch("matvec " + shape_str(nw.rows, nw.cols) + " by vector of length " +
                        std::to_string(x.size()));
  }
  const auto vw = value_of(w.id());
  const auto vx = value_of(x.id());
  std::vector<double> out(nw.rows, 0.0);
  for (std::size_t i = 0; i < nw.rows; ++i) {
    const double* wr = vw.data() + i * nw.cols;
    double s = 0.0;
    for (std::size_t j = 0; j < nw.cols; ++j) s += wr[j] * vx[j];
    out[i] = s;
  }
  const std::size_t r = nw.rows;
  Node n{Op::kMatVec, r, 1, std::move(out), nullptr, nullptr, {w.id(), x.id()}};
  n.requires_grad = any_requires_grad(n.inputs);
  return push(std::move(n));
}

Var Tape::sigmoid(Var a) {
  const Node& na = node(a);
  const auto va = value_of(a.id());
  std::vector<double> out(va.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = va[i];
    // Branch keeps exp() from overflowing for large |x|.
    out[i] = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  Node n{Op::kSigmoid, na.rows, na.cols, std::move(out), nullptr, nullptr, {a.id()}};
  n.requires_grad = na.requires_grad;
  return push(std::move(n));
}

Var Tape::relu(Var a) {
  const Node& na = node(a);
  const auto va = value_of(a.id());
  std::vector<double> out(va.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] > 0.0 ? va[i] : 0.0;
  Node n{Op::kRelu, na.rows, na.cols, std::move(out), nullptr, nullptr, {a.id()}};
  n.requires_grad = na.requires_grad;
  return push(std::move(n));
}

Var Tape::cosine(Var a, Var b, NormMode mode) {
  require_same_tape(a, b);
  if (a.size() != b.size()) {
    throw ShapeMismatch("cosine of sizes " + std::to_string(a.size()) + " and " +
                        std::to_string(b.size()));
  }
  const auto va = value_of(a.id());
  const auto vb = value_of(b.id());
  const double na = floored_norm(va, mode, "cosine");
  const double nb = floored_norm(vb, mode, "cosine");
  Node n{Op::kCosine, 1, 1, {palmlab::dot(va, vb) / (na * nb)}, nullptr, nullptr, {a.id(), b.id()}};
  n.aux = mode == NormMode::kFloored ? kTrainingNormFloor : 0.0;
  n.requires_grad = any_requires_grad(n.inputs);
  return push(std::move(n));
}

Var Tape::l2_normalize(Var a, NormMode mode) {
  const Node& na = node(a);
  const auto va = value_of(a.id());
  const double norm = floored_norm(va, mode, "l2_normalize");
  std::vector<double> out(va.begin(), va.end());
  for (double& x : out) x /= norm;
  Node n{Op::kNormalize, na.rows, na.cols, std::move(out), nullptr, nullptr, {a.id()}};
  n.aux = mode == NormMode::kFloored ? kTrainingNormFloor : 0.0;
  n.requires_grad = na.requires_grad;
  return push(std::move(n));
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw ShapeMismatch("softmax of an empty vector");
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(logits[i] - m);
    z += p[i];
  }
  for (double& x : p) x /= z;
  return p;
}

Var Tape::softmax_cross_entropy(Var logits, std::size_t target) {
  const Node& nl = node(logits);
  const auto v = value_of(logits.id());
  if (target >= v.size()) {
    throw IndexOutOfRange("target " + std::to_string(target) + " for " +
                          std::to_string(v.size()) + " logits");
  }
  // loss = (m - l_t) + log(sum_j exp(l_j - m)); the argmax term is 1 and is
  // split off so saturated losses keep full relative precision via log1p.
  const std::size_t top = argmax(v);
  const double m = v[top];
  double rest = 0.0;
  for (std::size_t j = 0; j < v.size(); ++j) {
    if (j != top) rest += std::exp(v[j] - m);
  }
  const double loss = (m - v[target]) + std::log1p(rest);
  Node n{Op::kSoftmaxXent, 1, 1, {loss}, nullptr, nullptr, {logits.id()}};
  n.index = target;
  n.requires_grad = nl.requires_grad;
  return push(std::move(n));
}

// ---------------------------------------------------------------------------
// Reverse pass

void Tape::backward(Var root) {
  const Node& nr = node(root);
  if (nr.rows != 1 || nr.cols != 1) {
    throw ShapeMismatch("backward from a non-scalar node " + shape_str(nr.rows, nr.cols));
  }
  std::vector<std::vector<double>> adj(root.id() + 1);
  adj[root.id()] = {1.0};

  auto grad_of = [&](std::size_t id) -> std::vector<double>& {
    auto& g = adj[id];
    if (g.empty()) g.assign(nodes_[id].rows * nodes_[id].cols, 0.0);
    return g;
  };

  for (std::size_t id = root.id() + 1; id-- > 0;) {
    const Node& n = nodes_[id];
    if (!n.requires_grad || adj[id].empty()) continue;
    const std::vector<double>& g = adj[id];

    switch (n.op) {
      case Op::kLeaf: {
        auto pg = n.target->grad.flat();
        for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
        break;
      }
      case Op::kConstant:
        break;
      case Op::kAdd:
      case Op::kSum:
        for (std::size_t in : n.inputs) {
          if (nodes_[in].requires_grad) axpy(1.0, g, grad_of(in));
        }
        break;
      case Op::kScale:
        axpy(n.aux, g, grad_of(n.inputs[0]));
        break;
      case Op::kScaleBy: {
        const std::size_t a = n.inputs[0], k = n.inputs[1];
        const auto va = value_of(a);
        const double s = value_of(k)[0];
        if (nodes_[a].requires_grad) axpy(s, g, grad_of(a));
        if (nodes_[k].requires_grad) grad_of(k)[0] += palmlab::dot(g, va);
        break;
      }
      case Op::kDot: {
        const std::size_t a = n.inputs[0], b = n.inputs[1];
        if (nodes_[a].requires_grad) axpy(g[0], value_of(b), grad_of(a));
        if (nodes_[b].requires_grad) axpy(g[0], value_of(a), grad_of(b));
        break;
      }
      case Op::kRow: {
        auto& gm = grad_of(n.inputs[0]);
        const std::size_t cols = nodes_[n.inputs[0]].cols;
        for (std::size_t j = 0; j < cols; ++j) gm[n.index * cols + j] += g[j];
        break;
      }
      case Op::kConcat: {
        std::size_t offset = 0;
        for (std::size_t in : n.inputs) {
          const std::size_t len = nodes_[in].rows * nodes_[in].cols;
          if (nodes_[in].requires_grad) {
            auto& gi = grad_of(in);
            for (std::size_t j = 0; j < len; ++j) gi[j] += g[offset + j];
          }
          offset += len;
        }
        break;
      }
      case Op::kMatVec: {
        const std::size_t w = n.inputs[0], x = n.inputs[1];
        const std::size_t rows = nodes_[w].rows, cols = nodes_[w].cols;
        const auto vw = value_of(w);
        const auto vx = value_of(x);
        if (nodes_[w].requires_grad) {
          auto& gw = grad_of(w);
          for (std::size_t i = 0; i < rows; ++i) {
            if (g[i] == 0.0) continue;
            double* gr = gw.data() + i * cols;
            for (std::size_t j = 0; j < cols; ++j) gr[j] += g[i] * vx[j];
          }
        }
        if (nodes_[x].requires_grad) {
          auto& gx = grad_of(x);
          for (std::size_t i = 0; i < rows; ++i) {
            if (g[i] == 0.0) continue;
            const double* wr = vw.data() + i * cols;
            for (std::size_t j = 0; j < cols; ++j) gx[j] += g[i] * wr[j];
          }
        }
        break;
      }
      case Op::kSigmoid: {
        auto& ga = grad_of(n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[i] += g[i] * n.value[i] * (1.0 - n.value[i]);
        }
        break;
      }
      case Op::kRelu: {
        auto& ga = grad_of(n.inputs[0]);
        const auto va = value_of(n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (va[i] > 0.0) ga[i] += g[i];
        }
        break;
      }
      case Op::kCosine: {
        const std::size_t a = n.inputs[0], b = n.inputs[1];
        const auto va = value_of(a);
        const auto vb = value_of(b);
        const double raw_a = l2_norm(va), raw_b = l2_norm(vb);
        const double na = std::max(raw_a, n.aux), nb = std::max(raw_b, n.aux);
        const double c = n.value[0];
        // d cos / d a = b / (|a||b|) - cos * a / |a|^2, with the second term
        // absent while the floor is active (norm treated as constant).
        if (nodes_[a].requires_grad) {
          auto& ga = grad_of(a);
          const double k_a = raw_a >= na ? c / (na * na) : 0.0;
          for (std::size_t i = 0; i < va.size(); ++i) {
            ga[i] += g[0] * (vb[i] / (na * nb) - k_a * va[i]);
          }
        }
        if (nodes_[b].requires_grad) {
          auto& gb = grad_of(b);
          const double k_b = raw_b >= nb ? c / (nb * nb) : 0.0;
          for (std::size_t i = 0; i < vb.size(); ++i) {
            gb[i] += g[0] * (va[i] / (na * nb) - k_b * vb[i]);
          }
        }
        break;
      }
      case Op::kNormalize: {
        const auto va = value_of(n.inputs[0]);
        const double raw = l2_norm(va);
        const double norm = std::max(raw, n.aux);
        auto& ga = grad_of(n.inputs[0]);
        // d(a/|a|) = (g - y <y, g>) / |a|
        const double yg = raw >= norm ? palmlab::dot(n.value, g) : 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[i] += (g[i] - n.value[i] * yg) / norm;
        }
        break;
      }
      case Op::kSoftmaxXent: {
        const auto p = softmax(value_of(n.inputs[0]));
        auto& gl = grad_of(n.inputs[0]);
        for (std::size_t j = 0; j < p.size(); ++j) {
          gl[j] += g[0] * (p[j] - (j == n.index ? 1.0 : 0.0));
        }
        break;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Free helpers

Var sum(std::span<const Var> terms) {
  if (terms.empty()) throw ShapeMismatch("sum of zero terms");
  return terms[0].tape()->sum(terms);
}

Var mean(std::span<const Var> terms) {
  return scale(sum(terms), 1.0 / static_cast<double>(terms.size()));
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeMismatch("concat of zero parts");
  return parts[0].tape()->concat(parts);
}

void zero_grad(std::span<Param* const> params) {
  for (Param* p : params) p->zero_grad();
}

void sgd_step(std::span<Param* const> params, double lr) {
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  for (Param* p : params) {
    if (!p->frozen) {
      auto v = p->value.flat();
      const auto g = p->grad.flat();
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
    }
    p->zero_grad();
  }
}

double finite_diff_check(const ScalarGraph& f, std::span<Param* const> params, double h) {
  if (!(h > 0.0)) throw ConfigError("finite-difference step must be positive");
  zero_grad(params);
  {
    Tape tape;
    tape.backward(f(tape));
  }
  std::vector<Matrix> analytic;
  analytic.reserve(params.size());
  for (Param* p : params) analytic.push_back(p->grad);
  zero_grad(params);

  auto evaluate = [&f] {
    Tape tape;
    return f(tape).scalar();
  };

  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Param& p = *params[k];
    if (p.frozen) continue;
    auto v = p.value.flat();
    const auto g = analytic[k].flat();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double saved = v[i];
      v[i] = saved + h;
      const double up = evaluate();
      v[i] = saved - h;
      const double down = evaluate();
      v[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double err = std::abs(numeric - g[i]) / std::max(1.0, std::abs(g[i]));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace palmlab
