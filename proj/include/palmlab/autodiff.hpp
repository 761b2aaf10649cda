// Copyright 2026 The palmlab Authors
// SPDX-License-Identifier: Apache-2.0

// Minimal reverse-mode automatic differentiation.
//
// A Tape records a forward computation as an append-only list of nodes. Each
// node is one primitive from a small closed set:
//
//   leaf, constant, add, sum, scale (by constant or by scalar node), dot,
//   row (slice), concat, matvec, sigmoid, relu, cosine, l2_normalize,
//   softmax_cross_entropy
//
// Everything else in the library is composed from these. Leaves reference a
// Param's storage directly, so the Param must outlive the Tape and must not be
// modified until the Tape is discarded. backward() walks the nodes in reverse
// recording order and accumulates into Param::grad; frozen Params never
// receive gradient and subgraphs that only depend on frozen or constant inputs
// are skipped entirely.

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "palmlab/tensor.hpp"

namespace palmlab {

/// Learnable (or frozen) tensor with a gradient accumulator of the same shape.
struct Param {
  Matrix value;
  Matrix grad;
  bool frozen = false;

  Param() = default;
  explicit Param(Matrix v, bool is_frozen = false)
      : value(std::move(v)), grad(value.rows(), value.cols()), frozen(is_frozen) {}

  std::size_t size() const noexcept { return value.size(); }
  void zero_grad() { grad.fill(0.0); }
};

/// How cosine/l2_normalize treat short vectors.
enum class NormMode {
  kStrict,   // throw DegenerateNorm when the norm is <= kNormEpsilon
  kFloored,  // clamp the norm from below at kTrainingNormFloor
};

inline constexpr double kTrainingNormFloor = 1e-8;

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the Tape lives.
class Var {
 public:
  Var() = default;

  std::span<const double> value() const;
  double scalar() const;
  std::size_t rows() const;
  std::size_t cols() const;
  std::size_t size() const { return rows() * cols(); }

  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Param& p);
  /// Records `p` as a read-only view: no gradient is ever accumulated into
  /// it, whatever its frozen flag. Used for shared frozen weights.
  Var leaf(const Param& p);
  Var constant(Matrix m);
  Var constant(std::span<const double> column);

  /// Accumulates d(root)/d(p) into p.grad for every non-frozen Param reachable
  /// from root. root must be a 1 x 1 node of this tape.
  void backward(Var root);

  std::size_t size() const noexcept { return nodes_.size(); }

  // Primitive builders; prefer the free functions below.
  Var add(Var a, Var b);
  Var sum(std::span<const Var> terms);
  Var scale(Var a, double k);
  Var scale(Var a, Var k);
  Var dot(Var a, Var b);
  Var row(Var m, std::size_t r);
  Var concat(std::span<const Var> parts);
  Var matvec(Var w, Var x);
  Var sigmoid(Var a);
  Var relu(Var a);
  Var cosine(Var a, Var b, NormMode mode);
  Var l2_normalize(Var a, NormMode mode);
  Var softmax_cross_entropy(Var logits, std::size_t target);

 private:
  friend class Var;

  enum class Op {
    kLeaf, kConstant, kAdd, kSum, kScale, kScaleBy, kDot, kRow, kConcat,
    kMatVec, kSigmoid, kRelu, kCosine, kNormalize, kSoftmaxXent,
  };

  struct Node {
    Op op;
    std::size_t rows;
    std::size_t cols;
    std::vector<double> value;    // empty for leaves
    const Param* source = nullptr;  // leaves: value storage
    Param* target = nullptr;        // leaves: gradient sink, null for views
    std::vector<std::size_t> inputs;
    double aux = 0.0;             // scale factor, norm floor
    std::size_t index = 0;        // row index, target class
    bool requires_grad = false;
  };

  std::span<const double> value_of(std::size_t id) const;
  const Node& node(Var v) const;
  Var push(Node n);
  bool any_requires_grad(std::span<const std::size_t> inputs) const;

  std::vector<Node> nodes_;
};

inline Var add(Var a, Var b) { return a.tape()->add(a, b); }
Var sum(std::span<const Var> terms);
Var mean(std::span<const Var> terms);
inline Var scale(Var a, double k) { return a.tape()->scale(a, k); }
inline Var scale(Var a, Var k) { return a.tape()->scale(a, k); }
inline Var dot(Var a, Var b) { return a.tape()->dot(a, b); }
inline Var row(Var m, std::size_t r) { return m.tape()->row(m, r); }
Var concat(std::span<const Var> parts);
inline Var matvec(Var w, Var x) { return w.tape()->matvec(w, x); }
inline Var sigmoid(Var a) { return a.tape()->sigmoid(a); }
inline Var relu(Var a) { return a.tape()->relu(a); }
inline Var cosine(Var a, Var b, NormMode mode = NormMode::kStrict) {
  return a.tape()->cosine(a, b, mode);
}
inline Var l2_normalize(Var a, NormMode mode = NormMode::kStrict) {
  return a.tape()->l2_normalize(a, mode);
}
inline Var softmax_cross_entropy(Var logits, std::size_t target) {
  return logits.tape()->softmax_cross_entropy(logits, target);
}

/// Numerically stable softmax.
std::vector<double> softmax(std::span<const double> logits);

void zero_grad(std::span<Param* const> params);

/// Plain gradient descent: value -= lr * grad for non-frozen Params, then all
/// gradients are cleared.
void sgd_step(std::span<Param* const> params, double lr);

/// Builds a scalar function of `params` on a fresh Tape.
using ScalarGraph = std::function<Var(Tape&)>;

/// Compares backward() against central differences over every coordinate of
/// every non-frozen Param. Returns
///   max |(f(p+h) - f(p-h)) / 2h - grad| / max(1, |grad|).
/// Param values and gradients are restored/cleared before returning.
double finite_diff_check(const ScalarGraph& f, std::span<Param* const> params, double h);

}  // namespace palmlab
