// Copyright 2026 The palmlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "palmlab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "palmlab/error.hpp"

namespace palmlab {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ShapeMismatch("matrix data has " + std::to_string(data_.size()) +
                        " entries, expected " + std::to_string(rows * cols));
  }
}

Matrix Matrix::column(std::span<const double> values) {
  return Matrix(values.size(), 1, std::vector<double>(values.begin(), values.end()));
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ShapeMismatch("dot of lengths " + std::to_string(a.size()) + " and " +
                        std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

bool all_finite(std::span<const double> a) {
  return std::all_of(a.begin(), a.end(), [](double x) { return std::isfinite(x); });
}

double cosine_sim(std::span<const double> u, std::span<const double> v) {
  const double uv = dot(u, v);
  const double nu = l2_norm(u);
  const double nv = l2_norm(v);
  if (!(nu > kNormEpsilon) || !(nv > kNormEpsilon)) {
    throw DegenerateNorm("cosine similarity of a vector with norm " +
                         std::to_string(std::min(nu, nv)));
  }
  return std::clamp(uv / (nu * nv), -1.0, 1.0);
}

std::vector<double> l2_normalized(std::span<const double> a) {
  const double n = l2_norm(a);
  if (!(n > kNormEpsilon)) throw DegenerateNorm("cannot normalize a zero vector");
  std::vector<double> out(a.begin(), a.end());
  for (double& x : out) x /= n;
  return out;
}

std::size_t argmax(std::span<const double> scores) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return best;
}

}  // namespace palmlab
