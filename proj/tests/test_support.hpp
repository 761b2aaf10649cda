// Copyright 2026 The palmlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "palmlab/embedio.hpp"
#include "palmlab/methods.hpp"
#include "palmlab/tensor.hpp"

namespace palmlab::testing {

/// Independent exhaustive scan: index of the highest cosine, first on ties.
inline std::size_t brute_force_cosine_argmax(std::span<const double> x, const Matrix& rows) {
  std::size_t best = 0;
  double best_sim = -2.0;
  for (std::size_t i = 0; i < rows.rows(); ++i) {
    double num = 0.0, nx = 0.0, nr = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
      num += x[j] * rows(i, j);
      nx += x[j] * x[j];
      nr += rows(i, j) * rows(i, j);
    }
    const double sim = num / (std::sqrt(nx) * std::sqrt(nr));
    if (sim > best_sim) {
      best_sim = sim;
      best = i;
    }
  }
  return best;
}

inline std::size_t brute_force_argmax(const std::vector<double>& scores) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return best;
}

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& gen, double stddev = 1.0) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (double& v : m.flat()) v = dist(gen);
  return m;
}

inline Matrix unit_rows(Matrix m) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double n = 0.0;
    for (double v : m.row(i)) n += v * v;
    n = std::sqrt(n);
    for (double& v : m.row(i)) v /= n;
  }
  return m;
}

/// Random labelled set with every class present at least once.
inline LabeledSet random_labeled_set(std::size_t classes, std::size_t dim, std::size_t n, std::mt19937_64& gen) {
  LabeledSet set;
  set.num_classes = classes;
  set.features = random_matrix(n, dim, gen);
  for (std::size_t i = 0; i < n; ++i) set.labels.push_back(i % classes);
  return set;
}

inline ClassSet class_set(std::size_t c) {
  static const char* const kNames[] = {"dog bark", "rain", "siren", "clock tick", "crackling fire",
                                       "sea waves", "crying baby", "helicopter"};
  ClassSet cs;
  for (std::size_t i = 0; i < c; ++i) cs.names.emplace_back(i < 8 ? kNames[i] : "class " + std::to_string(i));
  return cs;
}

/// Scratch directory removed at scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("palmlab-" + tag + "-" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace palmlab::testing
