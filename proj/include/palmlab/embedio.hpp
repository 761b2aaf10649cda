// Copyright 2026 The palmlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "palmlab/tensor.hpp"

namespace palmlab {

/// Ordered, unique class names. Position is the class index used everywhere.
struct ClassSet {
  std::vector<std::string> names;

  std::size_t size() const noexcept { return names.size(); }
  /// Throws InvalidSpec unless there are >= 2 distinct non-empty names.
  void validate() const;

  bool operator==(const ClassSet&) const = default;
};

struct EmbeddingRecord {
  std::string id;
  std::uint32_t label = 0;
  std::vector<double> vector;
  std::optional<std::uint32_t> fold;

  bool operator==(const EmbeddingRecord&) const = default;
};

/// Labeled audio embeddings of a common dimension, optionally fold-assigned.
/// Either every record carries a fold or none does.
struct EmbeddingDataset {
  ClassSet classes;
  std::size_t dim = 0;
  std::vector<EmbeddingRecord> records;

  /// Throws FormatError / DimensionMismatch describing the first violation.
  void validate() const;

  bool has_folds() const noexcept {
    return !records.empty() && records.front().fold.has_value();
  }
  /// 1 + largest fold index, or 0 without folds.
  std::size_t fold_count() const;
  std::vector<std::size_t> class_counts() const;

  bool operator==(const EmbeddingDataset&) const = default;
};

// ---------------------------------------------------------------------------
// Synthetic aligned embedding spaces

struct SyntheticSpec {
  std::size_t classes = 6;
  std::size_t dim = 64;
  std::size_t samples_per_class = 100;
  std::uint64_t text_anchor_seed = 7;
  std::uint64_t audio_seed = 11;
  double alignment_noise = 0.9;      // sigma: per-class audio/text misalignment
  double modality_gap = 0.5;         // gamma: shared audio offset direction
  double within_class_spread = 0.3;  // s: per-record scatter

  void validate() const;
};

struct SyntheticData {
  EmbeddingDataset dataset;
  Matrix text_anchors;  // classes x dim, unit rows
  std::vector<double> gap_direction;
};

/// Text anchors a_i are unit Gaussian directions from text_anchor_seed. From
/// audio_seed come one unit gap direction g, one misalignment draw xi_i per
/// class and one scatter draw eta per record; record vectors are
///   normalize(a_i + gamma * g + sigma * xi_i + s * eta).
SyntheticData generate_synthetic(const SyntheticSpec& spec);

/// Default human-readable names for synthetic classes.
ClassSet synthetic_class_names(std::size_t count);

// ---------------------------------------------------------------------------
// Text anchors stored as datasets (one record per class, ordered by label).

EmbeddingDataset anchors_to_dataset(const ClassSet& classes, const Matrix& anchors);
/// Checks that `anchors` has exactly one record per class of `classes`, in
/// class order, and returns the rows.
Matrix anchors_from_dataset(const EmbeddingDataset& anchors, const ClassSet& classes);

// ---------------------------------------------------------------------------
// File formats

enum class FileFormat { kJsonl, kBinary };

/// ".bin" selects the binary format, anything else JSONL.
FileFormat format_for_path(const std::filesystem::path& path);

void save_jsonl(const EmbeddingDataset& ds, const std::filesystem::path& path);
EmbeddingDataset load_jsonl(const std::filesystem::path& path);

void save_binary(const EmbeddingDataset& ds, const std::filesystem::path& path);
EmbeddingDataset load_binary(const std::filesystem::path& path);

void save_dataset(const EmbeddingDataset& ds, const std::filesystem::path& path, FileFormat format);
/// Detects the format from the leading magic bytes.
EmbeddingDataset load_dataset(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Cross-validation folds

/// Stratified assignment: each class's records are shuffled with `seed` and
/// dealt round-robin into `fold_count` folds.
EmbeddingDataset assign_folds(const EmbeddingDataset& ds, std::size_t fold_count, std::uint64_t seed);

}  // namespace palmlab
