// Copyright 2026 The palmlab Authors
// SPDX-License-Identifier: Apache-2.0

// Few-shot benchmark orchestration: splits, sampling, multi-seed runs,
// cross-validation, shot sweeps and result tables.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "palmlab/embedio.hpp"
#include "palmlab/encoders.hpp"
#include "palmlab/error.hpp"
#include "palmlab/methods.hpp"

namespace palmlab {

struct ExperimentConfig {
  Method method = Method::kPalm;
  std::size_t shots = 16;
  std::size_t epochs = 50;
  double lr = 0.05;
  double temperature = 1.0;
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  /// 0: use the dataset's folds if it has any, else a train/test holdout.
  /// F >= 2: cross-validate over F folds (assigned with split_seed when the
  /// dataset carries none).
  std::size_t folds = 0;
  std::string zero_shot_template = std::string(kDefaultZeroShotTemplate);
  double test_fraction = 0.5;    // holdout mode only
  std::uint64_t split_seed = 0;  // holdout split and fold assignment
  std::size_t context_tokens = 16;
  std::size_t meta_hidden = 64;
  ContextInit context_init = ContextInit::kFromText;
  ToyEncoderOptions encoder;

  /// Throws ConfigError.
  void validate() const;
  TrainConfig train_config(std::uint64_t run_seed) const;
};

/// A dataset plus the optional class text features that come with it.
struct DatasetInput {
  std::string id;
  EmbeddingDataset dataset;
  std::optional<Matrix> anchors;
};

struct RunResult {
  std::string method;
  std::string dataset;
  std::uint64_t seed = 0;
  int fold = -1;  // -1 in holdout mode
  double accuracy = 0.0;
  std::size_t correct = 0;
  std::size_t total = 0;
  std::vector<double> loss;
  double wall_time_s = 0.0;
  std::size_t encoder_calls = 0;
  bool ok = true;
  std::string error;  // set when !ok
  ErrorCategory error_category = ErrorCategory::kData;
  std::vector<std::string> warnings;
};

// ---------------------------------------------------------------------------
// Sampling and splits

struct FewShotSample {
  std::vector<std::size_t> train;      // record indices, ascending
  std::vector<std::size_t> remainder;  // rest of the pool, ascending
  std::vector<std::string> warnings;   // one per class with fewer than k records
};

/// Draws min(k, class size) records per class from `pool` (record indices of
/// `ds`) without replacement. Throws EmptyClass.
FewShotSample few_shot_sample(const EmbeddingDataset& ds, std::span<const std::size_t> pool, std::size_t k,
                              std::uint64_t seed);
/// Same, with every record of `ds` in the pool.
FewShotSample few_shot_sample(const EmbeddingDataset& ds, std::size_t k, std::uint64_t seed);

struct Split {
  int fold = -1;
  std::vector<std::size_t> pool;  // candidates for few-shot training
  std::vector<std::size_t> test;
};

/// Holdout (one split) or one split per fold, as selected by config.folds.
std::vector<Split> make_splits(const EmbeddingDataset& ds, const ExperimentConfig& config);

/// splitmix64(seed ^ fold ^ fnv1a64(method id)).
std::uint64_t run_seed(std::uint64_t seed, int fold, Method method);

// ---------------------------------------------------------------------------
// Running

/// Trains and evaluates one (seed, split) cell. Errors propagate.
RunResult run_single(const ExperimentConfig& config, const DatasetInput& data, const ToyTextEncoder& encoder,
                     const Split& split, std::uint64_t seed);

/// Every seed x split of `config` on `data`, sorted by (seed, fold). Errors
/// propagate with the method and seed prepended to the message.
std::vector<RunResult> run_experiment(const ExperimentConfig& config, const DatasetInput& data,
                                      std::size_t jobs = 1);

struct CrossValidation {
  std::vector<RunResult> runs;    // one per seed x fold
  std::vector<double> seed_mean;  // per seed, mean accuracy over folds
  double mean = 0.0;              // mean of seed_mean
};

/// Requires config.folds >= 2 or a fold-assigned dataset; throws NoFolds.
CrossValidation cross_validate(const ExperimentConfig& config, const DatasetInput& data, std::size_t jobs = 1);

struct SweepPoint {
  std::size_t shots = 0;
  std::vector<double> seed_accuracy;  // aligned with config.seeds, fold-averaged
  double mean = 0.0;
};

std::vector<SweepPoint> shots_sweep(const ExperimentConfig& config, const DatasetInput& data,
                                    std::span<const std::size_t> shot_list, std::size_t jobs = 1);

inline constexpr std::size_t kDefaultShotList[] = {1, 2, 4, 8, 16};

/// Runs every dataset x method with failures recorded in the results rather
/// than thrown. Output is sorted by (dataset, method, seed, fold) with
/// datasets and methods in the order given.
std::vector<RunResult> run_benchmark(const ExperimentConfig& config, std::span<const DatasetInput> datasets,
                                     std::span<const Method> methods, std::size_t jobs = 1);

// ---------------------------------------------------------------------------
// Tables and result files

struct BenchmarkTable {
  std::vector<std::string> datasets;
  std::vector<std::string> methods;
  std::vector<std::uint64_t> seeds;
  /// cells[dataset][method][seed]; empty when the cell failed or is missing.
  std::vector<std::vector<std::vector<std::optional<double>>>> cells;

  std::optional<double> average(std::size_t dataset, std::size_t method) const;
  /// Column mean over datasets; seed == seeds.size() selects the AVG column.
  std::optional<double> grand_average(std::size_t method, std::size_t seed) const;
};

/// Dataset and method order follow first appearance in `results`; seeds are
/// ascending. Fold results are averaged into their seed cell. Throws
/// EmptyResults.
BenchmarkTable build_table(std::span<const RunResult> results);

enum class TableFormat { kMarkdown, kCsv };

std::string emit_table(const BenchmarkTable& table, TableFormat format);
/// ".csv" selects CSV, anything else markdown.
TableFormat table_format_for_path(const std::string& path);

std::string emit_sweep_csv(std::span<const SweepPoint> sweep, std::span<const std::uint64_t> seeds);

/// One JSON object per line with a schema tag and version.
std::string results_to_jsonl(std::span<const RunResult> results, bool include_wall_time = false);

}  // namespace palmlab
