// Copyright 2026 The palmlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "palmlab/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <functional>
#include <map>
#include <memory>
#include <thread>
#include <tuple>

#include "json.hpp"
#include "palmlab/error.hpp"
#include "palmlab/rng.hpp"

namespace palmlab {

namespace {

constexpr std::uint64_t kHoldoutSalt = 0x686f6c646f7574ULL;

/// Runs task(i) for i in [0, count) on up to `jobs` threads. Task order of
/// execution is unspecified; callers write results by index.
void parallel_for(std::size_t count, std::size_t jobs, const std::function<void(std::size_t)>& task) {
  jobs = std::max<std::size_t>(1, std::min(jobs, count));
  if (jobs == 1) {
    for (std::size_t i = 0; i < count; ++i) task(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> workers;
  workers.reserve(jobs);
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) task(i);
    });
  }
  for (auto& t : workers) t.join();
}

bool needs_encoder(Method m, bool has_anchors) {
  if (uses_encoder_gradients(m)) return true;
  switch (m) {
    case Method::kZeroShot:
    case Method::kPalm:
    case Method::kPalmNoContext:
      return !has_anchors;
    default:
      return false;
  }
}

std::string run_label(Method m, std::uint64_t seed, int fold) {
  std::string s = "method " + std::string(method_id(m)) + ", seed " + std::to_string(seed);
  if (fold >= 0) s += ", fold " + std::to_string(fold);
  return s + ": ";
}

std::string format_fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

struct PreparedExperiment {
  std::vector<Split> splits;
  std::unique_ptr<ToyTextEncoder> encoder;
};

PreparedExperiment prepare(const ExperimentConfig& config, const DatasetInput& data) {
  config.validate();
  data.dataset.validate();
  PreparedExperiment p;
  p.splits = make_splits(data.dataset, config);
  if (needs_encoder(config.method, data.anchors.has_value())) {
    p.encoder = std::make_unique<ToyTextEncoder>(data.dataset.dim, config.encoder);
  }
  return p;
}

bool result_order(const RunResult& a, const RunResult& b) {
  return std::tie(a.seed, a.fold) < std::tie(b.seed, b.fold);
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

void ExperimentConfig::validate() const {
  if (shots < 1) throw ConfigError("shots must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be positive");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ConfigError("temperature must be positive");
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  if (folds == 1) throw ConfigError("folds must be 0 (auto) or >= 2");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("test fraction must lie in (0, 1)");
  if (context_tokens < 1) throw ConfigError("context token count must be >= 1");
  if (meta_hidden < 1) throw ConfigError("meta-net hidden width must be >= 1");
  build_class_prompts(ClassSet{{"a", "b"}}, zero_shot_template);
}

TrainConfig ExperimentConfig::train_config(std::uint64_t seed) const {
  TrainConfig tc;
  tc.epochs = epochs;
  tc.lr = lr;
  tc.temperature = temperature;
  tc.seed = seed;
  tc.context_init = context_init;
  tc.context_tokens = context_tokens;
  tc.meta_hidden = meta_hidden;
  return tc;
}

// ---------------------------------------------------------------------------
// Sampling and splits

FewShotSample few_shot_sample(const EmbeddingDataset& ds, std::span<const std::size_t> pool, std::size_t k,
                              std::uint64_t seed) {
  if (k < 1) throw ConfigError("shots must be >= 1");
  std::vector<std::vector<std::size_t>> by_class(ds.classes.size());
  for (std::size_t idx : pool) {
    if (idx >= ds.records.size()) throw IndexOutOfRange("record index " + std::to_string(idx));
    by_class.at(ds.records[idx].label).push_back(idx);
  }
  SeededRng rng(seed);
  FewShotSample out;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& members = by_class[c];
    if (members.empty()) throw EmptyClass("class '" + ds.classes.names[c] + "' has no records to sample");
    if (members.size() < k) {
      out.warnings.push_back("class '" + ds.classes.names[c] + "' has " + std::to_string(members.size()) +
                             " records, fewer than " + std::to_string(k) + " shots; using all of them");
    }
    rng.shuffle(std::span<std::size_t>(members));
    const std::size_t take = std::min(k, members.size());
    out.train.insert(out.train.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take));
    out.remainder.insert(out.remainder.end(), members.begin() + static_cast<std::ptrdiff_t>(take), members.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.remainder.begin(), out.remainder.end());
  return out;
}

FewShotSample few_shot_sample(const EmbeddingDataset& ds, std::size_t k, std::uint64_t seed) {
  std::vector<std::size_t> all(ds.records.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return few_shot_sample(ds, all, k, seed);
}

std::vector<Split> make_splits(const EmbeddingDataset& ds, const ExperimentConfig& config) {
  if (config.folds == 1) throw ConfigError("folds must be 0 (auto) or >= 2");
  std::vector<std::uint32_t> fold_of;
  std::size_t fold_count = 0;
  if (ds.has_folds()) {
    fold_count = ds.fold_count();
    if (config.folds != 0 && config.folds != fold_count) {
      throw ConfigError("dataset has " + std::to_string(fold_count) + " folds but " +
                        std::to_string(config.folds) + " were requested");
    }
    for (const auto& r : ds.records) fold_of.push_back(*r.fold);
  } else if (config.folds >= 2) {
    const auto assigned = assign_folds(ds, config.folds, config.split_seed);
    fold_count = config.folds;
    for (const auto& r : assigned.records) fold_of.push_back(*r.fold);
  }

  std::vector<Split> splits;
  if (fold_count > 0) {
    for (std::size_t f = 0; f < fold_count; ++f) {
      Split s;
      s.fold = static_cast<int>(f);
      for (std::size_t i = 0; i < ds.records.size(); ++i) (fold_of[i] == f ? s.test : s.pool).push_back(i);
      if (s.test.empty()) throw FormatError("fold " + std::to_string(f) + " has no records");
      splits.push_back(std::move(s));
    }
    return splits;
  }

  std::vector<std::vector<std::size_t>> by_class(ds.classes.size());
  for (std::size_t i = 0; i < ds.records.size(); ++i) by_class.at(ds.records[i].label).push_back(i);
  SeededRng rng(splitmix64(config.split_seed ^ kHoldoutSalt));
  Split s;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& members = by_class[c];
    if (members.size() < 2) {
      throw TooFewSamples("class '" + ds.classes.names[c] + "' needs >= 2 records for a train/test split");
    }
    rng.shuffle(std::span<std::size_t>(members));
    const auto n = static_cast<double>(members.size());
    const std::size_t n_test =
        std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(n * config.test_fraction)), 1,
                                members.size() - 1);
    s.test.insert(s.test.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_test));
    s.pool.insert(s.pool.end(), members.begin() + static_cast<std::ptrdiff_t>(n_test), members.end());
  }
  std::sort(s.test.begin(), s.test.end());
  std::sort(s.pool.begin(), s.pool.end());
  splits.push_back(std::move(s));
  return splits;
}

std::uint64_t run_seed(std::uint64_t seed, int fold, Method method) {
  return splitmix64(seed ^ static_cast<std::uint64_t>(static_cast<std::int64_t>(fold)) ^
                    fnv1a64(method_id(method)));
}

// ---------------------------------------------------------------------------
// Running

RunResult run_single(const ExperimentConfig& config, const DatasetInput& data, const ToyTextEncoder& encoder,
                     const Split& split, std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  const auto& ds = data.dataset;
  const std::uint64_t rs = run_seed(seed, split.fold, config.method);

  RunResult r;
  r.method = std::string(method_id(config.method));
  r.dataset = data.id;
  r.seed = seed;
  r.fold = split.fold;

  auto sample = few_shot_sample(ds, split.pool, config.shots, rs);
  r.warnings = std::move(sample.warnings);
  const LabeledSet train = LabeledSet::from_dataset(ds, sample.train);

  MethodContext ctx;
  ctx.classes = &ds.classes;
  ctx.dim = ds.dim;
  ctx.anchors = data.anchors;
  ctx.encoder = &encoder;
  ctx.zero_shot_template = config.zero_shot_template;

  const Classifier clf = fit_method(config.method, train, ctx, config.train_config(rs));
  for (std::size_t idx : split.test) {
    const auto& rec = ds.records[idx];
    if (clf.predict(rec.vector) == rec.label) ++r.correct;
  }
  r.total = split.test.size();
  r.accuracy = r.total == 0 ? 0.0 : static_cast<double>(r.correct) / static_cast<double>(r.total);
  r.loss = clf.trace().loss;
  r.encoder_calls = clf.trace().encoder_calls;
  r.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

std::vector<RunResult> run_experiment(const ExperimentConfig& config, const DatasetInput& data, std::size_t jobs) {
  const auto prepared = prepare(config, data);
  // The encoder is unused by methods that do not need one; a tiny stand-in
  // keeps run_single's signature uniform.
  const ToyTextEncoder stub(1, ToyEncoderOptions{1, 1, 0});
  const ToyTextEncoder& encoder = prepared.encoder ? *prepared.encoder : stub;

  struct Task {
    std::uint64_t seed;
    const Split* split;
  };
  std::vector<Task> tasks;
  for (std::uint64_t seed : config.seeds) {
    for (const auto& split : prepared.splits) tasks.push_back({seed, &split});
  }
  std::vector<RunResult> results(tasks.size());
  std::vector<std::exception_ptr> errors(tasks.size());
  parallel_for(tasks.size(), jobs, [&](std::size_t i) {
    try {
      results[i] = run_single(config, data, encoder, *tasks[i].split, tasks[i].seed);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  });
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (!errors[i]) continue;
    const std::string label = run_label(config.method, tasks[i].seed, tasks[i].split->fold);
    try {
      std::rethrow_exception(errors[i]);
    } catch (const Error& e) {
      throw Error(e.category(), label + e.what());
    }
  }
  std::stable_sort(results.begin(), results.end(), result_order);
  return results;
}

CrossValidation cross_validate(const ExperimentConfig& config, const DatasetInput& data, std::size_t jobs) {
  if (config.folds < 2 && !data.dataset.has_folds()) {
    throw NoFolds("dataset '" + data.id + "' has no folds and none were requested");
  }
  CrossValidation cv;
  cv.runs = run_experiment(config, data, jobs);
  for (std::uint64_t seed : config.seeds) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& r : cv.runs) {
      if (r.seed == seed) {
        sum += r.accuracy;
        ++n;
      }
    }
    cv.seed_mean.push_back(sum / static_cast<double>(n));
  }
  double total = 0.0;
  for (double m : cv.seed_mean) total += m;
  cv.mean = total / static_cast<double>(cv.seed_mean.size());
  return cv;
}

std::vector<SweepPoint> shots_sweep(const ExperimentConfig& config, const DatasetInput& data,
                                    std::span<const std::size_t> shot_list, std::size_t jobs) {
  if (shot_list.empty()) throw ConfigError("shot list is empty");
  std::vector<SweepPoint> sweep;
  for (std::size_t k : shot_list) {
    ExperimentConfig cfg = config;
    cfg.shots = k;
    const auto results = run_experiment(cfg, data, jobs);
    SweepPoint point;
    point.shots = k;
    double total = 0.0;
    for (std::uint64_t seed : cfg.seeds) {
      double sum = 0.0;
      std::size_t n = 0;
      for (const auto& r : results) {
        if (r.seed == seed) {
          sum += r.accuracy;
          ++n;
        }
      }
      point.seed_accuracy.push_back(sum / static_cast<double>(n));
      total += point.seed_accuracy.back();
    }
    point.mean = total / static_cast<double>(point.seed_accuracy.size());
    sweep.push_back(std::move(point));
  }
  return sweep;
}

std::vector<RunResult> run_benchmark(const ExperimentConfig& config, std::span<const DatasetInput> datasets,
                                     std::span<const Method> methods, std::size_t jobs) {
  config.validate();
  if (datasets.empty() || methods.empty()) throw ConfigError("benchmark needs datasets and methods");

  struct Cell {
    std::size_t dataset;
    std::size_t method;
    ExperimentConfig config;
    PreparedExperiment prepared;
  };
  struct Task {
    const Cell* cell;
    std::uint64_t seed;
    const Split* split;
  };
  const ToyTextEncoder stub(1, ToyEncoderOptions{1, 1, 0});

  std::vector<std::unique_ptr<Cell>> cells;
  std::vector<RunResult> failed;
  for (std::size_t d = 0; d < datasets.size(); ++d) {
    for (std::size_t m = 0; m < methods.size(); ++m) {
      auto cell = std::make_unique<Cell>(Cell{d, m, config, {}});
      cell->config.method = methods[m];
      try {
        cell->prepared = prepare(cell->config, datasets[d]);
        cells.push_back(std::move(cell));
      } catch (const Error& e) {
        for (std::uint64_t seed : config.seeds) {
          RunResult r;
          r.method = std::string(method_id(methods[m]));
          r.dataset = datasets[d].id;
          r.seed = seed;
          r.ok = false;
          r.error = e.what();
          r.error_category = e.category();
          failed.push_back(std::move(r));
        }
      }
    }
  }

  std::vector<Task> tasks;
  for (const auto& cell : cells) {
    for (std::uint64_t seed : config.seeds) {
      for (const auto& split : cell->prepared.splits) tasks.push_back({cell.get(), seed, &split});
    }
  }
  std::vector<RunResult> results(tasks.size());
  parallel_for(tasks.size(), jobs, [&](std::size_t i) {
    const Task& t = tasks[i];
    const auto& enc = t.cell->prepared.encoder ? *t.cell->prepared.encoder : stub;
    try {
      results[i] = run_single(t.cell->config, datasets[t.cell->dataset], enc, *t.split, t.seed);
    } catch (const std::exception& e) {
      RunResult r;
      r.method = std::string(method_id(t.cell->config.method));
      r.dataset = datasets[t.cell->dataset].id;
      r.seed = t.seed;
      r.fold = t.split->fold;
      r.ok = false;
      r.error = run_label(t.cell->config.method, t.seed, t.split->fold) + e.what();
      if (const auto* pe = dynamic_cast<const Error*>(&e)) r.error_category = pe->category();
      results[i] = std::move(r);
    }
  });
  results.insert(results.end(), std::make_move_iterator(failed.begin()), std::make_move_iterator(failed.end()));

  auto dataset_rank = [&](const std::string& id) {
    for (std::size_t d = 0; d < datasets.size(); ++d) {
      if (datasets[d].id == id) return d;
    }
    return datasets.size();
  };
  auto method_rank = [&](const std::string& id) {
    for (std::size_t m = 0; m < methods.size(); ++m) {
      if (method_id(methods[m]) == id) return m;
    }
    return methods.size();
  };
  std::stable_sort(results.begin(), results.end(), [&](const RunResult& a, const RunResult& b) {
    return std::make_tuple(dataset_rank(a.dataset), method_rank(a.method), a.seed, a.fold) <
           std::make_tuple(dataset_rank(b.dataset), method_rank(b.method), b.seed, b.fold);
  });
  return results;
}

// ---------------------------------------------------------------------------
// Tables

std::optional<double> BenchmarkTable::average(std::size_t dataset, std::size_t method) const {
  const auto& row = cells.at(dataset).at(method);
  double sum = 0.0;
  for (const auto& v : row) {
    if (!v) return std::nullopt;
    sum += *v;
  }
  return sum / static_cast<double>(row.size());
}

std::optional<double> BenchmarkTable::grand_average(std::size_t method, std::size_t seed) const {
  double sum = 0.0;
  for (std::size_t d = 0; d < datasets.size(); ++d) {
    const auto v = seed == seeds.size() ? average(d, method) : cells[d][method].at(seed);
    if (!v) return std::nullopt;
    sum += *v;
  }
  return sum / static_cast<double>(datasets.size());
}

BenchmarkTable build_table(std::span<const RunResult> results) {
  if (results.empty()) throw EmptyResults("no results to tabulate");
  BenchmarkTable t;
  auto index_of = [](std::vector<std::string>& names, const std::string& name) {
    const auto it = std::find(names.begin(), names.end(), name);
    if (it != names.end()) return static_cast<std::size_t>(it - names.begin());
    names.push_back(name);
    return names.size() - 1;
  };
  for (const auto& r : results) {
    index_of(t.datasets, r.dataset);
    index_of(t.methods, r.method);
    t.seeds.push_back(r.seed);
  }
  std::sort(t.seeds.begin(), t.seeds.end());
  t.seeds.erase(std::unique(t.seeds.begin(), t.seeds.end()), t.seeds.end());

  struct Acc {
    double sum = 0.0;
    std::size_t n = 0;
    bool failed = false;
  };
  std::vector<std::vector<std::vector<Acc>>> acc(
      t.datasets.size(), std::vector<std::vector<Acc>>(t.methods.size(), std::vector<Acc>(t.seeds.size())));
  for (const auto& r : results) {
    const std::size_t d = index_of(t.datasets, r.dataset);
    const std::size_t m = index_of(t.methods, r.method);
    const std::size_t s =
        static_cast<std::size_t>(std::lower_bound(t.seeds.begin(), t.seeds.end(), r.seed) - t.seeds.begin());
    Acc& a = acc[d][m][s];
    if (!r.ok) {
      a.failed = true;
    } else {
      a.sum += r.accuracy;
      ++a.n;
    }
  }
  t.cells.assign(t.datasets.size(), std::vector<std::vector<std::optional<double>>>(
                                         t.methods.size(), std::vector<std::optional<double>>(t.seeds.size())));
  for (std::size_t d = 0; d < t.datasets.size(); ++d) {
    for (std::size_t m = 0; m < t.methods.size(); ++m) {
      for (std::size_t s = 0; s < t.seeds.size(); ++s) {
        const Acc& a = acc[d][m][s];
        if (!a.failed && a.n > 0) t.cells[d][m][s] = a.sum / static_cast<double>(a.n);
      }
    }
  }
  return t;
}

std::string emit_table(const BenchmarkTable& table, TableFormat format) {
  if (table.datasets.empty() || table.methods.empty()) throw EmptyResults("table has no cells");
  std::vector<std::string> header = {"DATASET"};
  for (const auto& m : table.methods) {
    for (std::uint64_t s : table.seeds) header.push_back(m + " SEED-" + std::to_string(s));
    header.push_back(m + " AVG");
  }
  auto cell_text = [](const std::optional<double>& v) { return v ? format_fixed4(*v) : std::string("FAIL"); };

  std::vector<std::vector<std::string>> rows;
  for (std::size_t d = 0; d < table.datasets.size(); ++d) {
    std::vector<std::string> row = {table.datasets[d]};
    for (std::size_t m = 0; m < table.methods.size(); ++m) {
      for (const auto& v : table.cells[d][m]) row.push_back(cell_text(v));
      row.push_back(cell_text(table.average(d, m)));
    }
    rows.push_back(std::move(row));
  }
  std::vector<std::string> grand = {"AVERAGE"};
  for (std::size_t m = 0; m < table.methods.size(); ++m) {
    for (std::size_t s = 0; s <= table.seeds.size(); ++s) grand.push_back(cell_text(table.grand_average(m, s)));
  }
  rows.push_back(std::move(grand));

  std::string out;
  if (format == TableFormat::kCsv) {
    auto line = [&out](const std::vector<std::string>& fields) {
      for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) out += ',';
        out += csv_field(fields[i]);
      }
      out += "\r\n";
    };
    line(header);
    for (const auto& r : rows) line(r);
    return out;
  }
  auto line = [&out](const std::vector<std::string>& fields) {
    out += '|';
    for (const auto& f : fields) {
      std::string escaped;
      for (char ch : f) {
        if (ch == '|') escaped += '\\';
        escaped += ch;
      }
      out += ' ' + escaped + " |";
    }
    out += '\n';
  };
  line(header);
  out += "|---|";
  for (std::size_t i = 1; i < header.size(); ++i) out += "---:|";
  out += '\n';
  for (const auto& r : rows) line(r);
  return out;
}

TableFormat table_format_for_path(const std::string& path) {
  const auto dot = path.rfind('.');
  if (dot != std::string::npos) {
    std::string ext = path.substr(dot);
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".csv") return TableFormat::kCsv;
  }
  return TableFormat::kMarkdown;
}

std::string emit_sweep_csv(std::span<const SweepPoint> sweep, std::span<const std::uint64_t> seeds) {
  std::string out = "shots";
  for (std::uint64_t s : seeds) out += ",SEED-" + std::to_string(s);
  out += ",AVG\r\n";
  for (const auto& p : sweep) {
    out += std::to_string(p.shots);
    for (double a : p.seed_accuracy) out += ',' + format_fixed4(a);
    out += ',' + format_fixed4(p.mean) + "\r\n";
  }
  return out;
}

std::string results_to_jsonl(std::span<const RunResult> results, bool include_wall_time) {
  std::string out;
  for (const auto& r : results) {
    nlohmann::ordered_json j;
    j["schema"] = "palmlab-run";
    j["version"] = 1;
    j["dataset"] = r.dataset;
    j["method"] = r.method;
    j["seed"] = r.seed;
    j["fold"] = r.fold;
    j["status"] = r.ok ? "ok" : "failed";
    if (r.ok) {
      j["accuracy"] = r.accuracy;
      j["correct"] = r.correct;
      j["total"] = r.total;
      j["encoder_calls"] = r.encoder_calls;
      j["loss"] = r.loss;
    } else {
      j["error"] = r.error;
    }
    if (!r.warnings.empty()) j["warnings"] = r.warnings;
    if (include_wall_time) j["wall_time_s"] = r.wall_time_s;
    out += j.dump();
    out += '\n';
  }
  return out;
}

}  // namespace palmlab
