// Copyright 2026 The palmlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "palmlab/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <memory>
#include <optional>
#include <set>

#include "CLI11.hpp"
#include "palmlab/embedio.hpp"
#include "palmlab/error.hpp"
#include "palmlab/harness.hpp"
#include "palmlab/methods.hpp"

namespace palmlab {

namespace {

std::string fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  f << text;
  f.flush();
  if (!f) throw IoError("failed writing '" + path.string() + "'");
}

int exit_code_for(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::kConfig:
      return kExitConfig;
    case ErrorCategory::kIo:
      return kExitIo;
    case ErrorCategory::kData:
      return kExitData;
    case ErrorCategory::kNumerical:
      return kExitNumerical;
  }
  return kExitFailure;
}

std::vector<std::string> method_ids() {
  std::vector<std::string> ids;
  for (Method m : all_methods()) ids.emplace_back(method_id(m));
  return ids;
}

struct DataFlags {
  std::string anchors;
  bool no_anchors = false;
};

/// Flags shared by run, bench and sweep.
struct TrainingFlags {
  ExperimentConfig config;
  std::size_t jobs = 1;
  DataFlags data;
  std::string results_path;
  bool wall_time = false;
  std::string config_file;
};

/// The file itself is merged by merge_config_file before parsing; the option
/// exists so that it is accepted and documented.
void add_config_flag(CLI::App* app, std::string& sink) {
  app->add_option("--config", sink, "Read \"key = value\" settings; explicit flags take precedence");
}

bool flag_given(const std::vector<std::string>& args, const CLI::Option* opt) {
  for (const auto& a : args) {
    for (const auto& name : opt->get_lnames()) {
      const std::string flag = "--" + name;
      if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
    }
  }
  return false;
}

/// Expands "--config FILE" into explicit flags for every key that was not
/// also passed on the command line. Throws ConfigError for unknown keys.
std::vector<std::string> merge_config_file(const CLI::App& app, const std::vector<std::string>& args) {
  if (args.empty()) return args;
  const CLI::App* sub = nullptr;
  for (const auto* s : app.get_subcommands({})) {
    if (s->get_name() == args.front()) sub = s;
  }
  if (sub == nullptr || sub->get_option_no_throw("--config") == nullptr) return args;

  std::string path;
  std::vector<std::string> rest = {args.front()};
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
    } else {
      rest.push_back(args[i]);
    }
  }
  if (path.empty()) return args;
  if (!std::filesystem::is_regular_file(path)) throw IoError("cannot read config file '" + path + "'");

  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigINI().from_file(path);
  } catch (const CLI::Error& e) {
    throw ConfigError("config file '" + path + "': " + e.what());
  }
  std::vector<std::string> merged = {args.front()};
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") continue;  // section markers
    const std::string key = item.parents.empty() ? item.name : item.fullname();
    const CLI::Option* opt = item.parents.empty() ? sub->get_option_no_throw("--" + key) : nullptr;
    if (opt == nullptr || key == "config") throw ConfigError("config file '" + path + "': unknown key '" + key + "'");
    if (flag_given(rest, opt)) continue;
    std::string value;
    for (std::size_t i = 0; i < item.inputs.size(); ++i) value += (i ? "," : "") + item.inputs[i];
    const std::string flag = "--" + opt->get_lnames().front();
    if (opt->get_expected_min() == 0) {
      if (CLI::detail::to_flag_value(value) > 0) merged.push_back(flag);
    } else {
      merged.push_back(flag + "=" + value);
    }
  }
  merged.insert(merged.end(), rest.begin() + 1, rest.end());
  return merged;
}

void add_training_flags(CLI::App* app, TrainingFlags& f, const std::string& results_names, bool with_shots) {
  auto& c = f.config;
  if (with_shots) app->add_option("--shots", c.shots, "Training samples per class")->check(CLI::PositiveNumber);
  app->add_option("--epochs", c.epochs, "Full-batch gradient descent epochs")->check(CLI::PositiveNumber);
  app->add_option("--lr", c.lr, "Learning rate")->check(CLI::PositiveNumber);
  app->add_option("--temp", c.temperature, "Logit temperature")->check(CLI::PositiveNumber);
  app->add_option("--seeds", c.seeds, "Comma-separated run seeds")->delimiter(',');
  app->add_option("--folds", c.folds, "Cross-validation folds (0: dataset folds or holdout)");
  app->add_option("--template", c.zero_shot_template, "Zero-shot prompt template with one {} slot");
  app->add_option("--test-fraction", c.test_fraction, "Held-out share per class in holdout mode");
  app->add_option("--split-seed", c.split_seed, "Seed of the holdout split and fold assignment");
  app->add_option("--ctx", c.context_tokens, "Context tokens (coop, cocoop)")->check(CLI::PositiveNumber);
  app->add_option("--hidden", c.meta_hidden, "Meta-net hidden width (cocoop)")->check(CLI::PositiveNumber);
  app->add_option("--encoder-seed", c.encoder.seed, "Seed of the toy text encoder weights");
  app->add_option("--anchors", f.data.anchors, "Class text features (default: <data>.anchors sidecar)");
  app->add_flag("--no-anchors", f.data.no_anchors, "Ignore anchor files and use the toy text encoder");
  app->add_option("--jobs", f.jobs, "Parallel runs")->check(CLI::PositiveNumber);
  app->add_option(results_names, f.results_path, "Write run records as JSONL");
  app->add_flag("--wall-time", f.wall_time, "Include wall time in run records");
  add_config_flag(app, f.config_file);
}

DatasetInput load_input(const std::string& path, const DataFlags& flags) {
  DatasetInput in;
  in.id = std::filesystem::path(path).stem().string();
  in.dataset = load_dataset(path);
  in.dataset.validate();
  if (flags.no_anchors) return in;
  std::filesystem::path anchors = flags.anchors;
  if (anchors.empty()) {
    anchors = anchors_sidecar_path(path);
    if (!std::filesystem::exists(anchors)) return in;
  }
  in.anchors = anchors_from_dataset(load_dataset(anchors), in.dataset.classes);
  return in;
}

void emit_warnings(const std::vector<RunResult>& results, std::ostream& err) {
  std::set<std::string> seen;
  for (const auto& r : results) {
    for (const auto& w : r.warnings) {
      if (seen.insert(w).second) err << "warning: " << r.dataset << ": " << w << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// Subcommands

struct GenerateFlags {
  SyntheticSpec spec;
  std::string out;
  std::string format;
  std::size_t folds = 0;
  std::uint64_t fold_seed = 0;
  std::string config_file;
};

int cmd_generate(const GenerateFlags& f, std::ostream& out) {
  f.spec.validate();
  const FileFormat format = f.format.empty()  ? format_for_path(f.out)
                            : f.format == "bin" ? FileFormat::kBinary
                                                : FileFormat::kJsonl;
  auto data = generate_synthetic(f.spec);
  if (f.folds > 0) data.dataset = assign_folds(data.dataset, f.folds, f.fold_seed);
  save_dataset(data.dataset, f.out, format);
  const auto sidecar = anchors_sidecar_path(f.out);
  save_dataset(anchors_to_dataset(data.dataset.classes, data.text_anchors), sidecar, format);

  std::size_t correct = 0;
  for (const auto& r : data.dataset.records) {
    if (zero_shot_predict(r.vector, data.text_anchors) == r.label) ++correct;
  }
  const double acc = static_cast<double>(correct) / static_cast<double>(data.dataset.records.size());
  out << "wrote " << f.out << " and " << sidecar.string() << '\n';
  out << "classes " << data.dataset.classes.size() << '\n';
  out << "dim " << data.dataset.dim << '\n';
  out << "records " << data.dataset.records.size() << '\n';
  out << "zero-shot accuracy " << fixed4(acc) << '\n';
  return kExitOk;
}

int cmd_run(TrainingFlags& f, const std::string& method, const std::string& data_path, std::ostream& out,
            std::ostream& err) {
  f.config.method = parse_method(method);
  const auto input = load_input(data_path, f.data);
  const auto results = run_experiment(f.config, input, f.jobs);
  emit_warnings(results, err);
  if (!f.results_path.empty()) write_text(f.results_path, results_to_jsonl(results, f.wall_time));

  out << "method " << method << " on " << input.id << '\n';
  double total = 0.0;
  for (std::uint64_t seed : f.config.seeds) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& r : results) {
      if (r.seed != seed) continue;
      sum += r.accuracy;
      ++n;
      if (r.fold >= 0) out << "  seed " << seed << " fold " << r.fold << " accuracy " << fixed4(r.accuracy) << '\n';
    }
    const double mean = sum / static_cast<double>(n);
    total += mean;
    out << "seed " << seed << " accuracy " << fixed4(mean) << '\n';
  }
  out << "average accuracy " << fixed4(total / static_cast<double>(f.config.seeds.size())) << '\n';
  return kExitOk;
}

int cmd_bench(TrainingFlags& f, const std::vector<std::string>& data_paths, const std::vector<std::string>& methods,
              const std::string& table_path, std::ostream& out, std::ostream& err) {
  std::vector<Method> ms;
  for (const auto& m : methods) ms.push_back(parse_method(m));
  f.config.validate();
  std::vector<DatasetInput> inputs;
  std::vector<RunResult> load_failures;
  std::vector<std::string> order;
  for (const auto& p : data_paths) {
    const std::string id = std::filesystem::path(p).stem().string();
    if (std::find(order.begin(), order.end(), id) != order.end()) {
      throw ConfigError("two datasets share the id '" + id + "'");
    }
    order.push_back(id);
    try {
      inputs.push_back(load_input(p, f.data));
    } catch (const Error& e) {
      for (const auto& m : methods) {
        for (std::uint64_t seed : f.config.seeds) {
          RunResult r;
          r.method = m;
          r.dataset = id;
          r.seed = seed;
          r.ok = false;
          r.error = e.what();
          r.error_category = e.category();
          load_failures.push_back(std::move(r));
        }
      }
    }
  }
  std::vector<RunResult> ran;
  if (!inputs.empty()) ran = run_benchmark(f.config, inputs, ms, f.jobs);
  // Keep datasets in command-line order whether or not they loaded.
  std::vector<RunResult> results;
  for (const auto& id : order) {
    for (const auto* group : {&ran, &load_failures}) {
      for (const auto& r : *group) {
        if (r.dataset == id) results.push_back(r);
      }
    }
  }
  emit_warnings(results, err);
  if (!f.results_path.empty()) write_text(f.results_path, results_to_jsonl(results, f.wall_time));

  const auto table = build_table(results);
  if (!table_path.empty()) write_text(table_path, emit_table(table, table_format_for_path(table_path)));
  out << emit_table(table, TableFormat::kMarkdown);

  int code = kExitOk;
  std::set<std::string> reported;
  for (const auto& r : results) {
    if (r.ok) continue;
    if (reported.insert(r.dataset + r.error).second) err << "error: " << r.dataset << ": " << r.error << '\n';
    if (code == kExitOk) code = exit_code_for(r.error_category);
  }
  return code;
}

int cmd_sweep(TrainingFlags& f, const std::string& method, const std::string& data_path,
              const std::vector<std::size_t>& shots, const std::string& csv_path, std::ostream& out) {
  f.config.method = parse_method(method);
  const auto input = load_input(data_path, f.data);
  const auto sweep = shots_sweep(f.config, input, shots, f.jobs);
  const auto csv = emit_sweep_csv(sweep, f.config.seeds);
  if (!csv_path.empty()) write_text(csv_path, csv);
  out << csv;
  return kExitOk;
}

struct ParamsFlags {
  std::string method = "palm";
  ParamDims dims;
};

int cmd_params(const ParamsFlags& f, std::ostream& out) {
  const Method m = parse_method(f.method);
  if (f.dims.classes < 1 && (m == Method::kPalm || m == Method::kLinearProbe || m == Method::kPalmCoop ||
                             m == Method::kPalmCocoop || m == Method::kPalmCocoopDagger || m == Method::kPalmNoText)) {
    throw ConfigError("--classes must be >= 1 for method " + f.method);
  }
  const auto pc = param_count(m, f.dims);
  out << "method " << f.method << '\n';
  for (const auto& [name, n] : pc.groups) out << "  " << name << ' ' << n << '\n';
  out << "total " << pc.total << '\n';
  return kExitOk;
}

}  // namespace

std::filesystem::path anchors_sidecar_path(const std::filesystem::path& data_path) {
  auto p = data_path;
  const auto ext = p.extension().string();
  p.replace_extension();
  p += ".anchors" + (ext.empty() ? std::string(".jsonl") : ext);
  return p;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Few-shot prompt learning over frozen audio-text embeddings", "palmlab"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  const auto ids = method_ids();

  GenerateFlags gen;
  auto* generate = app.add_subcommand("generate", "Write a synthetic aligned embedding dataset and its anchors");
  generate->add_option("--classes", gen.spec.classes, "Number of classes")->check(CLI::Range(std::size_t{2}, std::size_t{100000}));
  generate->add_option("--dim", gen.spec.dim, "Embedding dimension")->check(CLI::PositiveNumber);
  generate->add_option("--samples-per-class", gen.spec.samples_per_class, "Records per class")
      ->check(CLI::PositiveNumber);
  generate->add_option("--text-seed", gen.spec.text_anchor_seed, "Seed of the text anchors");
  generate->add_option("--audio-seed", gen.spec.audio_seed, "Seed of the audio embeddings");
  generate->add_option("--sigma", gen.spec.alignment_noise, "Per-class audio/text misalignment")
      ->check(CLI::NonNegativeNumber);
  generate->add_option("--gap", gen.spec.modality_gap, "Modality gap magnitude")->check(CLI::NonNegativeNumber);
  generate->add_option("--spread", gen.spec.within_class_spread, "Within-class spread")->check(CLI::PositiveNumber);
  generate->add_option("--folds", gen.folds, "Assign stratified folds (0: none)");
  generate->add_option("--fold-seed", gen.fold_seed, "Seed of the fold assignment");
  generate->add_option("--out", gen.out, "Output dataset path")->required();
  generate->add_option("--format", gen.format, "jsonl or bin (default: from the extension)")
      ->check(CLI::IsMember({"jsonl", "bin"}));
  add_config_flag(generate, gen.config_file);

  TrainingFlags run_flags;
  std::string run_method = "palm";
  std::string run_data;
  auto* run = app.add_subcommand("run", "Train and evaluate one method over all seeds");
  run->add_option("--method", run_method, "Method id")->check(CLI::IsMember(ids));
  run->add_option("--data", run_data, "Dataset path")->required();
  add_training_flags(run, run_flags, "--out,--results", true);

  TrainingFlags bench_flags;
  std::vector<std::string> bench_data;
  std::vector<std::string> bench_methods = {"zeroshot", "palm"};
  std::string bench_out;
  auto* bench = app.add_subcommand("bench", "Run methods x datasets and emit an accuracy table");
  bench->add_option("--data", bench_data, "Dataset paths")->required();
  bench->add_option("--methods", bench_methods, "Comma-separated method ids")
      ->delimiter(',')
      ->check(CLI::IsMember(ids));
  bench->add_option("--out", bench_out, "Table path (.md or .csv)");
  add_training_flags(bench, bench_flags, "--results", true);

  TrainingFlags sweep_flags;
  std::string sweep_method = "palm";
  std::string sweep_data;
  std::vector<std::size_t> sweep_shots(std::begin(kDefaultShotList), std::end(kDefaultShotList));
  std::string sweep_out;
  auto* sweep = app.add_subcommand("sweep", "Accuracy as a function of shots per class (CSV)");
  sweep->add_option("--method", sweep_method, "Method id")->check(CLI::IsMember(ids));
  sweep->add_option("--data", sweep_data, "Dataset path")->required();
  sweep->add_option("--shots-list", sweep_shots, "Comma-separated shot counts")
      ->delimiter(',')
      ->check(CLI::PositiveNumber);
  sweep->add_option("--out", sweep_out, "CSV path");
  add_training_flags(sweep, sweep_flags, "--results", false);

  ParamsFlags params_flags;
  auto* params = app.add_subcommand("params", "Print learnable-parameter counts");
  params->add_option("--method", params_flags.method, "Method id")->check(CLI::IsMember(ids));
  params->add_option("--classes", params_flags.dims.classes, "Number of classes c");
  params->add_option("--dim", params_flags.dims.dim, "Embedding dimension d")->check(CLI::PositiveNumber);
  params->add_option("--ctx", params_flags.dims.context_tokens, "Context tokens M")->check(CLI::PositiveNumber);
  params->add_option("--embed", params_flags.dims.embed_dim, "Token embedding width e")->check(CLI::PositiveNumber);
  params->add_option("--hidden", params_flags.dims.hidden, "Meta-net hidden width h")->check(CLI::PositiveNumber);

  std::vector<std::string> expanded;
  try {
    expanded = merge_config_file(app, args);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e.category());
  }
  std::vector<std::string> argv_storage = {"palmlab"};
  argv_storage.insert(argv_storage.end(), expanded.begin(), expanded.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_storage) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*generate) return cmd_generate(gen, out);
    if (*run) return cmd_run(run_flags, run_method, run_data, out, err);
    if (*bench) return cmd_bench(bench_flags, bench_data, bench_methods, bench_out, out, err);
    if (*sweep) return cmd_sweep(sweep_flags, sweep_method, sweep_data, sweep_shots, sweep_out, out);
    if (*params) return cmd_params(params_flags, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e.category());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace palmlab
