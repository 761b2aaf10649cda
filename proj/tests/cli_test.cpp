// Copyright 2026 The palmlab Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "palmlab/cli.hpp"
#include "palmlab/embedio.hpp"
#include "test_support.hpp"

namespace palmlab {
namespace {

using testing::TempDir;

struct Outcome {
  int code = 0;
  std::string out;
  std::string err;
};

Outcome cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  Outcome o;
  o.code = run_cli(args, out, err);
  o.out = out.str();
  o.err = err.str();
  return o;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

std::string generate(const TempDir& dir, const std::string& name, std::vector<std::string> extra = {}) {
  const std::string path = (dir / name).string();
  std::vector<std::string> args = {"generate", "--out", path};
  args.insert(args.end(), extra.begin(), extra.end());
  const Outcome o = cli(args);
  EXPECT_EQ(o.code, 0) << o.err;
  return path;
}

bool contains(const std::string& hay, const std::string& needle) { return hay.find(needle) != std::string::npos; }

TEST(CliTest, SidecarPath) {
  EXPECT_EQ(anchors_sidecar_path("data/esc.jsonl"), std::filesystem::path("data/esc.anchors.jsonl"));
  EXPECT_EQ(anchors_sidecar_path("x.bin"), std::filesystem::path("x.anchors.bin"));
}

TEST(CliGenerateTest, DefaultsValidate) {
  TempDir dir("cli-gen");
  const Outcome o = cli({"generate", "--out", (dir / "d.jsonl").string()});
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_TRUE(contains(o.out, "classes 6\n"));
  EXPECT_TRUE(contains(o.out, "dim 64\n"));
  EXPECT_TRUE(contains(o.out, "records 600\n"));
  EXPECT_TRUE(contains(o.out, "zero-shot accuracy 0.5000\n"));
  const auto ds = load_dataset(dir / "d.jsonl");
  EXPECT_NO_THROW(ds.validate());
  EXPECT_EQ(ds.records.size(), 600u);
  EXPECT_TRUE(std::filesystem::exists(dir / "d.anchors.jsonl"));
}

TEST(CliGenerateTest, ZeroSamplesNamesTheFlag) {
  TempDir dir("cli-gen0");
  const Outcome o = cli({"generate", "--samples-per-class", "0", "--out", (dir / "d.jsonl").string()});
  EXPECT_EQ(o.code, 2);
  EXPECT_TRUE(contains(o.err, "--samples-per-class")) << o.err;
  EXPECT_FALSE(std::filesystem::exists(dir / "d.jsonl"));
}

TEST(CliGenerateTest, RepeatIsByteIdentical) {
  TempDir dir("cli-gen2");
  for (const char* ext : {".jsonl", ".bin"}) {
    const auto a = generate(dir, std::string("a") + ext, {"--classes", "3", "--samples-per-class", "5"});
    const auto b = generate(dir, std::string("b") + ext, {"--classes", "3", "--samples-per-class", "5"});
    EXPECT_EQ(slurp(a), slurp(b));
    EXPECT_FALSE(slurp(a).empty());
  }
}

TEST(CliGenerateTest, FoldsAndFormatFlag) {
  TempDir dir("cli-gen3");
  const auto p = generate(dir, "f.data", {"--format", "bin", "--folds", "4", "--samples-per-class", "8"});
  const auto ds = load_binary(p);
  EXPECT_EQ(ds.fold_count(), 4u);
  EXPECT_EQ(cli({"generate", "--format", "xml", "--out", (dir / "x").string()}).code, 2);
}

TEST(CliRunTest, PerfectAlignmentZeroShot) {
  TempDir dir("cli-run0");
  const auto p = generate(dir, "p.jsonl", {"--sigma", "0", "--gap", "0", "--spread", "1e-9"});
  const Outcome o = cli({"run", "--method", "zeroshot", "--data", p});
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_TRUE(contains(o.out, "average accuracy 1.0000\n")) << o.out;
  EXPECT_TRUE(contains(o.out, "seed 0 accuracy 1.0000\n"));
}

TEST(CliRunTest, PalmFixture) {
  TempDir dir("cli-run1");
  const auto p = generate(dir, "std.jsonl");
  const auto results = (dir / "r.jsonl").string();
  const Outcome o = cli({"run", "--data", p, "--out", results});
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_EQ(o.out,
            "method palm on std\n"
            "seed 0 accuracy 0.8500\n"
            "seed 1 accuracy 0.8533\n"
            "seed 2 accuracy 0.8500\n"
            "average accuracy 0.8511\n");
  const std::string jsonl = slurp(results);
  EXPECT_EQ(std::count(jsonl.begin(), jsonl.end(), '\n'), 3);
  EXPECT_TRUE(contains(jsonl, R"("correct":255,"total":300)"));
  EXPECT_TRUE(contains(jsonl, R"("correct":256,"total":300)"));
}

TEST(CliRunTest, MissingDataIsConfigError) {
  const Outcome o = cli({"run", "--method", "palm"});
  EXPECT_EQ(o.code, 2);
  EXPECT_TRUE(contains(o.err, "--data")) << o.err;
}

TEST(CliRunTest, ExitCodes) {
  TempDir dir("cli-codes");
  EXPECT_EQ(cli({"run", "--data", (dir / "absent.jsonl").string()}).code, 3);
  write(dir / "bad.jsonl", "{not json\n");
  EXPECT_EQ(cli({"run", "--data", (dir / "bad.jsonl").string()}).code, 4);
  const auto p = generate(dir, "ok.jsonl", {"--samples-per-class", "10"});
  EXPECT_EQ(cli({"run", "--data", p, "--method", "nope"}).code, 2);
  EXPECT_EQ(cli({"run", "--data", p, "--lr", "-1"}).code, 2);
  EXPECT_EQ(cli({"run", "--data", p, "--folds", "1"}).code, 2);
  EXPECT_EQ(cli({"run", "--data", p, "--template", "no slot"}).code, 2);
  EXPECT_EQ(cli({"bogus"}).code, 2);
}

TEST(CliRunTest, FoldLinesPrinted) {
  TempDir dir("cli-folds");
  const auto p = generate(dir, "f.jsonl", {"--samples-per-class", "10"});
  const Outcome o = cli({"run", "--method", "zeroshot", "--data", p, "--folds", "2", "--seeds", "0"});
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_TRUE(contains(o.out, "  seed 0 fold 0 accuracy "));
  EXPECT_TRUE(contains(o.out, "  seed 0 fold 1 accuracy "));
}

TEST(CliBenchTest, TwoByTwoTableDeterministic) {
  TempDir dir("cli-bench");
  const auto a = generate(dir, "a.jsonl", {"--samples-per-class", "30"});
  const auto b = generate(dir, "b.jsonl", {"--samples-per-class", "30", "--audio-seed", "3"});
  const auto run = [&](const std::string& tag, const std::string& jobs) {
    const auto table = (dir / ("t" + tag + ".csv")).string();
    const auto results = (dir / ("r" + tag + ".jsonl")).string();
    const Outcome o = cli({"bench", "--data", a, b, "--methods", "zeroshot,palm", "--out", table, "--results",
                           results, "--jobs", jobs});
    EXPECT_EQ(o.code, 0) << o.err;
    return std::make_tuple(o.out, slurp(table), slurp(results));
  };
  const auto first = run("1", "1");
  const auto second = run("2", "1");
  const auto parallel = run("3", "3");
  EXPECT_EQ(first, second);
  EXPECT_EQ(first, parallel);
  const std::string& md = std::get<0>(first);
  EXPECT_TRUE(contains(md, "| DATASET | zeroshot SEED-0 | zeroshot SEED-1 | zeroshot SEED-2 | zeroshot AVG | "
                           "palm SEED-0 | palm SEED-1 | palm SEED-2 | palm AVG |\n"));
  EXPECT_TRUE(contains(md, "\n| a | "));
  EXPECT_TRUE(contains(md, "\n| b | "));
  EXPECT_TRUE(contains(md, "\n| AVERAGE | "));
  EXPECT_EQ(std::count(md.begin(), md.end(), '\n'), 5);
  EXPECT_TRUE(contains(std::get<1>(first), "DATASET,zeroshot SEED-0"));
}

TEST(CliBenchTest, FailingDatasetKeepsPartialResults) {
  TempDir dir("cli-bench-fail");
  const auto a = generate(dir, "a.jsonl", {"--samples-per-class", "20"});
  const auto bad = (dir / "broken.jsonl").string();
  write(bad, "garbage\n");
  const auto results = (dir / "r.jsonl").string();
  const Outcome o = cli({"bench", "--data", a, bad, "--methods", "zeroshot", "--results", results});
  EXPECT_EQ(o.code, 4);
  EXPECT_TRUE(contains(o.out, "| broken | FAIL | FAIL | FAIL | FAIL |")) << o.out;
  EXPECT_TRUE(contains(o.out, "\n| a | 0."));
  EXPECT_TRUE(contains(o.err, "error: broken:"));
  const std::string jsonl = slurp(results);
  EXPECT_TRUE(contains(jsonl, R"("status":"failed")"));
  EXPECT_TRUE(contains(jsonl, R"("status":"ok")"));
}

TEST(CliSweepTest, SeriesPerShotCount) {
  TempDir dir("cli-sweep");
  const auto p = generate(dir, "s.jsonl", {"--samples-per-class", "20"});
  const auto csv = (dir / "s.csv").string();
  const Outcome o = cli({"sweep", "--data", p, "--shots-list", "1,2,4", "--epochs", "5", "--out", csv});
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_EQ(o.out, slurp(csv));
  EXPECT_EQ(std::count(o.out.begin(), o.out.end(), '\n'), 4);
  EXPECT_EQ(o.out.rfind("shots,SEED-0,SEED-1,SEED-2,AVG\r\n", 0), 0u);
}

TEST(CliParamsTest, Counts) {
  Outcome o = cli({"params", "--method", "palm", "--classes", "4", "--dim", "3"});
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_TRUE(contains(o.out, "total 16\n")) << o.out;
  o = cli({"params", "--method", "coop"});
  EXPECT_TRUE(contains(o.out, "total 8192\n")) << o.out;
  o = cli({"params", "--method", "cocoop"});
  EXPECT_TRUE(contains(o.out, "  meta-net 98880\n")) << o.out;
  EXPECT_TRUE(contains(o.out, "  context tokens 8192\n"));
  EXPECT_EQ(cli({"params", "--method", "palm"}).code, 2);
}

TEST(CliHelpTest, ListsFlagsWithDefaults) {
  const Outcome o = cli({"run", "--help"});
  EXPECT_EQ(o.code, 0);
  for (const char* needle : {"--shots", "--epochs", "--lr", "--seeds", "--temp", "--folds", "--template", "--ctx",
                             "--jobs", "--config"}) {
    EXPECT_TRUE(contains(o.out, needle)) << needle;
  }
  EXPECT_TRUE(contains(o.out, "16"));
  EXPECT_TRUE(contains(o.out, "50"));
  EXPECT_TRUE(contains(o.out, "0.05"));
  EXPECT_TRUE(contains(o.out, "This is a recording of {}"));
  for (const char* sub : {"generate", "bench", "sweep", "params"}) {
    EXPECT_EQ(cli({sub, "--help"}).code, 0) << sub;
  }
}

TEST(CliConfigTest, FileValuesAndOverrides) {
  TempDir dir("cli-config");
  const auto p = generate(dir, "c.jsonl", {"--samples-per-class", "10"});
  const auto cfg = (dir / "run.ini").string();
  write(cfg, "# quick run\nmethod = zeroshot\nseeds = 5\n");
  Outcome o = cli({"run", "--config", cfg, "--data", p});
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_TRUE(contains(o.out, "method zeroshot on c\n"));
  EXPECT_TRUE(contains(o.out, "seed 5 accuracy"));
  o = cli({"run", "--config", cfg, "--data", p, "--seeds", "7"});
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_TRUE(contains(o.out, "seed 7 accuracy"));
  EXPECT_FALSE(contains(o.out, "seed 5 accuracy"));
}

TEST(CliConfigTest, UnknownKeyRejected) {
  TempDir dir("cli-config2");
  const auto p = generate(dir, "c.jsonl", {"--samples-per-class", "10"});
  const auto cfg = (dir / "bad.ini").string();
  write(cfg, "epochz = 3\n");
  const Outcome o = cli({"run", "--config", cfg, "--data", p});
  EXPECT_EQ(o.code, 2);
  EXPECT_TRUE(contains(o.err, "epochz")) << o.err;
  EXPECT_EQ(cli({"run", "--config", (dir / "none.ini").string(), "--data", p}).code, 3);
}

}  // namespace
}  // namespace palmlab
