// Copyright 2026 The QMoP Projector Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "json.hpp"
#include "qmop/bundle.hpp"
#include "qmop/trainer.hpp"

namespace qmop::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "qmop");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out;
  std::ostringstream err;
  const int code = run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path work(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "qmop_test_cli";
  fs::create_directories(dir);
  return dir / name;
}

std::string write_text(const std::string& name, const std::string& text) {
  const fs::path p = work(name);
  std::ofstream(p) << text;
  return p.string();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string synth(const std::string& name, const std::string& grid, int seed = 1,
                  const std::string& cvis = "8", const std::string& ctxt = "6") {
  const std::string path = work(name).string();
  const Result r = run_cli({"synth", "--seed", std::to_string(seed), "--grid", grid, "--cvis",
                            cvis, "--ctxt", ctxt, "--out", path});
  EXPECT_EQ(r.code, kOk) << r.err;
  return path;
}

std::string llava_config(int m_tokens, int stride) {
  return write_text("llava_m" + std::to_string(m_tokens) + ".json",
                    R"({"dims": {"grid_h": 24, "grid_w": 24, "c_vis": 8, "c_txt": 6,
                                 "d_llm": 16, "m_tokens": )" +
                        std::to_string(m_tokens) + R"(, "pool_stride": )" +
                        std::to_string(stride) + "}}");
}

int shell_exit(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(Synth, WritesParseableDeterministicFile) {
  const std::string a = synth("s1.qft", "4x4");
  const std::string b = synth("s2.qft", "4x4");
  EXPECT_EQ(read_bundle(a).num_tokens(), 16u);
  EXPECT_EQ(slurp(a), slurp(b));
}

TEST(Synth, ZeroGridIsUsageError) {
  const Result r = run_cli({"synth", "--grid", "0x4", "--out", work("bad.qft").string()});
  EXPECT_EQ(r.code, kUsage);
  EXPECT_FALSE(r.err.empty());
}

TEST(Compress, DefaultConfigReport) {
  const std::string f = synth("c.qft", "4x4");
  const Result r = run_cli({"compress", "--features", f, "--no-timing"});
  ASSERT_EQ(r.code, kOk) << r.err;
  const json j = json::parse(r.out);
  EXPECT_EQ(j["kind"], "run_report");
  EXPECT_EQ(j["output"]["rows"], 4);
  EXPECT_EQ(j["output"]["cols"], 8);
  EXPECT_EQ(j["active"]["members"].size(), 2u);
  EXPECT_FALSE(j.contains("timing_ms"));
  EXPECT_FALSE(j.contains("tokens"));
}

TEST(Compress, TopOneHasSingleUnitWeight) {
  const std::string f = synth("c1.qft", "4x4");
  const Result r = run_cli({"compress", "--features", f, "--mode", "topk:1", "--no-timing"});
  ASSERT_EQ(r.code, kOk) << r.err;
  const json j = json::parse(r.out);
  ASSERT_EQ(j["active"]["members"].size(), 1u);
  EXPECT_EQ(j["active"]["weights"][0].get<double>(), 1.0);
}

TEST(Compress, ByteIdenticalAcrossRuns) {
  const std::string f = synth("c2.qft", "4x4");
  for (const char* mode : {"topk:2", "threshold:0.2", "stage1", "train"}) {
    const Result a = run_cli({"compress", "--features", f, "--mode", mode, "--no-timing"});
    const Result b = run_cli({"compress", "--features", f, "--mode", mode, "--no-timing"});
    ASSERT_EQ(a.code, kOk) << a.err;
    EXPECT_EQ(a.out, b.out) << mode;
  }
}

TEST(Compress, DumpTokensEmbedsMatrix) {
  const std::string f = synth("c3.qft", "4x4");
  const json j = json::parse(run_cli({"compress", "--features", f, "--dump-tokens", "--no-timing"}).out);
  EXPECT_EQ(j["tokens"].size(), 4u);
  EXPECT_EQ(j["tokens"][0].size(), 8u);
}

TEST(Compress, BatchKeepsOrderWithJobs) {
  const std::string a = synth("b1.qft", "4x4", 1);
  const std::string b = synth("b2.qft", "4x4", 2);
  const std::string c = synth("b3.qft", "4x4", 3);
  const Result serial =
      run_cli({"compress", "--features", a, "--features", b, "--features", c, "--no-timing"});
  const Result parallel = run_cli({"compress", "--features", a, "--features", b, "--features", c,
                                   "--jobs", "3", "--no-timing"});
  ASSERT_EQ(serial.code, kOk) << serial.err;
  EXPECT_EQ(serial.out, parallel.out);
  const json j = json::parse(serial.out);
  EXPECT_EQ(j["kind"], "batch_report");
  EXPECT_EQ(j["reports"][1]["features"], b);
  EXPECT_NE(j["reports"][0]["output"]["digest"], j["reports"][1]["output"]["digest"]);
}

TEST(Compress, DimensionMismatchExit3) {
  const std::string f = synth("m.qft", "6x6");
  const Result r = run_cli({"compress", "--features", f});
  EXPECT_EQ(r.code, kDimensionMismatch);
  EXPECT_NE(r.err.find("6x6"), std::string::npos);
  EXPECT_NE(r.err.find("4x4"), std::string::npos);
}

TEST(Compress, MissingFileAndBadModeExit2) {
  EXPECT_EQ(run_cli({"compress", "--features", work("nope.qft").string()}).code, kUsage);
  const std::string f = synth("bm.qft", "4x4");
  EXPECT_EQ(run_cli({"compress", "--features", f, "--mode", "topk:7"}).code, kUsage);
  EXPECT_EQ(run_cli({"compress", "--features", f, "--config", work("none.json").string()}).code,
            kUsage);
}

TEST(Compress, FullScaleGridEveryMode) {
  const std::string f = synth("llava.qft", "24x24", 5);
  for (const auto& [m, stride] : {std::pair{144, 2}, std::pair{64, 3}}) {
    const std::string cfg = llava_config(m, stride);
    for (const char* mode : {"topk:1", "topk:2", "topk:3", "threshold:0.2", "stage1", "train"}) {
      const Result r = run_cli({"compress", "--features", f, "--config", cfg, "--mode", mode,
                                "--no-timing"});
      ASSERT_EQ(r.code, kOk) << r.err;
      const json j = json::parse(r.out);
      EXPECT_EQ(j["output"]["rows"], m) << mode;
      EXPECT_EQ(j["output"]["cols"], 16) << mode;
    }
  }
}

TEST(Gradcheck, DefaultPasses) {
  const Result r = run_cli({"gradcheck", "--trials", "2"});
  ASSERT_EQ(r.code, kOk) << r.err;
  const json j = json::parse(r.out);
  EXPECT_TRUE(j["passed"].get<bool>());
  EXPECT_LE(j["worst"].get<double>(), 1e-4);
  EXPECT_TRUE(j["max_rel_err"]["stage1"].contains("pool.q2d"));
  EXPECT_TRUE(j["max_rel_err"]["train"].contains("router.w1"));
}

TEST(Gradcheck, ExceededThresholdExit4) {
  const Result r = run_cli({"gradcheck", "--trials", "1", "--threshold", "1e-300"});
  EXPECT_EQ(r.code, kVerificationFailed);
  EXPECT_FALSE(json::parse(r.out)["passed"].get<bool>());
  EXPECT_NE(r.err.find("train/"), std::string::npos);
}

TEST(Gradcheck, SizeGuardsExit2) {
  const std::string big = write_text(
      "big.json", R"({"dims": {"grid_h": 40, "grid_w": 25, "m_tokens": 40, "pool_stride": 5}})");
  EXPECT_EQ(run_cli({"gradcheck", "--config", big}).code, kUsage);
  EXPECT_EQ(run_cli({"gradcheck", "--trials", "0"}).code, kUsage);
}

TEST(Cost, TableAnchors) {
  json j = json::parse(run_cli({"cost", "--tokens", "144"}).out);
  EXPECT_NEAR(j["kv_cache_m"].get<double>(), 75.5, 1e-12);
  j = json::parse(run_cli({"cost", "--tokens", "576"}).out);
  EXPECT_NEAR(j["llm_tflops"].get<double>(), 3.82, 1e-12);
  j = json::parse(run_cli({"cost", "--tokens", "0"}).out);
  EXPECT_EQ(j["llm_tflops"].get<double>(), 0.0);
  EXPECT_EQ(j["kv_cache_m"].get<double>(), 0.0);
  EXPECT_EQ(j["projector_gflops"].get<double>(), 0.0);
  EXPECT_EQ(j["router_gflops"].get<double>(), 0.0);
}

TEST(Cost, RequiresTokens) { EXPECT_EQ(run_cli({"cost"}).code, kUsage); }

TEST(TrainToy, StageOneSmoke) {
  const Result r = run_cli({"train-toy", "--stage", "1", "--steps", "20", "--no-timing"});
  ASSERT_EQ(r.code, kOk) << r.err;
  const json j = json::parse(r.out);
  EXPECT_EQ(j["loss"].size(), 20u);
  EXPECT_TRUE(j["initial_gate_entropy"].is_null());
}

TEST(TrainToy, StageTwoEchoesSchedule) {
  const Result r = run_cli({"train-toy", "--stage", "2", "--steps", "30", "--no-timing"});
  ASSERT_EQ(r.code, kOk) << r.err;
  const json j = json::parse(r.out);
  ASSERT_EQ(j["tau"].size(), 30u);
  const AnnealSchedule s;
  for (std::size_t t = 0; t < 30; ++t) EXPECT_EQ(j["tau"][t].get<double>(), tau_at(s, t));
  const Result again = run_cli({"train-toy", "--stage", "2", "--steps", "30", "--no-timing"});
  EXPECT_EQ(r.out, again.out);
}

TEST(TrainToy, DivergenceExit5) {
  const std::string cfg = write_text("diverge.json", R"({"train": {"lr": 1e8}})");
  const Result r = run_cli({"train-toy", "--config", cfg, "--stage", "1", "--steps", "50"});
  EXPECT_EQ(r.code, kDiverged);
  EXPECT_NE(r.err.find("step"), std::string::npos);
}

TEST(TrainToy, BadStageIsUsage) {
  EXPECT_EQ(run_cli({"train-toy", "--stage", "3"}).code, kUsage);
}

TEST(Binary, ProcessExitCodes) {
  const std::string bin = QMOP_BINARY;
  const std::string quiet = " >/dev/null 2>&1";
  EXPECT_EQ(shell_exit(bin + " cost --tokens 16" + quiet), 0);
  EXPECT_EQ(shell_exit(bin + " synth --grid 0x4 --out " + work("x.qft").string() + quiet), 2);
  const std::string f = synth("bin.qft", "6x6");
  EXPECT_EQ(shell_exit(bin + " compress --features " + f + quiet), 3);
  const std::string bad = write_text("bad_grad.json", R"({"dims": {"grid_h": 40, "grid_w": 25,
      "m_tokens": 40, "pool_stride": 5}})");
  EXPECT_EQ(shell_exit(bin + " gradcheck --config " + bad + quiet), 2);
  const std::string cfg = write_text("diverge_bin.json", R"({"train": {"lr": 1e8}})");
  EXPECT_EQ(shell_exit(bin + " train-toy --steps 50 --config " + cfg + quiet), 5);
  EXPECT_EQ(shell_exit(bin + " gradcheck --trials 1 --threshold 1e-300" + quiet), 4);
  EXPECT_EQ(shell_exit(bin + " --help" + quiet), 0);
  EXPECT_EQ(shell_exit(bin + " frobnicate" + quiet), 2);
}

}  // namespace
}  // namespace qmop::cli
