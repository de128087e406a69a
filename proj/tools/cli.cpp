// Copyright 2026 The QMoP Projector Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <future>
#include <iostream>
#include <optional>
#include <regex>

#include "CLI11.hpp"
#include "config.hpp"
#include "json.hpp"
#include "qmop/bundle.hpp"
#include "qmop/costmodel.hpp"
#include "qmop/digest.hpp"
#include "qmop/errors.hpp"
#include "qmop/numerics.hpp"
#include "qmop/pipeline.hpp"
#include "qmop/rng.hpp"
#include "qmop/trainer.hpp"

namespace qmop::cli {

namespace {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

constexpr double kGradTolerance = 1e-4;
constexpr double kGradEps = 1e-5;
constexpr std::size_t kGradcheckMaxTokens = 64;

// Usage problem detected after CLI11 parsing.
class UsageError : public Error {
 public:
  using Error::Error;
};

double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

void emit(const json& doc, const std::string& path, std::ostream& out) {
  const std::string text = doc.dump(2) + "\n";
  if (path.empty() || path == "-") {
    out << text;
    return;
  }
  std::ofstream file(path, std::ios::trunc);
  if (!file) throw IoError("cannot open " + path + " for writing");
  file << text;
  if (!file) throw IoError("failed writing " + path);
}

PipelineConfig config_or_default(const std::string& path) {
  return path.empty() ? PipelineConfig{} : load_config(path);
}

json to_json(const cost::CostReport& r) {
  const auto& p = r.projector;
  return {{"n_tokens", r.n_tokens},
          {"llm_tflops", r.llm_tflops},
          {"kv_cache_m", r.kv_cache_m},
          {"projector_gflops", r.projector_gflops},
          {"router_gflops", r.router_gflops},
          {"projector_breakdown",
           {{"pool", p.branch_gflops[index_of(Branch::kPool)]},
            {"resample", p.branch_gflops[index_of(Branch::kResample)]},
            {"prune", p.branch_gflops[index_of(Branch::kPrune)]},
            {"out_mlp", p.out_mlp_gflops},
            {"topk2_max", p.topk_gflops(2)}}}};
}

json to_json(const GateWeights& g) {
  return {{"alpha", g.alpha},
          {"logits", g.logits},
          {"tau", g.tau_used},
          {"gumbel_applied", g.gumbel_applied}};
}

json to_json(const ActiveSet& a) {
  json members = json::array();
  for (Branch b : a.members) members.push_back(std::string(branch_name(b)));
  return {{"members", members}, {"weights", a.renorm_weights}};
}

json tokens_to_json(const Matrix& m) {
  json rows = json::array();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (double x : m.row(i)) row.push_back(static_cast<float>(x));
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthArgs {
  std::uint64_t seed = 0;
  std::string grid = "4x4";
  std::uint32_t c_vis = 8;
  std::uint32_t c_txt = 6;
  std::string out;
  std::optional<std::string> text;
};

std::pair<std::uint32_t, std::uint32_t> parse_grid(const std::string& s) {
  static const std::regex pattern(R"((\d+)[xX](\d+))");
  std::smatch m;
  if (!std::regex_match(s, m, pattern)) throw UsageError("--grid must look like HxW, got " + s);
  const unsigned long h = std::stoul(m[1]);
  const unsigned long w = std::stoul(m[2]);
  if (h == 0 || w == 0 || h > 4096 || w > 4096) {
    throw UsageError("--grid dimensions must lie in [1, 4096], got " + s);
  }
  return {static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(w)};
}

int cmd_synth(const SynthArgs& a) {
  const auto [h, w] = parse_grid(a.grid);
  if (a.c_vis == 0 || a.c_txt == 0) throw UsageError("--cvis and --ctxt must be at least 1");
  FeatureBundle bundle = synth_bundle(a.seed, h, w, a.c_vis, a.c_txt);
  bundle.text_raw = a.text;
  write_bundle(bundle, a.out);
  return kOk;
}

// ---------------------------------------------------------------------------
// compress
// ---------------------------------------------------------------------------

struct CompressArgs {
  std::vector<std::string> features;
  std::string config;
  std::string mode;
  std::string out = "-";
  bool no_timing = false;
  bool dump_tokens = false;
  std::size_t jobs = 1;
};

json compress_one(const std::string& path, const PipelineConfig& config,
                  const ProjectorParams& params, const std::string& mode, const CompressArgs& a) {
  const auto start = Clock::now();
  const FeatureBundle bundle = read_bundle(path);
  check_bundle_fits(bundle, params);

  ProjectedTokens result;
  if (mode == "stage1") {
    result = stage1_forward(bundle, params);
  } else if (mode == "train") {
    result = train_forward(bundle, params, 1.0, 0.0, 0);
  } else {
    result = infer_forward(bundle, params, InferMode::parse(mode));
  }

  json report = {
      {"kind", "run_report"},
      {"features", path},
      {"mode", mode},
      {"forward", std::string(mode_name(result.mode))},
      {"config", to_json(config)},
      {"gate", result.gate ? to_json(*result.gate) : json(nullptr)},
      {"active", result.active ? to_json(*result.active) : json(nullptr)},
      {"output",
       {{"rows", result.tokens.rows()},
        {"cols", result.tokens.cols()},
        {"digest", digest_f32(result.tokens)}}},
      {"cost", to_json(cost::cost_report(params.m_tokens, config.cost_dims()))},
  };
  if (a.dump_tokens) report["tokens"] = tokens_to_json(result.tokens);
  if (!a.no_timing) report["timing_ms"] = elapsed_ms(start);
  return report;
}

int cmd_compress(const CompressArgs& a, std::ostream& out) {
  const PipelineConfig config = config_or_default(a.config);
  const std::string mode = a.mode.empty() ? config.inference.to_string() : a.mode;
  if (mode != "stage1" && mode != "train") {
    try {
      InferMode::parse(mode);
    } catch (const DomainError& e) {
      throw UsageError(e.what());
    }
  }
  for (const auto& path : a.features) {
    if (!std::filesystem::exists(path)) throw IoError("feature file not found: " + path);
  }
  const ProjectorParams params = init_params(config.dims, config.options, config.seeds.params);

  // Bundles are independent; results keep input order.
  std::vector<json> reports(a.features.size());
  const std::size_t jobs = std::max<std::size_t>(1, a.jobs);
  for (std::size_t begin = 0; begin < a.features.size(); begin += jobs) {
    const std::size_t end = std::min(a.features.size(), begin + jobs);
    std::vector<std::future<json>> wave;
    for (std::size_t i = begin; i < end; ++i) {
      wave.push_back(std::async(jobs > 1 ? std::launch::async : std::launch::deferred, [&, i] {
        return compress_one(a.features[i], config, params, mode, a);
      }));
    }
    for (std::size_t i = begin; i < end; ++i) reports[i] = wave[i - begin].get();
  }

  if (reports.size() == 1) {
    emit(reports.front(), a.out, out);
  } else {
    emit(json{{"kind", "batch_report"}, {"reports", reports}}, a.out, out);
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

struct GradcheckArgs {
  std::string config;
  std::size_t trials = 5;
  double threshold = kGradTolerance;
  std::string out = "-";
};

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out, std::ostream& err) {
  if (a.trials == 0) throw UsageError("--trials must be at least 1");
  if (!(a.threshold > 0.0)) throw UsageError("--threshold must be positive");
  const PipelineConfig config = config_or_default(a.config);
  if (config.dims.num_tokens() > kGradcheckMaxTokens) {
    throw UsageError("gradcheck is limited to N <= " + std::to_string(kGradcheckMaxTokens) +
                     " tokens, config has N = " + std::to_string(config.dims.num_tokens()));
  }

  std::map<std::string, std::map<std::string, double>> worst;
  for (std::size_t t = 0; t < a.trials; ++t) {
    const auto& d = config.dims;
    const FeatureBundle bundle =
        synth_bundle(derive_seed(config.seeds.data, t), d.grid_h, d.grid_w, d.c_vis, d.c_txt);
    const ProjectorParams params =
        init_params(d, config.options, derive_seed(config.seeds.params, t));
    const Matrix target =
        seeded_fill(derive_seed(config.seeds.teacher, t), d.m_tokens, d.d_llm, Gaussian{1.0});
    const std::pair<const char*, GradMode> modes[] = {
        {"stage1", GradMode::stage1()},
        {"train", GradMode::train(1.0, 1.0, derive_seed(config.seeds.noise, t))},
    };
    for (const auto& [label, mode] : modes) {
      for (const auto& [name, e] : gradient_check(bundle, params, target, mode, kGradEps)) {
        double& slot = worst[label][name];
        slot = std::max(slot, e);
      }
    }
  }

  double overall = 0.0;
  std::vector<std::string> offending;
  for (const auto& [label, tensors] : worst) {
    for (const auto& [name, e] : tensors) {
      overall = std::max(overall, e);
      if (!(e <= a.threshold)) offending.push_back(label + "/" + name);
    }
  }
  const json report = {{"kind", "gradcheck_report"},
                       {"trials", a.trials},
                       {"eps", kGradEps},
                       {"threshold", a.threshold},
                       {"max_rel_err", worst},
                       {"worst", overall},
                       {"passed", offending.empty()},
                       {"config", to_json(config)}};
  emit(report, a.out, out);
  if (!offending.empty()) {
    err << "gradient check failed for:";
    for (const auto& name : offending) err << ' ' << name;
    err << '\n';
    return kVerificationFailed;
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// cost
// ---------------------------------------------------------------------------

struct CostArgs {
  std::size_t tokens = 0;
  cost::ProjectorCostDims dims;
  std::string out = "-";
};

int cmd_cost(const CostArgs& a, std::ostream& out) {
  json report = to_json(cost::cost_report(a.tokens, a.dims));
  report["kind"] = "cost_report";
  emit(report, a.out, out);
  return kOk;
}

// ---------------------------------------------------------------------------
// train-toy
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  int stage = 1;
  std::optional<std::size_t> steps;
  std::string out = "-";
  bool no_timing = false;
};

int cmd_train_toy(const TrainArgs& a, std::ostream& out) {
  const auto start = Clock::now();
  const PipelineConfig config = config_or_default(a.config);
  const auto& d = config.dims;

  TrainConfig tc;
  tc.stage = a.stage;
  tc.steps = a.steps.value_or(config.train.steps);
  tc.lr = config.train.lr;
  tc.seed = config.seeds.noise;
  tc.schedule = config.schedule;
  for (std::size_t i = 0; i < config.train.batch; ++i) {
    tc.batch.push_back(
        synth_bundle(derive_seed(config.seeds.data, i), d.grid_h, d.grid_w, d.c_vis, d.c_txt));
  }
  tc.targets = teacher_targets(tc.batch, d, config.options, a.stage, config.seeds.teacher);
  tc.params = init_params(d, config.options, config.seeds.params);

  const TrainReport r = train_toy(tc);
  json report = {{"kind", "train_report"},
                 {"stage", r.stage},
                 {"steps", tc.steps},
                 {"lr", tc.lr},
                 {"loss", r.losses},
                 {"tau", r.taus},
                 {"gumbel_scale", r.gumbel_scales},
                 {"gate_entropy", r.gate_entropies},
                 {"initial_gate_entropy", r.stage == 2 ? json(r.initial_gate_entropy) : json()},
                 {"final_gate_entropy", r.stage == 2 ? json(r.final_gate_entropy) : json()},
                 {"grad_check_max_rel_err", r.grad_check_max_rel_err},
                 {"params_digest", r.params_digest},
                 {"config", to_json(config)}};
  if (!a.no_timing) report["timing_ms"] = elapsed_ms(start);
  emit(report, a.out, out);
  return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Query-guided mixture-of-projector toolkit"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Write a deterministic synthetic feature file");
  synth_cmd->add_option("--seed", synth.seed, "PRNG seed");
  synth_cmd->add_option("--grid", synth.grid, "Patch grid as HxW");
  synth_cmd->add_option("--cvis", synth.c_vis, "Visual channel width C");
  synth_cmd->add_option("--ctxt", synth.c_txt, "Text channel width C2");
  synth_cmd->add_option("--text", synth.text, "Optional raw query text to embed");
  synth_cmd->add_option("--out", synth.out, "Output path")->required();

  CompressArgs compress;
  auto* compress_cmd = app.add_subcommand("compress", "Run the projector on feature files");
  compress_cmd->add_option("--features", compress.features, "QMOPFT01 feature file(s)")
      ->required();
  compress_cmd->add_option("--config", compress.config, "Pipeline config (JSON)");
  compress_cmd->add_option("--mode", compress.mode,
                           "topk:K, threshold:THETA, stage1 or train (default from config)");
  compress_cmd->add_option("--out", compress.out, "Report path, '-' for stdout");
  compress_cmd->add_option("--jobs", compress.jobs, "Bundles processed in parallel");
  compress_cmd->add_flag("--no-timing", compress.no_timing, "Omit wall-clock timing");
  compress_cmd->add_flag("--dump-tokens", compress.dump_tokens, "Embed output tokens");

  GradcheckArgs gradcheck;
  auto* gradcheck_cmd =
      app.add_subcommand("gradcheck", "Compare analytic gradients with central differences");
  gradcheck_cmd->add_option("--config", gradcheck.config, "Pipeline config (JSON)");
  gradcheck_cmd->add_option("--trials", gradcheck.trials, "Number of seeded trials");
  gradcheck_cmd->add_option("--threshold", gradcheck.threshold, "Pass threshold on relative error");
  gradcheck_cmd->add_option("--out", gradcheck.out, "Report path, '-' for stdout");

  CostArgs cost_args;
  auto* cost_cmd = app.add_subcommand("cost", "Estimate LLM and projector cost");
  cost_cmd->add_option("--tokens", cost_args.tokens, "Visual tokens fed to the LLM")->required();
  cost_cmd->add_option("--n-in", cost_args.dims.n_in, "Tokens entering the projector");
  cost_cmd->add_option("--c-vis", cost_args.dims.c_vis, "Visual channel width");
  cost_cmd->add_option("--c-txt", cost_args.dims.c_txt, "Text channel width");
  cost_cmd->add_option("--d-llm", cost_args.dims.d_llm, "LLM embedding width");
  cost_cmd->add_option("--router-hidden", cost_args.dims.router_hidden, "Router hidden width");
  cost_cmd->add_option("--query-len", cost_args.dims.query_len, "Text query length");
  cost_cmd->add_option("--text-encoder-macs", cost_args.dims.text_encoder_macs_per_token,
                       "Text encoder MACs per query token (0: EOS precomputed)");
  cost_cmd->add_option("--out", cost_args.out, "Report path, '-' for stdout");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train-toy", "Run the toy two-stage trainer");
  train_cmd->add_option("--config", train.config, "Pipeline config (JSON)");
  train_cmd->add_option("--stage", train.stage, "Training stage")
      ->check(CLI::IsMember({1, 2}));
  train_cmd->add_option("--steps", train.steps, "Override train.steps");
  train_cmd->add_option("--out", train.out, "Report path, '-' for stdout");
  train_cmd->add_flag("--no-timing", train.no_timing, "Omit wall-clock timing");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n' << app.help();
    return kUsage;
  }

  try {
    if (*synth_cmd) return cmd_synth(synth);
    if (*compress_cmd) return cmd_compress(compress, out);
    if (*gradcheck_cmd) return cmd_gradcheck(gradcheck, out, err);
    if (*cost_cmd) return cmd_cost(cost_args, out);
    if (*train_cmd) return cmd_train_toy(train, out);
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << " (step " << e.step() << ")\n";
    return kDiverged;
  } catch (const ShapeError& e) {
    err << "dimension mismatch: " << e.what() << '\n';
    return kDimensionMismatch;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kInternal;
  }
  return kUsage;
}

}  // namespace qmop::cli
