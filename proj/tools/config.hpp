// Copyright 2026 The QMoP Projector Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef QMOP_TOOLS_CONFIG_HPP
#define QMOP_TOOLS_CONFIG_HPP

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"
#include "qmop/costmodel.hpp"
#include "qmop/pipeline.hpp"
#include "qmop/trainer.hpp"

namespace qmop::cli {

struct TrainSettings {
  double lr = 0.05;
  std::size_t batch = 4;
  std::size_t steps = 200;
};

struct Seeds {
  std::uint64_t params = 0;
  std::uint64_t data = 1;
  std::uint64_t teacher = 2;
  std::uint64_t noise = 3;
};

// Every knob of a run. Defaults describe the tiny verification config
// (4x4 grid, M=4, C=8, C2=6, D_llm=8).
struct PipelineConfig {
  ProjectorDims dims;
  ProjectorOptions options;
  InferMode inference = InferMode::topk(2);
  AnnealSchedule schedule;
  TrainSettings train;
  Seeds seeds;
  std::size_t query_len = 51;
  double text_encoder_macs_per_token = 0.0;

  cost::ProjectorCostDims cost_dims() const;
};

// Parses the JSON config format (comments allowed). Missing keys keep their
// defaults; unknown keys and cross-field inconsistencies throw ConfigError.
PipelineConfig parse_config(const nlohmann::json& doc);
PipelineConfig load_config(const std::filesystem::path& path);

// Fully resolved config, suitable for echoing into reports and for
// re-parsing with parse_config.
nlohmann::json to_json(const PipelineConfig& config);

}  // namespace qmop::cli

#endif  // QMOP_TOOLS_CONFIG_HPP
