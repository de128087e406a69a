// Copyright 2026 The QMoP Projector Authors
// SPDX-License-Identifier: Apache-2.0

#include "config.hpp"

#include <fstream>
#include <set>
#include <type_traits>

#include "qmop/errors.hpp"

namespace qmop::cli {

namespace {

using nlohmann::json;

// Reads keys out of one JSON object and rejects any key nobody asked for.
class Section {
 public:
  Section(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) throw ConfigError(where() + " must be an object");
  }

  // Throws on keys that were never requested.
  void finish() const {
    for (const auto& [key, _] : node_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown config key " + path_ + key);
    }
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!node_.contains(key)) return;
    if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
      if (!node_.at(key).is_number_unsigned()) {
        throw ConfigError("config key " + path_ + key + " must be a nonnegative integer");
      }
    }
    try {
      out = node_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError("config key " + path_ + key + ": " + e.what());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return node_.contains(key) ? &node_.at(key) : nullptr;
  }

  std::string prefix(const char* key) const { return path_ + key + "."; }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }

  const json& node_;
  std::string path_;
  std::set<std::string> seen_;
};

RelevanceMetric parse_metric(const std::string& s) {
  if (s == "cosine") return RelevanceMetric::kCosine;
  if (s == "neg_euclidean") return RelevanceMetric::kNegEuclidean;
  throw ConfigError("prune.relevance must be 'cosine' or 'neg_euclidean', got '" + s + "'");
}

Activation parse_activation(const std::string& s) {
  if (s == "gelu") return Activation::kGelu;
  if (s == "relu") return Activation::kRelu;
  throw ConfigError("activation must be 'gelu' or 'relu', got '" + s + "'");
}

}  // namespace

cost::ProjectorCostDims PipelineConfig::cost_dims() const {
  cost::ProjectorCostDims d;
  d.n_in = dims.num_tokens();
  d.c_vis = dims.c_vis;
  d.c_txt = dims.c_txt;
  d.d_llm = dims.d_llm;
  d.router_hidden = dims.resolved_router_hidden();
  d.query_len = query_len;
  d.text_encoder_macs_per_token = text_encoder_macs_per_token;
  return d;
}

PipelineConfig parse_config(const json& doc) {
  PipelineConfig c;
  {
    Section root(doc, "");
    if (const json* node = root.child("dims")) {
      Section s(*node, root.prefix("dims"));
      s.get("grid_h", c.dims.grid_h);
      s.get("grid_w", c.dims.grid_w);
      s.get("c_vis", c.dims.c_vis);
      s.get("c_txt", c.dims.c_txt);
      s.get("d_llm", c.dims.d_llm);
      s.get("m_tokens", c.dims.m_tokens);
      s.get("pool_stride", c.dims.pool_stride);
      s.get("router_hidden", c.dims.router_hidden);
      s.finish();
    }
    if (const json* node = root.child("prune")) {
      Section s(*node, root.prefix("prune"));
      s.get("lambda", c.options.lambda);
      std::string metric = "cosine";
      s.get("relevance", metric);
      c.options.metric = parse_metric(metric);
      s.finish();
    }
    if (const json* node = root.child("pool")) {
      Section s(*node, root.prefix("pool"));
      s.get("shared_projection", c.options.shared_pool_projection);
      s.finish();
    }
    std::string activation = "gelu";
    root.get("activation", activation);
    c.options.activation = parse_activation(activation);

    std::string inference = c.inference.to_string();
    root.get("inference", inference);
    try {
      c.inference = InferMode::parse(inference);
    } catch (const DomainError& e) {
      throw ConfigError(e.what());
    }

    if (const json* node = root.child("schedule")) {
      Section s(*node, root.prefix("schedule"));
      s.get("tau0", c.schedule.tau0);
      s.get("tau_min", c.schedule.tau_min);
      s.get("decay", c.schedule.decay);
      s.get("gumbel0", c.schedule.gumbel0);
      s.get("gumbel_decay", c.schedule.gumbel_decay);
      s.finish();
    }
    if (const json* node = root.child("train")) {
      Section s(*node, root.prefix("train"));
      s.get("lr", c.train.lr);
      s.get("batch", c.train.batch);
      s.get("steps", c.train.steps);
      s.finish();
    }
    if (const json* node = root.child("seeds")) {
      Section s(*node, root.prefix("seeds"));
      s.get("params", c.seeds.params);
      s.get("data", c.seeds.data);
      s.get("teacher", c.seeds.teacher);
      s.get("noise", c.seeds.noise);
      s.finish();
    }
    if (const json* node = root.child("cost")) {
      Section s(*node, root.prefix("cost"));
      s.get("query_len", c.query_len);
      s.get("text_encoder_macs_per_token", c.text_encoder_macs_per_token);
      s.finish();
    }
    root.finish();
  }

  validate_dims(c.dims);
  validate_schedule(c.schedule);
  if (!(c.options.lambda >= 0.0 && c.options.lambda <= 1.0)) {
    throw ConfigError("prune.lambda must lie in [0, 1]");
  }
  if (!(c.train.lr >= 0.0)) throw ConfigError("train.lr must be nonnegative");
  if (c.train.batch == 0) throw ConfigError("train.batch must be at least 1");
  return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  json doc;
  try {
    doc = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return parse_config(doc);
}

json to_json(const PipelineConfig& c) {
  return {
      {"dims",
       {{"grid_h", c.dims.grid_h},
        {"grid_w", c.dims.grid_w},
        {"c_vis", c.dims.c_vis},
        {"c_txt", c.dims.c_txt},
        {"d_llm", c.dims.d_llm},
        {"m_tokens", c.dims.m_tokens},
        {"pool_stride", c.dims.pool_stride},
        {"router_hidden", c.dims.resolved_router_hidden()}}},
      {"prune",
       {{"lambda", c.options.lambda},
        {"relevance",
         c.options.metric == RelevanceMetric::kCosine ? "cosine" : "neg_euclidean"}}},
      {"pool", {{"shared_projection", c.options.shared_pool_projection}}},
      {"activation", c.options.activation == Activation::kGelu ? "gelu" : "relu"},
      {"inference", c.inference.to_string()},
      {"schedule",
       {{"tau0", c.schedule.tau0},
        {"tau_min", c.schedule.tau_min},
        {"decay", c.schedule.decay},
        {"gumbel0", c.schedule.gumbel0},
        {"gumbel_decay", c.schedule.gumbel_decay}}},
      {"train", {{"lr", c.train.lr}, {"batch", c.train.batch}, {"steps", c.train.steps}}},
      {"seeds",
       {{"params", c.seeds.params},
        {"data", c.seeds.data},
        {"teacher", c.seeds.teacher},
        {"noise", c.seeds.noise}}},
      {"cost",
       {{"query_len", c.query_len},
        {"text_encoder_macs_per_token", c.text_encoder_macs_per_token}}},
  };
}

}  // namespace qmop::cli
