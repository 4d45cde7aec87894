#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "maskcl/data.hpp"
#include "maskcl/eval.hpp"
#include "maskcl/trainer.hpp"

namespace maskcl {

struct EvalOptions {
  Protocol protocol = Protocol::clothes_change;
  int max_rank = kDefaultMaxRank;

  bool operator==(const EvalOptions&) const = default;
};

// Sections "data", "train" and "eval"; every field optional, unknown keys rejected.
struct RunConfig {
  SyntheticConfig data;
  TrainConfig train;
  EvalOptions eval;

  bool operator==(const RunConfig&) const = default;
};

RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
// Fully resolved document, defaults filled in.
nlohmann::json to_json(const RunConfig& config);
nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);

// SHA-256 of the resolved training-relevant config with train.seed left out;
// run directories are named "<first 12 hex digits>-seed<seed>".
std::string config_hash(const RunConfig& config);
std::string run_dir_name(const RunConfig& config);

}  // namespace maskcl
