#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include <json.hpp>

#include "maskcl/encoder.hpp"
#include "maskcl/memory.hpp"

namespace maskcl {

inline constexpr const char* kCheckpointFormat = "maskcl-ckpt-v1";

struct Checkpoint {
  ModelParams<double> model;
  std::optional<BankTriplet<double>> banks;
  int epoch = 0;  // epochs completed
  std::uint64_t seed = 0;
};

// File layout: the format tag and a newline, an 8-byte little-endian header
// length, a JSON header (architecture, sizes, epoch, seed, bank shape), then
// the raw parameter and bank values as little-endian doubles.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace maskcl
