#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "maskcl/types.hpp"

namespace maskcl {

enum class Split { train, query, gallery };

std::string to_string(Split split);
Split split_from_string(const std::string& name);

// Camera id used for data that carries no camera labels.
inline constexpr int kUnknownCamera = -1;

struct Sample {
  int sample_id = 0;        // contiguous 0..n-1 within its split
  int height = 0;
  int width = 0;
  ImagePlanes image;        // (H*W) x 3, values in [0, 1]
  ImagePlanes mask;         // (H*W) x 1, values in [0, 1]
  int person_id = 0;
  int clothes_id = 0;
  int camera_id = 0;
  Split split = Split::train;
  std::string image_path;   // relative to the dataset root
  std::string mask_path;

  bool operator==(const Sample&) const = default;
};

struct SyntheticConfig {
  int n_persons = 10;        // training identities
  int n_eval_persons = 10;   // identities rendered into query/gallery
  bool closed_set = false;   // eval identities reuse the first training identities
  int outfits_per_person = 3;
  int images_per_outfit = 4;
  int n_cameras = 2;
  int height = 32;
  int width = 16;
  double shape_noise = 0.03;
  double color_noise = 0.03;
  double camera_tint_strength = 0.1;
  std::uint64_t seed = 0;

  bool operator==(const SyntheticConfig&) const = default;
};

void validate(const SyntheticConfig& config);

struct DatasetManifest {
  std::vector<Sample> samples;
  std::optional<SyntheticConfig> generator_config;
  std::uint64_t seed = 0;

  // Samples of one split in sample_id order.
  std::vector<const Sample*> split(Split which) const;

  bool operator==(const DatasetManifest&) const = default;
};

// Renders silhouettes whose geometry is a per-person latent shape and whose
// colours come from a per-outfit latent appearance, with camera tint and
// pixel noise. Pixel values are quantised to multiples of 1/255 so that a
// save/load round trip is exact.
DatasetManifest generate_synthetic(const SyntheticConfig& config);

// Layout: manifest.json, images/<split>_<id>.png (RGB), masks/<split>_<id>.png
// (gray). The manifest is written last, via a temporary file and rename.
void save_dataset(const DatasetManifest& manifest, const std::filesystem::path& root);

DatasetManifest load_dataset(const std::filesystem::path& root);

// Checks every Sample/Manifest invariant; throws InvariantError naming the sample.
void validate(const DatasetManifest& manifest);

// SHA-256 over manifest.json followed by every image and mask file in manifest order.
std::string dataset_hash(const std::filesystem::path& root);

nlohmann::json to_json(const SyntheticConfig& config);
SyntheticConfig synthetic_config_from_json(const nlohmann::json& j);

}  // namespace maskcl
