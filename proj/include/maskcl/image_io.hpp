#pragma once

#include <filesystem>

#include "maskcl/types.hpp"

namespace maskcl {

struct DecodedImage {
  int height = 0;
  int width = 0;
  ImagePlanes planes;  // (H*W) x channels, values k / 255
};

// 8-bit PNG, 1 (gray) or 3 (RGB) channels. Values are clamped to [0, 1] and
// rounded to the nearest 1/255.
void write_png(const std::filesystem::path& path, const ImagePlanes& planes, int height, int width);

// Decodes to the requested channel count (1 = gray, 3 = RGB).
DecodedImage read_png(const std::filesystem::path& path, int channels);

}  // namespace maskcl
