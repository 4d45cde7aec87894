#include "maskcl/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "maskcl/error.hpp"

namespace maskcl {

void write_png(const std::filesystem::path& path, const ImagePlanes& planes, int height, int width) {
  const auto channels = static_cast<int>(planes.cols());
  if (channels != 1 && channels != 3) throw ShapeError("write_png: need 1 or 3 channels");
  if (planes.rows() != static_cast<Eigen::Index>(height) * width) throw ShapeError("write_png: pixel count mismatch");
  std::vector<png_byte> buffer(static_cast<std::size_t>(height) * width * channels);
  for (Eigen::Index p = 0; p < planes.rows(); ++p)
    for (int c = 0; c < channels; ++c)
      buffer[static_cast<std::size_t>(p) * channels + c] =
          static_cast<png_byte>(std::lround(std::clamp(planes(p, c), 0.0, 1.0) * 255.0));

  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.c_str(), 0, buffer.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw IoError("cannot write " + path.string() + ": " + msg);
  }
}

DecodedImage read_png(const std::filesystem::path& path, int channels) {
  if (channels != 1 && channels != 3) throw ShapeError("read_png: need 1 or 3 channels");
  if (!std::filesystem::exists(path)) throw IoError("missing file " + path.string());
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw IoError("cannot decode " + path.string() + ": " + image.message);
  image.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw IoError("cannot decode " + path.string() + ": " + msg);
  }
  DecodedImage out;
  out.height = static_cast<int>(image.height);
  out.width = static_cast<int>(image.width);
  out.planes.resize(static_cast<Eigen::Index>(out.height) * out.width, channels);
  for (Eigen::Index p = 0; p < out.planes.rows(); ++p)
    for (int c = 0; c < channels; ++c)
      out.planes(p, c) = buffer[static_cast<std::size_t>(p) * channels + c] / 255.0;
  return out;
}

}  // namespace maskcl
