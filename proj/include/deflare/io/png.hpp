#pragma once

// 8-bit PNG <-> [C, H, W] images with values mapped linearly to [0, 1].

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "deflare/core/error.hpp"
#include "deflare/core/tensor.hpp"

namespace deflare::io {

// Reads any PNG as RGB (channels = 3) or grayscale (channels = 1).
inline Tensor<double> read_png(const std::filesystem::path& path, std::size_t channels = 3) {
  if (channels != 1 && channels != 3) throw ConfigError("read_png: channels must be 1 or 3");
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str())) {
    throw IoError("cannot read PNG '" + path.string() + "': " + img.message);
  }
  img.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&img);
    throw IoError("cannot decode PNG '" + path.string() + "': " + img.message);
  }
  const std::size_t H = img.height, W = img.width;
  Tensor<double> out(Shape{channels, H, W});
  for (std::size_t i = 0; i < H * W; ++i)
    for (std::size_t c = 0; c < channels; ++c) out[c * H * W + i] = buf[i * channels + c] / 255.0;
  return out;
}

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

// Writes a [1,H,W] or [3,H,W] image; values are clipped to [0,1].
inline void write_png(const std::filesystem::path& path, const Tensor<double>& x) {
  if (x.rank() != 3 || (x.dim(0) != 1 && x.dim(0) != 3)) {
    throw DimensionError("write_png: expected [1|3,H,W], got " + shape_str(x.shape()));
  }
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  std::vector<png_byte> buf(C * H * W);
  for (std::size_t i = 0; i < H * W; ++i)
    for (std::size_t c = 0; c < C; ++c) buf[i * C + c] = to_byte(x[c * H * W + i]);
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(W);
  img.height = static_cast<png_uint_32>(H);
  img.format = C == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, buf.data(), 0, nullptr)) {
    throw IoError("cannot write PNG '" + path.string() + "': " + img.message);
  }
}

// Rounds through the 8-bit encoding, as a write/read cycle would.
inline Tensor<double> quantize8(Tensor<double> x) {
  for (double& v : x.data()) v = to_byte(v) / 255.0;
  return x;
}

}  // namespace deflare::io
