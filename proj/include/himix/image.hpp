#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "himix/error.hpp"

namespace himix {

/// Planar (C, H, W) float image with values nominally in [0, 1].
struct Image {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(std::size_t c, std::size_t h, std::size_t w, float fill = 0.0f)
      : channels(c), height(h), width(w), pixels(c * h * w, fill) {}

  float& at(std::size_t c, std::size_t y, std::size_t x) { return pixels[(c * height + y) * width + x]; }
  float at(std::size_t c, std::size_t y, std::size_t x) const { return pixels[(c * height + y) * width + x]; }

  bool same_shape(const Image& o) const { return channels == o.channels && height == o.height && width == o.width; }
  void clamp01();
};

bool operator==(const Image& a, const Image& b);

class ImageFormatError : public Error {
 public:
  using Error::Error;
};
class BadMagicError : public ImageFormatError {
 public:
  using ImageFormatError::ImageFormatError;
};
class TruncatedError : public ImageFormatError {
 public:
  using ImageFormatError::ImageFormatError;
};
class NonFiniteError : public ImageFormatError {
 public:
  using ImageFormatError::ImageFormatError;
};

/// HXT1: "HXT1\n", u32 LE rank, u32 LE dims, f32 LE values in (C, H, W) order.
std::string encode_hxt1(const Image& img);
Image decode_hxt1(const std::string& bytes);

void write_image(const std::filesystem::path& path, const Image& img);
Image read_image(const std::filesystem::path& path);

/// Byte-level helpers shared by the binary formats.
void put_u32(std::string& out, std::uint32_t v);
void put_f32(std::string& out, float v);
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace himix
