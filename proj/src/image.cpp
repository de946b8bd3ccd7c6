#include "himix/image.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

namespace himix {
namespace {

constexpr std::string_view kMagic = "HXT1\n";

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

std::uint32_t get_u32(const std::string& bytes, std::size_t& pos) {
  if (pos + 4 > bytes.size()) throw TruncatedError("HXT1: header truncated");
  std::uint32_t v = 0;
  std::memcpy(&v, bytes.data() + pos, 4);
  pos += 4;
  return v;
}

}  // namespace

void Image::clamp01() {
  for (float& p : pixels) p = std::clamp(p, 0.0f, 1.0f);
}

bool operator==(const Image& a, const Image& b) { return a.same_shape(b) && a.pixels == b.pixels; }

void put_u32(std::string& out, std::uint32_t v) {
  char buf[4];
  std::memcpy(buf, &v, 4);
  out.append(buf, 4);
}

void put_f32(std::string& out, float v) {
  char buf[4];
  std::memcpy(buf, &v, 4);
  out.append(buf, 4);
}

std::string encode_hxt1(const Image& img) {
  std::string out;
  out.reserve(kMagic.size() + 16 + img.pixels.size() * 4);
  out.append(kMagic);
  put_u32(out, 3);
  put_u32(out, static_cast<std::uint32_t>(img.channels));
  put_u32(out, static_cast<std::uint32_t>(img.height));
  put_u32(out, static_cast<std::uint32_t>(img.width));
  const std::size_t start = out.size();
  out.resize(start + img.pixels.size() * 4);
  std::memcpy(out.data() + start, img.pixels.data(), img.pixels.size() * 4);
  return out;
}

Image decode_hxt1(const std::string& bytes) {
  if (bytes.size() < kMagic.size() || bytes.compare(0, kMagic.size(), kMagic) != 0) {
    throw BadMagicError("HXT1: bad magic");
  }
  std::size_t pos = kMagic.size();
  const std::uint32_t rank = get_u32(bytes, pos);
  if (rank != 3) throw ImageFormatError("HXT1: expected rank 3, got " + std::to_string(rank));
  const std::uint32_t c = get_u32(bytes, pos), h = get_u32(bytes, pos), w = get_u32(bytes, pos);
  const std::size_t count = std::size_t{c} * h * w;
  if (bytes.size() - pos < count * 4) throw TruncatedError("HXT1: pixel payload truncated");
  if (bytes.size() - pos > count * 4) throw ImageFormatError("HXT1: trailing bytes after payload");
  Image img(c, h, w);
  std::memcpy(img.pixels.data(), bytes.data() + pos, count * 4);
  for (float p : img.pixels) {
    if (!std::isfinite(p)) throw NonFiniteError("HXT1: non-finite pixel value");
  }
  return img;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return bytes;
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

void write_image(const std::filesystem::path& path, const Image& img) {
  for (float p : img.pixels) {
    if (!std::isfinite(p)) throw NonFiniteError("refusing to write non-finite pixel to " + path.string());
  }
  write_file(path, encode_hxt1(img));
}

Image read_image(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  try {
    return decode_hxt1(bytes);
  } catch (const BadMagicError& e) {
    throw BadMagicError(std::string(e.what()) + " in " + path.string());
  } catch (const TruncatedError& e) {
    throw TruncatedError(std::string(e.what()) + " in " + path.string());
  } catch (const NonFiniteError& e) {
    throw NonFiniteError(std::string(e.what()) + " in " + path.string());
  }
}

}  // namespace himix
