#include "himix/imageops.hpp"

#include <cmath>
#include <numbers>

namespace himix {
namespace {

const std::array<double, 64>& dct_basis() {
  static const std::array<double, 64> basis = [] {
    std::array<double, 64> m{};
    for (int u = 0; u < 8; ++u) {
      const double cu = u == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
      for (int x = 0; x < 8; ++x) {
        m[u * 8 + x] = cu * std::cos((2.0 * x + 1.0) * u * std::numbers::pi / 16.0);
      }
    }
    return m;
  }();
  return basis;
}

std::size_t mirror(std::ptrdiff_t i, std::size_t n) {
  if (n == 1) return 0;
  const auto last = static_cast<std::ptrdiff_t>(n - 1);
  while (i < 0 || i > last) {
    if (i < 0) i = -i;
    if (i > last) i = 2 * last - i;
  }
  return static_cast<std::size_t>(i);
}

}  // namespace

Block8 dct8x8(const Block8& block) {
  const auto& c = dct_basis();
  Block8 tmp{}, out{};
  for (int u = 0; u < 8; ++u) {
    for (int x = 0; x < 8; ++x) {
      double s = 0.0;
      for (int y = 0; y < 8; ++y) s += c[u * 8 + y] * block[y * 8 + x];
      tmp[u * 8 + x] = s;
    }
  }
  for (int u = 0; u < 8; ++u) {
    for (int v = 0; v < 8; ++v) {
      double s = 0.0;
      for (int x = 0; x < 8; ++x) s += tmp[u * 8 + x] * c[v * 8 + x];
      out[u * 8 + v] = s;
    }
  }
  return out;
}

Block8 idct8x8(const Block8& coeffs) {
  const auto& c = dct_basis();
  Block8 tmp{}, out{};
  for (int y = 0; y < 8; ++y) {
    for (int v = 0; v < 8; ++v) {
      double s = 0.0;
      for (int u = 0; u < 8; ++u) s += c[u * 8 + y] * coeffs[u * 8 + v];
      tmp[y * 8 + v] = s;
    }
  }
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      double s = 0.0;
      for (int v = 0; v < 8; ++v) s += tmp[y * 8 + v] * c[v * 8 + x];
      out[y * 8 + x] = s;
    }
  }
  return out;
}

std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) throw ConfigError("gaussian_kernel: sigma must be positive");
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> taps(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
    const double w = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    taps[static_cast<std::size_t>(i + radius)] = w;
    total += w;
  }
  for (double& w : taps) w /= total;
  return taps;
}

Image gaussian_blur(const Image& img, double sigma) {
  if (sigma < 0.0 || !std::isfinite(sigma)) throw ConfigError("blur: sigma must be finite and >= 0");
  if (sigma == 0.0) return img;
  const auto taps = gaussian_kernel(sigma);
  const auto radius = static_cast<std::ptrdiff_t>(taps.size() / 2);
  const std::size_t h = img.height, w = img.width;
  Image out(img.channels, h, w);
  std::vector<double> row(w * h);
  for (std::size_t c = 0; c < img.channels; ++c) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        double s = 0.0;
        for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
          s += taps[static_cast<std::size_t>(k + radius)] * img.at(c, y, mirror(static_cast<std::ptrdiff_t>(x) + k, w));
        }
        row[y * w + x] = s;
      }
    }
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        double s = 0.0;
        for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
          s += taps[static_cast<std::size_t>(k + radius)] * row[mirror(static_cast<std::ptrdiff_t>(y) + k, h) * w + x];
        }
        out.at(c, y, x) = static_cast<float>(s);
      }
    }
  }
  return out;
}

Image block_quantize(const Image& img, double step) {
  if (!(step > 0.0) || !std::isfinite(step)) throw ConfigError("block_quantize: step must be positive");
  if (img.height % 8 != 0 || img.width % 8 != 0) {
    throw ConfigError("block_quantize: image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                      " is not a multiple of 8");
  }
  Image out = img;
  for (std::size_t c = 0; c < img.channels; ++c) {
    for (std::size_t by = 0; by < img.height; by += 8) {
      for (std::size_t bx = 0; bx < img.width; bx += 8) {
        Block8 block{};
        for (std::size_t y = 0; y < 8; ++y) {
          for (std::size_t x = 0; x < 8; ++x) block[y * 8 + x] = img.at(c, by + y, bx + x);
        }
        Block8 coeffs = dct8x8(block);
        for (double& k : coeffs) k = std::round(k / step) * step;
        const Block8 back = idct8x8(coeffs);
        for (std::size_t y = 0; y < 8; ++y) {
          for (std::size_t x = 0; x < 8; ++x) out.at(c, by + y, bx + x) = static_cast<float>(back[y * 8 + x]);
        }
      }
    }
  }
  return out;
}

}  // namespace himix
