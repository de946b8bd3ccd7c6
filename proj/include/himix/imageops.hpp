#pragma once

#include <array>
#include <vector>

#include "himix/image.hpp"

namespace himix {

using Block8 = std::array<double, 64>;

/// Orthonormal 8x8 DCT-II (row-major, coefficient (u, v) at index u * 8 + v).
Block8 dct8x8(const Block8& block);
Block8 idct8x8(const Block8& coeffs);

/// Normalized Gaussian taps with radius ceil(3 sigma); sigma > 0.
std::vector<double> gaussian_kernel(double sigma);

/// Separable Gaussian blur with mirror (edge-excluded) padding. sigma = 0 is the identity.
Image gaussian_blur(const Image& img, double sigma);

/// Per channel, per 8x8 block: DCT, round every coefficient to a multiple of
/// `step`, inverse DCT. No clamping. H and W must be multiples of 8.
Image block_quantize(const Image& img, double step);

}  // namespace himix
