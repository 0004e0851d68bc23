#pragma once

#include <filesystem>

#include "shisr/tensor.hpp"

namespace shisr {

/// Reads an 8-bit RGB PNG into a (1, 3, H, W) tensor with values v / 255.
/// Grayscale, alpha or 16-bit sources are rejected.
Tensor load_png(const std::filesystem::path& path);

/// Writes a (1, 3, H, W) tensor as 8-bit RGB, clamping to [0, 1] and
/// rounding to the nearest byte.
void save_png(const std::filesystem::path& path, const Tensor& image);

/// Catmull-Rom cubic kernel (a = -0.5).
double cubic_kernel(double x);

/// Separable bicubic resize with half-pixel centres and edge clamping.
/// When shrinking an axis the kernel is stretched by the scale factor
/// (antialiasing), which is how LR inputs are synthesized from HR patches.
Tensor bicubic_resample(const Tensor& image, int out_h, int out_w);

/// Spatial crop applied to every plane of a (n, c, H, W) tensor.
Tensor crop(const Tensor& image, int top, int left, int height, int width);

/// Image `index` of a batch as a (1, c, H, W) tensor (values copied).
Tensor batch_item(const Tensor& batch, int index);

}  // namespace shisr
