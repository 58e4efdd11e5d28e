#pragma once

#include <filesystem>

#include "handfit/tensor.hpp"

namespace handfit {

/// Reads an 8-bit (or lower) PNG into [H, W, C] doubles in [0, 1]. Gray
/// images yield C == 1, colour images C == 3; alpha is dropped.
Tensor read_png(const std::filesystem::path& path);

/// Writes [H, W, C] (C = 1 or 3) or [H, W] at 8 bits, values clamped to [0, 1].
void write_png(const std::filesystem::path& path, const Tensor& image);

/// Writes a binary [H, W] mask as a 1-bit grayscale PNG.
void write_png_1bit(const std::filesystem::path& path, const Tensor& mask);

/// 0.299 R + 0.587 G + 0.114 B, [H, W, 3] -> [H, W].
Tensor to_gray(const Tensor& rgb);

/// Bilinear resize with half-pixel centres, [H, W, C] or [H, W].
Tensor resize_bilinear(const Tensor& image, int height, int width);

/// Drops the trailing singleton channel of an [H, W, 1] tensor.
Tensor squeeze_channel(const Tensor& image);

}  // namespace handfit
