#pragma once

#include <filesystem>

#include "multimix/tensor.hpp"

namespace multimix {

struct GrayImage {
    Tensor pixels;  // rescaled to [0,1] by the source bit depth
    int bit_depth = 8;
};

// 8- or 16-bit grayscale PNG (or any format OpenCV decodes). Throws LoadError.
GrayImage read_gray(const std::filesystem::path& path);

// Quantizes [0,1] to 8 bits.
void write_gray8(const std::filesystem::path& path, const Tensor& image);
void write_gray16(const std::filesystem::path& path, const Tensor& image);
// Three single-channel planes (r, g, b) in [0,1].
void write_rgb8(const std::filesystem::path& path, const Tensor& rgb);

Tensor resize_bilinear(const Tensor& image, int height, int width);
Tensor resize_nearest(const Tensor& image, int height, int width);

}  // namespace multimix
