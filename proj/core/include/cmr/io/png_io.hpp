#pragma once

#include <cstdint>
#include <string>

#include "cmr/tensor.hpp"

namespace cmr::io {

// 8-bit RGB; tensors are [3,H,W] floats in [0,1] (values are quantized to
// 8 bits on write, so write/read round-trips exactly on n/255 grids).
void writePngRgb8(const std::string& path, const TensorF& image);
TensorF readPngRgb8(const std::string& path);

// 8-bit grayscale masks, [H,W] bytes.
void writePngGray8(const std::string& path, const Tensor<std::uint8_t>& mask);
Tensor<std::uint8_t> readPngGray8(const std::string& path);

// 16-bit grayscale maps in [0,1]: stored value = round(65535 * p).
void writePngGray16(const std::string& path, const TensorF& map);
TensorF readPngGray16(const std::string& path);

}  // namespace cmr::io
