// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>

#include "ldr/tensor.hpp"

namespace ldr {

/// Images are H×W×3 float tensors with values in [0, 1].
using Image = Tensor<float>;

/// Writes an 8-bit RGB (3 channels) or grayscale (1 channel) PNG. Values are
/// clamped to [0,1] and rounded to the nearest 8-bit level.
void write_png(const std::filesystem::path& path, const Tensor<float>& image);

/// Reads any PNG as 8-bit RGB, returning values k/255.
Image read_png(const std::filesystem::path& path);

/// Rounds to 8-bit levels, exactly what a PNG round trip produces.
Image quantize8(const Image& image);

}  // namespace ldr
