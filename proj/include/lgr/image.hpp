#pragma once

#include <cstdint>
#include <string>

#include "lgr/tensor.hpp"

namespace lgr {

// Images are tensors [H x W x channels] with values in [0, 1]; channels is 1 or 3.

/// Writes 8-bit PNG, or binary PGM/PPM when the path ends in .pgm/.ppm.
/// Values are clamped to [0, 1] and stored as round(255 v). Throws IoError.
void write_image(const std::string& path, const Tensor& image);

/// Reads 8-bit PNG (gray, RGB or RGBA) or binary PGM/PPM as [H x W x 3].
Tensor read_image(const std::string& path);

std::uint8_t to_byte(double v);

}  // namespace lgr
