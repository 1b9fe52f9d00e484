#pragma once

#include <string>

#include "evrwkv/tensor.hpp"

namespace evr {

// Binary portable pixmaps, 8-bit only. Values map linearly to [0,1].
// Returns (3,H,W) for P6 and (1,H,W) for P5. Malformed headers raise
// std::runtime_error with the byte offset of the failure.
Tensor read_image(const std::string& path);

// Writes P6 for 3-channel input, P5 for 1-channel. Values are clamped to
// [0,1] and quantized to 8 bits. The file is written atomically
// (temp + rename).
void write_image(const std::string& path, const Tensor& image);

}  // namespace evr
