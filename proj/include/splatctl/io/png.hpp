#pragma once

#include "splatctl/image.hpp"

#include <filesystem>

namespace splatctl {

// Decodes to RGB in [0, 1] at 8-bit precision; alpha is composited over black.
// Throws ImageError.
Image read_png(const std::filesystem::path& path);

// Writes 8-bit RGB, values clamped to [0, 1] and rounded. Throws ImageError.
void write_png(const std::filesystem::path& path, const Image& image);

// Lossless 64-bit dump: "SPLIMG64", int32 width, int32 height, then
// little-endian doubles in HWC order.
void write_raw_image(const std::filesystem::path& path, const Image& image);
Image read_raw_image(const std::filesystem::path& path);

} // namespace splatctl
