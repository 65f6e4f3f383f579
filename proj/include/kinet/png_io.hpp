#pragma once

#include <filesystem>

#include "kinet/image.hpp"

namespace kinet {

// Minimal PNG codec backed by zlib: 8-bit gray / RGB / RGBA (RGBA is read and
// collapsed to RGB), non-interlaced only. Writes gray or RGB with per-row
// filter 0, which keeps output bytes a pure function of the pixels.
Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& img);

}  // namespace kinet
