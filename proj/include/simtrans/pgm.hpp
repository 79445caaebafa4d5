#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace simtrans::pgm {

/// 8-bit grayscale raster, row-major.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;
};

/// Binary P5 with maxval 255. Throws IoError.
void write(const std::filesystem::path& path, const Image& image);
Image read(const std::filesystem::path& path);

}  // namespace simtrans::pgm
