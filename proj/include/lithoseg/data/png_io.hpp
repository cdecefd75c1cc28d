#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace lithoseg {

// Raw 8-bit raster; channels is 1 (gray) or 3 (RGB), data row-major
// interleaved.
struct RawImage {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<uint8_t> data;
};

struct PngError : std::runtime_error {
  explicit PngError(const std::string& msg) : std::runtime_error(msg) {}
};

// Decodes a PNG; palette/rgba/16-bit inputs are converted, leaving gray or
// RGB 8-bit output.
RawImage read_png(const std::string& path);

// Encodes 8-bit gray (channels=1) or RGB (channels=3).
void write_png(const std::string& path, const RawImage& img);

}  // namespace lithoseg
