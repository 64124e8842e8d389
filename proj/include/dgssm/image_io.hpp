#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dgssm {

// 8-bit image, interleaved channels, row-major. channels is 1 (grayscale)
// or 3 (RGB) to match the two container formats in use.
struct ImageU8 {
  long width = 0;
  long height = 0;
  long channels = 0;
  std::vector<uint8_t> data;
};

// Binary PPM (P6, RGB) and PGM (P5, grayscale), maxval 255. Writers emit a
// fixed header layout so identical pixels give identical files.
void write_image(const std::string& path, const ImageU8& img);
ImageU8 read_image(const std::string& path);

}  // namespace dgssm
