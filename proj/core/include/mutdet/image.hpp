#pragma once

#include <array>
#include <string>

#include "mutdet/tape.hpp"

namespace mutdet {

/// RGB image with channel values in [0, 1].
struct Image {
  int h = 0;
  int w = 0;
  std::array<nn::Mat, 3> chan;

  static Image filled(int h, int w, const std::array<double, 3>& rgb);
};

/// Binary PPM (P6, 8-bit). Values are quantized with round(v * 255).
void write_ppm(const std::string& path, const Image& img);

/// Throws DataError on missing files or malformed headers.
Image read_ppm(const std::string& path);

}  // namespace mutdet
