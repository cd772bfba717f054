#include "mutdet/image.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <vector>

#include "mutdet/errors.hpp"

namespace mutdet {

Image Image::filled(int h, int w, const std::array<double, 3>& rgb) {
  Image img;
  img.h = h;
  img.w = w;
  for (int c = 0; c < 3; ++c) img.chan[std::size_t(c)] = nn::Mat::Constant(h, w, rgb[std::size_t(c)]);
  return img;
}

void write_ppm(const std::string& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << "P6\n" << img.w << " " << img.h << "\n255\n";
  std::vector<std::uint8_t> buf(std::size_t(img.w) * 3);
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x)
      for (int c = 0; c < 3; ++c) {
        double v = img.chan[std::size_t(c)](y, x);
        v = std::min(1.0, std::max(0.0, v));
        buf[std::size_t(x) * 3 + std::size_t(c)] = std::uint8_t(std::lround(v * 255.0));
      }
    out.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
  }
  if (!out) throw DataError("short write: " + path);
}

Image read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path);
  std::string magic;
  in >> magic;
  if (magic != "P6") throw DataError("not a P6 PPM: " + path);
  int w = 0, h = 0, maxval = 0;
  in >> w >> h >> maxval;
  if (!in || w <= 0 || h <= 0 || maxval != 255)
    throw DataError("bad PPM header: " + path);
  in.get();  // single whitespace after header
  Image img;
  img.h = h;
  img.w = w;
  for (int c = 0; c < 3; ++c) img.chan[std::size_t(c)].resize(h, w);
  std::vector<std::uint8_t> buf(std::size_t(w) * 3);
  for (int y = 0; y < h; ++y) {
    in.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()));
    if (!in) throw DataError("truncated PPM pixel data: " + path);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.chan[std::size_t(c)](y, x) = double(buf[std::size_t(x) * 3 + std::size_t(c)]) / 255.0;
  }
  return img;
}

}  // namespace mutdet
