#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cfnsg {

// Linear-space RGB image, values nominally in [0,1], row-major from the top.
struct Image {
  int width = 0, height = 0;
  std::vector<double> data;  // 3 * width * height

  Image() = default;
  Image(int w, int h) : width(w), height(h), data(3ull * w * h, 0.0) {}

  double* px(int x, int y) { return data.data() + 3ull * (y * width + x); }
  const double* px(int x, int y) const {
    return data.data() + 3ull * (y * width + x);
  }
};

// Binary PPM (P6, 8-bit). Bytes are round(clamp(v,0,1) * 255); no gamma.
inline void write_ppm(const Image& img, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<uint8_t> row(3ull * img.width);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const double* p = img.px(x, y);
      for (int c = 0; c < 3; ++c) {
        const double v = p[c] < 0.0 ? 0.0 : (p[c] > 1.0 ? 1.0 : p[c]);
        row[3ull * x + c] = static_cast<uint8_t>(std::lround(v * 255.0));
      }
    }
    f.write(reinterpret_cast<const char*>(row.data()), row.size());
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

}  // namespace cfnsg
