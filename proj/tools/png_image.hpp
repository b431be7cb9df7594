#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace midline::tools {

struct RgbImage {
  int rows = 0;
  int cols = 0;
  std::vector<uint8_t> data;  // rows*cols*3, row-major RGB

  RgbImage(int rows_, int cols_)
      : rows(rows_), cols(cols_), data(static_cast<size_t>(rows_) * cols_ * 3, 0) {}

  uint8_t* px(int y, int x) { return data.data() + (static_cast<size_t>(y) * cols + x) * 3; }

  void set(int y, int x, uint8_t r, uint8_t g, uint8_t b) {
    if (y < 0 || y >= rows || x < 0 || x >= cols) return;
    auto* p = px(y, x);
    p[0] = r;
    p[1] = g;
    p[2] = b;
  }

  void blend(int y, int x, uint8_t r, uint8_t g, uint8_t b, double alpha) {
    if (y < 0 || y >= rows || x < 0 || x >= cols) return;
    auto* p = px(y, x);
    p[0] = static_cast<uint8_t>(p[0] * (1 - alpha) + r * alpha);
    p[1] = static_cast<uint8_t>(p[1] * (1 - alpha) + g * alpha);
    p[2] = static_cast<uint8_t>(p[2] * (1 - alpha) + b * alpha);
  }
};

void write_png(const std::filesystem::path& path, const RgbImage& image);

}  // namespace midline::tools
