#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace midline {

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Row-major 2D grid indexed as (y, x) with y in [0, rows) and x in [0, cols).
template <typename T>
struct Grid {
  int rows = 0;
  int cols = 0;
  std::vector<T> data;

  Grid() = default;
  Grid(int rows_, int cols_, T fill = T{})
      : rows(rows_), cols(cols_), data(static_cast<size_t>(rows_) * cols_, fill) {
    if (rows_ < 0 || cols_ < 0) throw Error("Grid: negative dimensions");
  }

  T& operator()(int y, int x) { return data[static_cast<size_t>(y) * cols + x]; }
  const T& operator()(int y, int x) const { return data[static_cast<size_t>(y) * cols + x]; }

  T* row(int y) { return data.data() + static_cast<size_t>(y) * cols; }
  const T* row(int y) const { return data.data() + static_cast<size_t>(y) * cols; }

  size_t size() const { return data.size(); }
  bool same_shape(const Grid& other) const { return rows == other.rows && cols == other.cols; }

  friend bool operator==(const Grid& a, const Grid& b) {
    return a.rows == b.rows && a.cols == b.cols && a.data == b.data;
  }
};

using ImageF = Grid<float>;
using MaskU8 = Grid<uint8_t>;

/// Inclusive row range [y_lo, y_hi]; empty when y_hi < y_lo.
struct Interval {
  int y_lo = 0;
  int y_hi = -1;

  static Interval empty() { return {0, -1}; }
  static Interval of(int lo, int hi) { return {lo, hi}; }

  bool is_empty() const { return y_hi < y_lo; }
  int length() const { return is_empty() ? 0 : y_hi - y_lo + 1; }
  bool contains(int y) const { return !is_empty() && y >= y_lo && y <= y_hi; }

  friend bool operator==(const Interval& a, const Interval& b) {
    if (a.is_empty() && b.is_empty()) return true;
    return a.y_lo == b.y_lo && a.y_hi == b.y_hi;
  }
};

}  // namespace midline
