#pragma once

// Dense grayscale image grid with bilinear sampling, central-difference
// gradients, and the Shi-Tomasi corner response used for point spawning.

#include <Eigen/Core>

#include <algorithm>
#include <stdexcept>
#include <utility>

#include "vlio/geom.hpp"

namespace vlio {

struct OutOfBounds : std::runtime_error {
  OutOfBounds() : std::runtime_error("sample outside image support") {}
};

class Image {
 public:
  Image() = default;
  Image(int width, int height, double fill = 0.0)
      : width_(width), height_(height),
        data_(Eigen::ArrayXXd::Constant(height, width, fill)) {}

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return width_ == 0 || height_ == 0; }

  double& at(int x, int y) { return data_(y, x); }
  double at(int x, int y) const { return data_(y, x); }

  bool contains(double x, double y, double margin = 0.0) const {
    return x >= margin && x <= width_ - 1 - margin && y >= margin &&
           y <= height_ - 1 - margin;
  }

  double bilinear(double x, double y) const {
    if (!contains(x, y)) throw OutOfBounds();
    const int x0 = std::min(static_cast<int>(x), width_ - 2);
    const int y0 = std::min(static_cast<int>(y), height_ - 2);
    const double ax = x - x0, ay = y - y0;
    return (1 - ax) * (1 - ay) * data_(y0, x0) + ax * (1 - ay) * data_(y0, x0 + 1) +
           (1 - ax) * ay * data_(y0 + 1, x0) + ax * ay * data_(y0 + 1, x0 + 1);
  }

  // Gradient of the bilinear surface at a (sub-pixel) location.
  Vec2 gradient(double x, double y) const {
    const double h = 0.5;
    if (!contains(x, y, 1.0)) throw OutOfBounds();
    return {(bilinear(x + h, y) - bilinear(x - h, y)) / (2 * h),
            (bilinear(x, y + h) - bilinear(x, y - h)) / (2 * h)};
  }

  // Smaller eigenvalue of the gradient structure tensor accumulated over a
  // 3x3 window of central differences around (x, y). Zero near the border.
  double shi_tomasi(int x, int y) const {
    if (x < 2 || y < 2 || x > width_ - 3 || y > height_ - 3) return 0.0;
    double sxx = 0, syy = 0, sxy = 0;
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const double gx =
            0.5 * (data_(y + dy, x + dx + 1) - data_(y + dy, x + dx - 1));
        const double gy =
            0.5 * (data_(y + dy + 1, x + dx) - data_(y + dy - 1, x + dx));
        sxx += gx * gx;
        syy += gy * gy;
        sxy += gx * gy;
      }
    }
    const double tr = sxx + syy;
    const double det = sxx * syy - sxy * sxy;
    const double disc = std::max(0.0, tr * tr / 4 - det);
    return tr / 2 - std::sqrt(disc);
  }

  Eigen::ArrayXXd& array() { return data_; }
  const Eigen::ArrayXXd& array() const { return data_; }

 private:
  int width_ = 0;
  int height_ = 0;
  Eigen::ArrayXXd data_;  // (row, col) = (y, x)
};

}  // namespace vlio
