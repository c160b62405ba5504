#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <string>

#include "advsource/error.hpp"

namespace advsource {

struct Shape {
  int channels = 0;
  int height = 0;
  int width = 0;

  std::int64_t elements() const {
    return static_cast<std::int64_t>(channels) * height * width;
  }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

// A floating image in [0,1], stored flat in channel-major (C,H,W) order,
// together with its dataset identity.
struct ImageTensor {
  Shape shape;
  Eigen::VectorXd pixels;
  std::string image_id;
  int true_class = -1;

  static ImageTensor zeros(const Shape& s, std::string id = {}, int true_class = -1);

  // Throws ShapeError / ArgumentError if the pixel buffer does not match the
  // shape or any value falls outside [0,1].
  void validate() const;
};

// 8-bit grid helpers. A pixel is "on the grid" when it equals k/255 for an
// integer k in [0,255].
inline double grid_value(int k) { return static_cast<double>(k) / 255.0; }

inline int nearest_grid_index(double v) {
  return static_cast<int>(std::lround(v * 255.0));
}

// True when v is within tol of some k/255.
bool on_pixel_grid(double v, double tol = 1e-9);
bool on_pixel_grid(const ImageTensor& x, double tol = 1e-9);

void require_same_shape(const ImageTensor& a, const ImageTensor& b, const char* where);

}  // namespace advsource
