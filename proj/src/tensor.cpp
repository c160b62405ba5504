#include "advsource/tensor.hpp"

#include <sstream>

namespace advsource {

std::string Shape::str() const {
  std::ostringstream os;
  os << channels << "x" << height << "x" << width;
  return os.str();
}

ImageTensor ImageTensor::zeros(const Shape& s, std::string id, int true_class) {
  ImageTensor t;
  t.shape = s;
  t.pixels = Eigen::VectorXd::Zero(s.elements());
  t.image_id = std::move(id);
  t.true_class = true_class;
  return t;
}

void ImageTensor::validate() const {
  if (shape.channels <= 0 || shape.height <= 0 || shape.width <= 0) {
    throw ShapeError("ImageTensor '" + image_id + "': non-positive shape " + shape.str());
  }
  if (pixels.size() != shape.elements()) {
    throw ShapeError("ImageTensor '" + image_id + "': buffer size " +
                     std::to_string(pixels.size()) + " does not match shape " + shape.str());
  }
  for (Eigen::Index i = 0; i < pixels.size(); ++i) {
    const double v = pixels[i];
    if (!(v >= 0.0 && v <= 1.0)) {
      throw ArgumentError("ImageTensor '" + image_id + "': pixel " + std::to_string(i) +
                          " = " + std::to_string(v) + " outside [0,1]");
    }
  }
}

bool on_pixel_grid(double v, double tol) {
  const double scaled = v * 255.0;
  return std::abs(scaled - std::lround(scaled)) <= tol * 255.0;
}

bool on_pixel_grid(const ImageTensor& x, double tol) {
  for (Eigen::Index i = 0; i < x.pixels.size(); ++i) {
    if (!on_pixel_grid(x.pixels[i], tol)) return false;
  }
  return true;
}

void require_same_shape(const ImageTensor& a, const ImageTensor& b, const char* where) {
  if (!(a.shape == b.shape) || a.pixels.size() != b.pixels.size()) {
    throw ShapeError(std::string(where) + ": shape mismatch " + a.shape.str() + " vs " +
                     b.shape.str());
  }
}

}  // namespace advsource
