#pragma once

#include <cstddef>
#include <vector>

#include "qdmsim/errors.hpp"

namespace qdmsim {

/// H x W x C field image, row-major, channel-fastest. Channels are (Bx, By,
/// Bz) in µT for rendered data; preprocessing stages reuse the container for
/// derived images.
struct VectorFieldImage {
  int height = 0;
  int width = 0;
  int channels = 3;
  std::vector<double> data;

  VectorFieldImage() = default;
  VectorFieldImage(int h, int w, int c = 3)
      : height(h), width(w), channels(c),
        data(static_cast<std::size_t>(h) * w * c, 0.0) {}

  double& at(int i, int j, int c) {
    return data[(static_cast<std::size_t>(i) * width + j) * channels + c];
  }
  double at(int i, int j, int c) const {
    return data[(static_cast<std::size_t>(i) * width + j) * channels + c];
  }
  std::size_t size() const { return data.size(); }
  bool same_shape(const VectorFieldImage& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
};

inline VectorFieldImage operator+(const VectorFieldImage& a,
                                  const VectorFieldImage& b) {
  if (!a.same_shape(b)) throw shape_error("image shapes differ in +");
  VectorFieldImage out = a;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
  return out;
}

inline VectorFieldImage operator-(const VectorFieldImage& a,
                                  const VectorFieldImage& b) {
  if (!a.same_shape(b)) throw shape_error("image shapes differ in -");
  VectorFieldImage out = a;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b.data[i];
  return out;
}

inline VectorFieldImage operator*(double s, const VectorFieldImage& a) {
  VectorFieldImage out = a;
  for (double& v : out.data) v *= s;
  return out;
}

}  // namespace qdmsim
