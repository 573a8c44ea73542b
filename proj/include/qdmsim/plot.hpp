#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "qdmsim/cluster.hpp"
#include "qdmsim/errors.hpp"
#include "qdmsim/image.hpp"
#include "qdmsim/latent.hpp"

namespace qdmsim {

inline void write_pgm(const std::string& path, const std::vector<std::uint8_t>& px,
                      int width, int height) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("cannot open '" + path + "' for writing");
  os << "P5\n" << width << " " << height << "\n255\n";
  os.write(reinterpret_cast<const char*>(px.data()),
           static_cast<std::streamsize>(px.size()));
}

inline void write_ppm(const std::string& path, const std::vector<std::uint8_t>& rgb,
                      int width, int height) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("cannot open '" + path + "' for writing");
  os << "P6\n" << width << " " << height << "\n255\n";
  os.write(reinterpret_cast<const char*>(rgb.data()),
           static_cast<std::streamsize>(rgb.size()));
}

/// One channel of a field image on a symmetric blue-white-red scale around
/// zero; scale_max <= 0 autoscales to the max |value|.
inline void write_field_ppm(const std::string& path, const VectorFieldImage& img,
                            int channel, double scale_max = 0.0) {
  double peak = scale_max;
  if (peak <= 0) {
    for (int i = 0; i < img.height; ++i)
      for (int j = 0; j < img.width; ++j)
        peak = std::max(peak, std::abs(img.at(i, j, channel)));
    if (peak == 0) peak = 1.0;
  }
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(img.height) *
                                img.width * 3);
  std::size_t p = 0;
  for (int i = 0; i < img.height; ++i)
    for (int j = 0; j < img.width; ++j) {
      const double t = std::clamp(img.at(i, j, channel) / peak, -1.0, 1.0);
      // -1 -> blue, 0 -> white, +1 -> red
      const double r = t >= 0 ? 1.0 : 1.0 + t;
      const double g = 1.0 - std::abs(t);
      const double b = t <= 0 ? 1.0 : 1.0 - t;
      rgb[p++] = static_cast<std::uint8_t>(std::lround(255 * r));
      rgb[p++] = static_cast<std::uint8_t>(std::lround(255 * g));
      rgb[p++] = static_cast<std::uint8_t>(std::lround(255 * b));
    }
  write_ppm(path, rgb, img.width, img.height);
}

/// Latent scatter on the first two coordinates, one gray level per cluster,
/// noise black, background white.
inline void write_cluster_map(const std::string& path,
                              const std::vector<LatentPoint>& points,
                              const ClusterLabeling& labeling, int size = 512) {
  std::vector<std::uint8_t> px(static_cast<std::size_t>(size) * size, 255);
  if (!points.empty() && !points[0].coords.empty()) {
    double min_x = points[0].coords[0], max_x = min_x;
    double min_y = points[0].coords.size() > 1 ? points[0].coords[1] : 0.0;
    double max_y = min_y;
    for (const auto& pt : points) {
      min_x = std::min(min_x, pt.coords[0]);
      max_x = std::max(max_x, pt.coords[0]);
      const double y = pt.coords.size() > 1 ? pt.coords[1] : 0.0;
      min_y = std::min(min_y, y);
      max_y = std::max(max_y, y);
    }
    const double sx = max_x > min_x ? (size - 17.0) / (max_x - min_x) : 0.0;
    const double sy = max_y > min_y ? (size - 17.0) / (max_y - min_y) : 0.0;
    for (std::size_t k = 0; k < points.size(); ++k) {
      const double y = points[k].coords.size() > 1 ? points[k].coords[1] : 0.0;
      const int cx = 8 + static_cast<int>((points[k].coords[0] - min_x) * sx);
      const int cy = 8 + static_cast<int>((y - min_y) * sy);
      const int label = labeling.labels[k];
      const std::uint8_t level =
          label == kNoise
              ? 0
              : static_cast<std::uint8_t>(
                    60 + (150 * label) / std::max(1, labeling.cluster_count));
      for (int di = -3; di <= 3; ++di)
        for (int dj = -3; dj <= 3; ++dj) {
          const int i = std::clamp(cy + di, 0, size - 1);
          const int j = std::clamp(cx + dj, 0, size - 1);
          px[static_cast<std::size_t>(i) * size + j] = level;
        }
    }
  }
  write_pgm(path, px, size, size);
}

/// Minimal polyline trend plot (x ascending) on a white background.
inline void write_line_plot(const std::string& path,
                            const std::vector<double>& xs,
                            const std::vector<std::vector<double>>& series,
                            int size = 512) {
  std::vector<std::uint8_t> px(static_cast<std::size_t>(size) * size, 255);
  if (!xs.empty()) {
    double min_x = xs.front(), max_x = xs.front();
    for (double x : xs) {
      min_x = std::min(min_x, x);
      max_x = std::max(max_x, x);
    }
    double min_y = 0.0, max_y = 1.0;
    for (const auto& s : series)
      for (double y : s) {
        min_y = std::min(min_y, y);
        max_y = std::max(max_y, y);
      }
    auto to_px = [&](double x, double y) {
      const int margin = 24;
      const double fx = max_x > min_x ? (x - min_x) / (max_x - min_x) : 0.5;
      const double fy = max_y > min_y ? (y - min_y) / (max_y - min_y) : 0.5;
      return std::pair<int, int>(
          margin + static_cast<int>(fx * (size - 2 * margin)),
          size - margin - static_cast<int>(fy * (size - 2 * margin)));
    };
    auto draw = [&](int x0, int y0, int x1, int y1, std::uint8_t level) {
      const int steps = std::max(std::abs(x1 - x0), std::abs(y1 - y0)) + 1;
      for (int s = 0; s <= steps; ++s) {
        const int x = x0 + (x1 - x0) * s / steps;
        const int y = y0 + (y1 - y0) * s / steps;
        if (x >= 0 && x < size && y >= 0 && y < size)
          px[static_cast<std::size_t>(y) * size + x] = level;
      }
    };
    for (std::size_t s = 0; s < series.size(); ++s) {
      const std::uint8_t level = static_cast<std::uint8_t>(40 + 80 * s);
      for (std::size_t i = 0; i + 1 < xs.size() && i + 1 < series[s].size(); ++i) {
        const auto [x0, y0] = to_px(xs[i], series[s][i]);
        const auto [x1, y1] = to_px(xs[i + 1], series[s][i + 1]);
        draw(x0, y0, x1, y1, level);
      }
    }
  }
  write_pgm(path, px, size, size);
}

}  // namespace qdmsim
