#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <vector>

#include "qdmsim/dataset.hpp"
#include "qdmsim/errors.hpp"
#include "qdmsim/image.hpp"

namespace qdmsim {

struct CropSpec {
  double height_fraction = 0.58;  // kept from the bottom of the image
  double width_fraction = 1.0;    // kept from the left
};

struct PreprocessConfig {
  int averaging_k = 2;
  double highpass_sigma = 1.6;  // pixels; 0 disables
  std::optional<CropSpec> crop = CropSpec{};
  bool normalize = true;
};

/// A corrected test image plus its acquisition provenance (never the chip).
struct CorrectedImage {
  VectorFieldImage image;
  std::uint32_t config_ordinal = 0;
  std::uint32_t first_frame_index = 0;
};

/// Subtracts from every Test frame the nearest-in-acquisition-order Base
/// frame of the same configuration (ties toward the earlier base frame).
inline std::vector<CorrectedImage> subtract_base(const std::vector<Frame>& frames) {
  std::map<std::uint32_t, std::vector<const Frame*>> tests, bases;
  for (const Frame& f : frames)
    (f.role == FrameRole::Test ? tests : bases)[f.config_ordinal].push_back(&f);
  std::vector<CorrectedImage> out;
  for (auto& [cfg, test_list] : tests) {
    auto base_it = bases.find(cfg);
    if (base_it == bases.end() || base_it->second.empty())
      throw protocol_error("configuration " + std::to_string(cfg) +
                           " has no base frames");
    std::sort(test_list.begin(), test_list.end(),
              [](const Frame* a, const Frame* b) { return a->index < b->index; });
    auto& base_list = base_it->second;
    std::sort(base_list.begin(), base_list.end(),
              [](const Frame* a, const Frame* b) { return a->index < b->index; });
    for (const Frame* t : test_list) {
      const Frame* best = base_list.front();
      long best_d = std::labs(static_cast<long>(t->index) -
                              static_cast<long>(best->index));
      for (const Frame* b : base_list) {
        const long d = std::labs(static_cast<long>(t->index) -
                                 static_cast<long>(b->index));
        if (d < best_d) {  // strict: ties keep the earlier base
          best_d = d;
          best = b;
        }
      }
      out.push_back(CorrectedImage{t->image - best->image, cfg, t->index});
    }
  }
  return out;
}

/// Elementwise mean of consecutive non-overlapping groups of k.
inline std::vector<VectorFieldImage> average_pairs(
    const std::vector<VectorFieldImage>& images, int k) {
  if (k < 1) throw parameter_error("averaging_k must be >= 1");
  if (images.size() % static_cast<std::size_t>(k) != 0)
    throw shape_error("image count " + std::to_string(images.size()) +
                      " not divisible by k=" + std::to_string(k));
  std::vector<VectorFieldImage> out;
  for (std::size_t g = 0; g < images.size(); g += k) {
    VectorFieldImage acc = images[g];
    for (int j = 1; j < k; ++j) {
      if (!acc.same_shape(images[g + j])) throw shape_error("mixed shapes");
      for (std::size_t i = 0; i < acc.data.size(); ++i)
        acc.data[i] += images[g + j].data[i];
    }
    for (double& v : acc.data) v /= k;
    out.push_back(std::move(acc));
  }
  return out;
}

namespace detail {

inline std::vector<double> gaussian_kernel(double sigma) {
  const int half = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * half + 1);
  double sum = 0;
  for (int i = -half; i <= half; ++i) {
    k[i + half] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[i + half];
  }
  for (double& v : k) v /= sum;
  return k;
}

/// Separable blur with edge replication.
inline VectorFieldImage gaussian_blur(const VectorFieldImage& img, double sigma) {
  const auto kernel = gaussian_kernel(sigma);
  const int half = static_cast<int>(kernel.size() / 2);
  VectorFieldImage tmp(img.height, img.width, img.channels);
  for (int i = 0; i < img.height; ++i)
    for (int j = 0; j < img.width; ++j)
      for (int c = 0; c < img.channels; ++c) {
        double acc = 0;
        for (int t = -half; t <= half; ++t) {
          const int jj = std::clamp(j + t, 0, img.width - 1);
          acc += kernel[t + half] * img.at(i, jj, c);
        }
        tmp.at(i, j, c) = acc;
      }
  VectorFieldImage out(img.height, img.width, img.channels);
  for (int i = 0; i < img.height; ++i)
    for (int j = 0; j < img.width; ++j)
      for (int c = 0; c < img.channels; ++c) {
        double acc = 0;
        for (int t = -half; t <= half; ++t) {
          const int ii = std::clamp(i + t, 0, img.height - 1);
          acc += kernel[t + half] * tmp.at(ii, j, c);
        }
        out.at(i, j, c) = acc;
      }
  return out;
}

}  // namespace detail

/// Spatial high pass: image minus its Gaussian blur (truncated at 3 sigma,
/// replicated edges).
inline VectorFieldImage highpass(const VectorFieldImage& image, double sigma) {
  if (sigma <= 0) throw parameter_error("highpass sigma must be positive");
  return image - detail::gaussian_blur(image, sigma);
}

/// Bottom/left-anchored fractional crop; output extent = round(fraction *
/// extent), so 58% of 600 rows is 348 and 58% of 96 rows is 56.
inline VectorFieldImage crop_fov(const VectorFieldImage& image,
                                 const CropSpec& crop) {
  if (crop.height_fraction <= 0 || crop.height_fraction > 1 ||
      crop.width_fraction <= 0 || crop.width_fraction > 1)
    throw parameter_error("crop fractions must be in (0, 1]");
  const int h = static_cast<int>(std::lround(crop.height_fraction * image.height));
  const int w = static_cast<int>(std::lround(crop.width_fraction * image.width));
  if (h < 1 || w < 1) throw parameter_error("empty crop");
  VectorFieldImage out(h, w, image.channels);
  const int i0 = image.height - h;
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      for (int c = 0; c < image.channels; ++c)
        out.at(i, j, c) = image.at(i0 + i, j, c);
  return out;
}

/// Dataset-global per-channel standardization (population statistics); a
/// zero-variance channel is left at zero.
inline std::vector<VectorFieldImage> normalize(
    const std::vector<VectorFieldImage>& images) {
  if (images.empty()) throw parameter_error("normalize needs >= 1 image");
  const int channels = images[0].channels;
  std::vector<double> mean(channels, 0.0), var(channels, 0.0);
  std::vector<std::size_t> count(channels, 0);
  for (const auto& img : images)
    for (int i = 0; i < img.height; ++i)
      for (int j = 0; j < img.width; ++j)
        for (int c = 0; c < channels; ++c) {
          mean[c] += img.at(i, j, c);
          ++count[c];
        }
  for (int c = 0; c < channels; ++c) mean[c] /= static_cast<double>(count[c]);
  for (const auto& img : images)
    for (int i = 0; i < img.height; ++i)
      for (int j = 0; j < img.width; ++j)
        for (int c = 0; c < channels; ++c) {
          const double d = img.at(i, j, c) - mean[c];
          var[c] += d * d;
        }
  for (int c = 0; c < channels; ++c) var[c] /= static_cast<double>(count[c]);

  std::vector<VectorFieldImage> out;
  out.reserve(images.size());
  for (const auto& img : images) {
    VectorFieldImage n = img;
    for (int i = 0; i < n.height; ++i)
      for (int j = 0; j < n.width; ++j)
        for (int c = 0; c < channels; ++c) {
          const double sd = std::sqrt(var[c]);
          n.at(i, j, c) = sd > 0 ? (n.at(i, j, c) - mean[c]) / sd : 0.0;
        }
    out.push_back(std::move(n));
  }
  return out;
}

/// Fixed-order pipeline: subtract_base -> average_pairs (per configuration)
/// -> highpass -> crop -> normalize.
struct PreprocessedSet {
  std::vector<VectorFieldImage> images;
  std::vector<std::uint32_t> config_of;  // acquisition provenance per image
};

inline PreprocessedSet run_preprocess(const std::vector<Frame>& frames,
                                      const PreprocessConfig& cfg) {
  const std::vector<CorrectedImage> corrected = subtract_base(frames);
  PreprocessedSet set;
  // Group by configuration so averaging never crosses a session boundary.
  std::map<std::uint32_t, std::vector<VectorFieldImage>> by_cfg;
  for (const CorrectedImage& ci : corrected)
    by_cfg[ci.config_ordinal].push_back(ci.image);
  for (auto& [cfg_id, imgs] : by_cfg) {
    std::vector<VectorFieldImage> avg = average_pairs(imgs, cfg.averaging_k);
    for (auto& img : avg) {
      VectorFieldImage stage = cfg.highpass_sigma > 0
                                   ? highpass(img, cfg.highpass_sigma)
                                   : std::move(img);
      if (cfg.crop) stage = crop_fov(stage, *cfg.crop);
      set.images.push_back(std::move(stage));
      set.config_of.push_back(cfg_id);
    }
  }
  if (cfg.normalize) set.images = normalize(set.images);
  return set;
}

}  // namespace qdmsim
