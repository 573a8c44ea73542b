#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "qdmsim/errors.hpp"
#include "qdmsim/image.hpp"
#include "qdmsim/latent.hpp"

namespace qdmsim {

namespace detail {

/// Cyclic Jacobi eigendecomposition of a symmetric matrix (row-major n*n).
/// Returns eigenvalues; V's columns are the eigenvectors, both sorted
/// descending by eigenvalue.
inline std::vector<double> jacobi_eigen(std::vector<double> a, std::size_t n,
                                        std::vector<double>& v_out) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  for (int sweep = 0; sweep < 128; ++sweep) {
    double off = 0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
    if (off < 1e-28 * (n ? 1.0 : 1.0)) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (a[q * n + q] - a[p * n + p]) / (2 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k * n + p], akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p * n + k], aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v[k * n + p], vkq = v[k * n + q];
          v[k * n + p] = c * vkp - s * vkq;
          v[k * n + q] = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<double> eig(n);
  for (std::size_t i = 0; i < n; ++i) eig[i] = a[i * n + i];
  // selection sort, descending, carrying columns of v
  for (std::size_t i = 0; i + 1 < n; ++i) {
    std::size_t best = i;
    for (std::size_t j = i + 1; j < n; ++j)
      if (eig[j] > eig[best]) best = j;
    if (best != i) {
      std::swap(eig[i], eig[best]);
      for (std::size_t k = 0; k < n; ++k)
        std::swap(v[k * n + i], v[k * n + best]);
    }
  }
  v_out = std::move(v);
  return eig;
}

inline std::vector<double> flatten(const VectorFieldImage& img) {
  return img.data;  // already row-major channel-fastest
}

}  // namespace detail

struct PcaModel {
  std::vector<double> mean;                   // flattened-image vector
  std::vector<std::vector<double>> components;  // orthonormal, descending
  std::vector<double> explained_variance_ratio;
  bool low_variance_warning = false;  // top components explain < 50%
  int height = 0, width = 0, channels = 0;
};

/// Thin SVD through the sample Gram matrix: with N samples << pixel count the
/// N x N eigenproblem gives the same top components as the covariance.
inline PcaModel pca_fit(const std::vector<VectorFieldImage>& images,
                        int n_components = 4) {
  const std::size_t n = images.size();
  if (n < static_cast<std::size_t>(n_components) + 1)
    throw shape_error("pca_fit needs at least n_components + 1 images");
  const std::size_t dim = images[0].size();
  for (const auto& img : images)
    if (!img.same_shape(images[0])) throw shape_error("mixed image shapes");

  PcaModel model;
  model.height = images[0].height;
  model.width = images[0].width;
  model.channels = images[0].channels;
  model.mean.assign(dim, 0.0);
  for (const auto& img : images)
    for (std::size_t i = 0; i < dim; ++i) model.mean[i] += img.data[i];
  for (double& m : model.mean) m /= static_cast<double>(n);

  std::vector<std::vector<double>> centered(n);
  for (std::size_t s = 0; s < n; ++s) {
    centered[s].resize(dim);
    for (std::size_t i = 0; i < dim; ++i)
      centered[s][i] = images[s].data[i] - model.mean[i];
  }

  std::vector<double> gram(n * n, 0.0);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a; b < n; ++b) {
      double dot = 0;
      for (std::size_t i = 0; i < dim; ++i) dot += centered[a][i] * centered[b][i];
      gram[a * n + b] = dot;
      gram[b * n + a] = dot;
    }

  std::vector<double> v;
  std::vector<double> eig = detail::jacobi_eigen(gram, n, v);
  double total = 0;
  for (double e : eig) total += std::max(e, 0.0);

  double captured = 0;
  for (int k = 0; k < n_components; ++k) {
    const double lambda = std::max(eig[static_cast<std::size_t>(k)], 0.0);
    std::vector<double> comp(dim, 0.0);
    for (std::size_t s = 0; s < n; ++s) {
      const double u = v[s * n + static_cast<std::size_t>(k)];
      for (std::size_t i = 0; i < dim; ++i) comp[i] += u * centered[s][i];
    }
    double norm = 0;
    for (double c : comp) norm += c * c;
    norm = std::sqrt(norm);
    if (norm > 0)
      for (double& c : comp) c /= norm;
    // canonical sign: largest-magnitude entry positive
    std::size_t arg = 0;
    for (std::size_t i = 1; i < dim; ++i)
      if (std::abs(comp[i]) > std::abs(comp[arg])) arg = i;
    if (comp[arg] < 0)
      for (double& c : comp) c = -c;
    model.components.push_back(std::move(comp));
    const double ratio = total > 0 ? lambda / total : 0.0;
    model.explained_variance_ratio.push_back(ratio);
    captured += ratio;
  }
  model.low_variance_warning = captured < 0.5;
  return model;
}

/// coords = components^T (flatten(image) - mean)
inline LatentPoint pca_transform(const PcaModel& model,
                                 const VectorFieldImage& image,
                                 int source_frame = -1) {
  if (image.height != model.height || image.width != model.width ||
      image.channels != model.channels)
    throw shape_error("image shape does not match the fitted model");
  LatentPoint p;
  p.source_frame = source_frame;
  for (const auto& comp : model.components) {
    double dot = 0;
    for (std::size_t i = 0; i < comp.size(); ++i)
      dot += comp[i] * (image.data[i] - model.mean[i]);
    p.coords.push_back(dot);
  }
  return p;
}

}  // namespace qdmsim
