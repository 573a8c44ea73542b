#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <vector>

#include "qdmsim/errors.hpp"
#include "qdmsim/image.hpp"
#include "qdmsim/latent.hpp"

namespace qdmsim {

struct ClusterParams {
  double eps = 0.0;
  int min_pts = 3;
};

constexpr int kNoise = -1;

struct ClusterLabeling {
  std::vector<int> labels;  // cluster id 0..k-1 or kNoise
  int cluster_count = 0;
  std::size_t point_count = 0;
};

namespace detail {

inline double point_distance(const LatentPoint& a, const LatentPoint& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.coords.size(); ++i) {
    const double d = a.coords[i] - b.coords[i];
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace detail

struct KneeResult {
  double eps = 0.0;
  bool degenerate = false;  // all points identical
};

/// Sorted 2nd-nearest-neighbor distances; the knee is the index of maximum
/// perpendicular distance to the chord between the first and last sorted
/// points; ties, and the flat profile in particular, resolve to the last
/// such index.
inline KneeResult knee_eps(const std::vector<LatentPoint>& points) {
  const std::size_t n = points.size();
  if (n < 4) throw shape_error("knee_eps needs at least 4 points");
  std::vector<double> second_nn(n);
  for (std::size_t i = 0; i < n; ++i) {
    double d1 = std::numeric_limits<double>::infinity();
    double d2 = d1;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double d = detail::point_distance(points[i], points[j]);
      if (d < d1) {
        d2 = d1;
        d1 = d;
      } else if (d < d2) {
        d2 = d;
      }
    }
    second_nn[i] = d2;
  }
  std::sort(second_nn.begin(), second_nn.end());
  if (second_nn.back() <= 0.0)
    return {std::numeric_limits<double>::min(), true};

  const double x1 = static_cast<double>(n - 1);
  const double y0 = second_nn.front(), y1 = second_nn.back();
  const double chord_len = std::sqrt(x1 * x1 + (y1 - y0) * (y1 - y0));
  std::size_t best = 0;
  double best_d = -1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double cross =
        std::abs(x1 * (second_nn[i] - y0) - static_cast<double>(i) * (y1 - y0));
    const double d = cross / chord_len;
    if (d >= best_d) {  // >= so a flat profile lands on the last index
      best_d = d;
      best = i;
    }
  }
  return {second_nn[best], false};
}

/// Standard density-based clustering. A core point has >= min_pts neighbors
/// within eps counting itself; clusters are connected components of core
/// points under eps-reachability; border points join the adjacent core
/// cluster with the lowest id; the rest is noise. Cluster ids are assigned in
/// order of each cluster's lowest core index, so output is deterministic for
/// a fixed point order.
inline ClusterLabeling dbscan(const std::vector<LatentPoint>& points,
                              const ClusterParams& params) {
  if (params.eps <= 0) throw parameter_error("eps must be positive");
  if (params.min_pts < 1) throw parameter_error("min_pts must be >= 1");
  const std::size_t n = points.size();
  std::vector<std::vector<std::size_t>> neighbors(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (detail::point_distance(points[i], points[j]) <= params.eps)
        neighbors[i].push_back(j);  // includes i itself

  std::vector<bool> core(n, false);
  for (std::size_t i = 0; i < n; ++i)
    core[i] = neighbors[i].size() >= static_cast<std::size_t>(params.min_pts);

  ClusterLabeling out;
  out.point_count = n;
  out.labels.assign(n, kNoise);
  int next_id = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!core[i] || out.labels[i] != kNoise) continue;
    const int id = next_id++;
    std::queue<std::size_t> frontier;
    out.labels[i] = id;
    frontier.push(i);
    while (!frontier.empty()) {
      const std::size_t p = frontier.front();
      frontier.pop();
      for (std::size_t q : neighbors[p]) {
        if (!core[q] || out.labels[q] != kNoise) continue;
        out.labels[q] = id;
        frontier.push(q);
      }
    }
  }
  // Border points: lowest adjacent core cluster id.
  for (std::size_t i = 0; i < n; ++i) {
    if (core[i] || out.labels[i] != kNoise) continue;
    int best = kNoise;
    for (std::size_t q : neighbors[i])
      if (core[q] && (best == kNoise || out.labels[q] < best))
        best = out.labels[q];
    out.labels[i] = best;
  }
  out.cluster_count = next_id;
  return out;
}

/// Relabels clusters by ascending smallest member index; noise unchanged.
inline ClusterLabeling canonicalize(const ClusterLabeling& labeling) {
  std::map<int, std::size_t> first_member;
  for (std::size_t i = 0; i < labeling.labels.size(); ++i) {
    const int l = labeling.labels[i];
    if (l != kNoise && !first_member.count(l)) first_member[l] = i;
  }
  std::vector<std::pair<std::size_t, int>> order;
  for (const auto& [l, idx] : first_member) order.emplace_back(idx, l);
  std::sort(order.begin(), order.end());
  std::map<int, int> remap;
  for (std::size_t k = 0; k < order.size(); ++k) remap[order[k].second] = static_cast<int>(k);
  ClusterLabeling out = labeling;
  for (int& l : out.labels)
    if (l != kNoise) l = remap[l];
  return out;
}

// ---------------------------------------------------------------------------
// Golden-chip-free consolidation and figures of merit
// ---------------------------------------------------------------------------

struct GroupAssignment {
  std::map<int, std::uint32_t> cluster_to_chip;  // majority vote per cluster
  std::vector<std::uint32_t> group_chips;        // distinct chips with a group
  bool single_group = false;  // one surviving group => designated trojan-free
  bool tie_flagged = false;   // some cluster vote tied (lower chip id wins)
};

/// Majority-vote merge of clusters into at most two chip groups; pairwise
/// comparisons only. A single surviving group is designated trojan-free.
inline GroupAssignment consolidate(const ClusterLabeling& labeling,
                                   const std::vector<std::uint32_t>& truth) {
  if (truth.size() != labeling.labels.size())
    throw shape_error("truth size mismatch");
  std::set<std::uint32_t> chips(truth.begin(), truth.end());
  if (chips.size() > 2)
    throw protocol_error("consolidation compares exactly two chips, got " +
                         std::to_string(chips.size()));
  GroupAssignment out;
  std::map<int, std::map<std::uint32_t, int>> votes;
  for (std::size_t i = 0; i < truth.size(); ++i)
    if (labeling.labels[i] != kNoise) votes[labeling.labels[i]][truth[i]]++;
  std::set<std::uint32_t> groups;
  for (const auto& [cluster, counts] : votes) {
    std::uint32_t best_chip = 0;
    int best = -1;
    for (const auto& [chip, cnt] : counts) {
      if (cnt > best) {
        best = cnt;
        best_chip = chip;
      } else if (cnt == best) {
        out.tie_flagged = true;
        if (chip < best_chip) best_chip = chip;
      }
    }
    out.cluster_to_chip[cluster] = best_chip;
    groups.insert(best_chip);
  }
  out.group_chips.assign(groups.begin(), groups.end());
  out.single_group = groups.size() <= 1;
  return out;
}

struct DetectionReport {
  double false_positive_rate = 0;
  double false_negative_rate = 0;
  double accuracy = 0;
  double noise_fraction = 0;
  int false_positives = 0;
  int false_negatives = 0;
  int correct = 0;
  int noise_points = 0;
  std::size_t point_count = 0;
  bool trojan_detected = false;  // two consolidated groups survived
};

/// False positives/negatives per the pairwise consolidation rules.
/// Rate denominators are the per-chip non-noise counts; accuracy is the
/// correctly grouped share of non-noise points.
inline DetectionReport accuracy_report(const GroupAssignment& groups,
                                       const ClusterLabeling& labeling,
                                       const std::vector<std::uint32_t>& truth,
                                       std::uint32_t test_chip,
                                       bool test_is_trojan) {
  DetectionReport rep;
  rep.point_count = truth.size();
  rep.trojan_detected = !groups.single_group;
  int nonnoise_test = 0, nonnoise_other = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (labeling.labels[i] == kNoise) {
      ++rep.noise_points;
      continue;
    }
    (truth[i] == test_chip ? nonnoise_test : nonnoise_other)++;
  }
  rep.noise_fraction = truth.empty() ? 0.0
                                     : static_cast<double>(rep.noise_points) /
                                           static_cast<double>(truth.size());

  // Count of each chip per consolidated group.
  auto group_of = [&](std::size_t i) -> std::uint32_t {
    return groups.cluster_to_chip.at(labeling.labels[i]);
  };

  if (!test_is_trojan) {
    // False positive: a test-chip measurement in a group containing only one
    // chip's measurements (it looks like a distinct design).
    std::map<std::uint32_t, std::set<std::uint32_t>> chips_in_group;
    for (std::size_t i = 0; i < truth.size(); ++i)
      if (labeling.labels[i] != kNoise)
        chips_in_group[group_of(i)].insert(truth[i]);
    for (std::size_t i = 0; i < truth.size(); ++i) {
      if (labeling.labels[i] == kNoise) continue;
      if (truth[i] == test_chip && chips_in_group[group_of(i)].size() == 1)
        ++rep.false_positives;
      else
        ++rep.correct;
    }
    rep.false_positive_rate =
        nonnoise_test > 0
            ? static_cast<double>(rep.false_positives) / nonnoise_test
            : 0.0;
    rep.false_negative_rate = 0.0;  // not applicable
  } else {
    for (std::size_t i = 0; i < truth.size(); ++i) {
      if (labeling.labels[i] == kNoise) continue;
      const std::uint32_t g = group_of(i);
      if (truth[i] != test_chip && g == test_chip)
        ++rep.false_positives;  // trojan-free measurement grouped as test chip
      else if (truth[i] == test_chip && g != test_chip)
        ++rep.false_negatives;  // test measurement grouped as trojan-free
      else
        ++rep.correct;
    }
    rep.false_positive_rate =
        nonnoise_other > 0
            ? static_cast<double>(rep.false_positives) / nonnoise_other
            : 0.0;
    rep.false_negative_rate =
        nonnoise_test > 0
            ? static_cast<double>(rep.false_negatives) / nonnoise_test
            : 0.0;
  }
  const int nonnoise = nonnoise_test + nonnoise_other;
  rep.accuracy =
      nonnoise > 0 ? static_cast<double>(rep.correct) / nonnoise : 1.0;
  return rep;
}

/// min inter-centroid distance / max in-cluster RMS deviation; absent for a
/// single cluster, +inf when every cluster is a point.
inline std::optional<double> separation_ratio(
    const ClusterLabeling& labeling, const std::vector<LatentPoint>& points) {
  if (labeling.cluster_count < 2) return std::nullopt;
  const std::size_t dims = points.empty() ? 0 : points[0].coords.size();
  std::vector<std::vector<double>> centroid(
      labeling.cluster_count, std::vector<double>(dims, 0.0));
  std::vector<int> count(labeling.cluster_count, 0);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const int l = labeling.labels[i];
    if (l == kNoise) continue;
    for (std::size_t d = 0; d < dims; ++d) centroid[l][d] += points[i].coords[d];
    count[l]++;
  }
  for (int c = 0; c < labeling.cluster_count; ++c)
    for (std::size_t d = 0; d < dims; ++d)
      if (count[c] > 0) centroid[c][d] /= count[c];

  double max_rms = 0;
  for (int c = 0; c < labeling.cluster_count; ++c) {
    double ss = 0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (labeling.labels[i] != c) continue;
      for (std::size_t d = 0; d < dims; ++d) {
        const double dv = points[i].coords[d] - centroid[c][d];
        ss += dv * dv;
      }
    }
    if (count[c] > 0) max_rms = std::max(max_rms, std::sqrt(ss / count[c]));
  }
  double min_dist = std::numeric_limits<double>::infinity();
  for (int a = 0; a < labeling.cluster_count; ++a)
    for (int b = a + 1; b < labeling.cluster_count; ++b) {
      double ss = 0;
      for (std::size_t d = 0; d < dims; ++d) {
        const double dv = centroid[a][d] - centroid[b][d];
        ss += dv * dv;
      }
      min_dist = std::min(min_dist, std::sqrt(ss));
    }
  if (max_rms == 0) return std::numeric_limits<double>::infinity();
  return min_dist / max_rms;
}

/// Golden-chip distance metric: the golden set is interleave-split into a
/// reference half A (even indices) and a normalization half B (odd); every
/// image is scored by Euclidean distance to A's pixelwise mean, and the test
/// mean distance is normalized by B's.
inline double normalized_euclidean(const std::vector<VectorFieldImage>& test,
                                   const std::vector<VectorFieldImage>& golden) {
  if (golden.size() < 4)
    throw protocol_error("golden set must hold at least 4 images");
  if (test.empty()) throw protocol_error("empty test set");
  std::vector<const VectorFieldImage*> half_a, half_b;
  for (std::size_t i = 0; i < golden.size(); ++i)
    ((i % 2 == 0) ? half_a : half_b).push_back(&golden[i]);

  VectorFieldImage mean_a = *half_a[0];
  for (std::size_t k = 1; k < half_a.size(); ++k)
    for (std::size_t i = 0; i < mean_a.data.size(); ++i)
      mean_a.data[i] += half_a[k]->data[i];
  for (double& v : mean_a.data) v /= static_cast<double>(half_a.size());

  auto dist_to_mean = [&](const VectorFieldImage& img) {
    if (!img.same_shape(mean_a)) throw shape_error("image shape mismatch");
    double ss = 0;
    for (std::size_t i = 0; i < img.data.size(); ++i) {
      const double d = img.data[i] - mean_a.data[i];
      ss += d * d;
    }
    return std::sqrt(ss);
  };
  double d_test = 0;
  for (const auto& img : test) d_test += dist_to_mean(img);
  d_test /= static_cast<double>(test.size());
  double d_b = 0;
  for (const VectorFieldImage* img : half_b) d_b += dist_to_mean(*img);
  d_b /= static_cast<double>(half_b.size());
  if (d_b == 0) return std::numeric_limits<double>::infinity();
  return d_test / d_b;
}

}  // namespace qdmsim
