#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "qdmsim/errors.hpp"
#include "qdmsim/logicsim.hpp"
#include "qdmsim/rng.hpp"

namespace qdmsim {

/// Axis-aligned die region, micrometers.
struct Rect {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
};

struct Placement {
  std::map<std::string, std::array<double, 2>> cell_positions;  // µm
  Rect pblock;
  double cell_pitch = 10.0;
};

struct CellCurrentMap {
  std::map<std::string, double> currents;             // µA, DC average
  std::map<PrimitiveKind, double> weights;            // µA per unit toggle rate
};

enum class PadSide { Left, Right };

struct PowerGridSpec {
  double rail_pitch = 60.0;   // µm between horizontal rails
  double rail_height = 5.0;   // z of the top-metal plane above the cells
  PadSide pad_side = PadSide::Left;
};

/// Horizontal rail y positions covering the pblock extent.
inline std::vector<double> rail_y_positions(const PowerGridSpec& grid,
                                            const Rect& pblock) {
  if (grid.rail_pitch <= 0) throw config_error("rail pitch must be positive");
  std::vector<double> ys;
  for (double y = pblock.y0 + grid.rail_pitch / 2; y <= pblock.y1;
       y += grid.rail_pitch)
    ys.push_back(y);
  if (ys.empty()) ys.push_back((pblock.y0 + pblock.y1) / 2);
  return ys;
}

/// One straight run of top-metal rail between injection points. Positive
/// current flows start -> end.
struct WireSegment {
  std::array<double, 3> start{};  // µm
  std::array<double, 3> end{};
  double current = 0.0;  // µA
};

/// Base cells fill sites in raster order (x fastest) so base positions are
/// locked regardless of the trojan list; trojan cells land in seed-shuffled
/// leftover sites, modeling logic squeezed into free space around the design.
inline Placement place_design(const LogicDesign& design, const Rect& pblock,
                              std::uint64_t seed, double cell_pitch = 10.0) {
  if (cell_pitch <= 0) throw config_error("cell pitch must be positive");
  const auto order = primitive_order(design);
  const int cols = static_cast<int>(std::floor(pblock.width() / cell_pitch));
  const int rows = static_cast<int>(std::floor(pblock.height() / cell_pitch));
  const long sites = static_cast<long>(cols) * rows;
  if (static_cast<long>(order.size()) > sites)
    throw capacity_error("pblock holds " + std::to_string(sites) +
                         " sites, design needs " +
                         std::to_string(order.size()));

  auto site_xy = [&](long s) {
    const long r = s / cols, c = s % cols;
    return std::array<double, 2>{pblock.x0 + (c + 0.5) * cell_pitch,
                                 pblock.y0 + (r + 0.5) * cell_pitch};
  };

  Placement placement;
  placement.pblock = pblock;
  placement.cell_pitch = cell_pitch;
  const std::size_t n_base = static_cast<std::size_t>(design.base.width);
  for (std::size_t i = 0; i < order.size() && i < n_base; ++i)
    placement.cell_positions[order[i].first] = site_xy(static_cast<long>(i));
  if (order.size() > n_base) {
    std::vector<long> remaining;
    for (long s = static_cast<long>(n_base); s < sites; ++s)
      remaining.push_back(s);
    Rng rng = Rng(seed).derive("placement");
    rng.shuffle(remaining);
    for (std::size_t i = n_base; i < order.size(); ++i)
      placement.cell_positions[order[i].first] = site_xy(remaining[i - n_base]);
  }
  return placement;
}

/// current(p) = weight(kind(p)) * toggle_count(p) / window_cycles
inline CellCurrentMap activity_to_currents(
    const SwitchingProfile& profile,
    const std::map<PrimitiveKind, double>& weights) {
  for (const auto& [kind, w] : weights)
    if (w <= 0) throw config_error("current weights must be positive");
  CellCurrentMap cells;
  cells.weights = weights;
  for (const auto& [id, count] : profile.toggle_counts) {
    const auto kind_it = profile.primitive_kinds.find(id);
    if (kind_it == profile.primitive_kinds.end())
      throw config_error("primitive '" + id + "' has no kind");
    const auto w_it = weights.find(kind_it->second);
    if (w_it == weights.end())
      throw config_error("no current weight for the kind of '" + id + "'");
    cells.currents[id] = w_it->second * static_cast<double>(count) /
                         static_cast<double>(profile.window_cycles);
  }
  return cells;
}

/// Injects each cell current at the nearest rail at the cell's x, splits the
/// rail at injection points, and assigns each piece the sum of injections on
/// its far side relative to the pad (single-rail model, no return path).
inline std::vector<WireSegment> solve_rail_currents(
    const CellCurrentMap& cells, const Placement& placement,
    const PowerGridSpec& grid) {
  const std::vector<double> rails = rail_y_positions(grid, placement.pblock);
  // rail index -> (x -> injected current), merged at identical x
  std::vector<std::map<double, double>> injections(rails.size());
  for (const auto& [id, current] : cells.currents) {
    if (current == 0.0) continue;
    const auto pos_it = placement.cell_positions.find(id);
    if (pos_it == placement.cell_positions.end())
      throw config_error("cell '" + id + "' has a current but no placement");
    const double cy = pos_it->second[1];
    std::size_t best = 0;
    double best_d = std::abs(rails[0] - cy);
    for (std::size_t r = 1; r < rails.size(); ++r) {
      const double d = std::abs(rails[r] - cy);
      if (d < best_d) {
        best_d = d;
        best = r;
      }
    }
    injections[best][pos_it->second[0]] += current;
  }

  std::vector<WireSegment> segments;
  const bool pad_left = grid.pad_side == PadSide::Left;
  for (std::size_t r = 0; r < rails.size(); ++r) {
    if (injections[r].empty()) continue;
    // Injection points ordered from the pad outward.
    std::vector<std::pair<double, double>> pts(injections[r].begin(),
                                               injections[r].end());
    if (!pad_left) std::reverse(pts.begin(), pts.end());
    // Suffix sums: a segment carries everything injected beyond it.
    std::vector<double> carried(pts.size() + 1, 0.0);
    for (std::size_t i = pts.size(); i > 0; --i)
      carried[i - 1] = carried[i] + pts[i - 1].second;
    double prev_x = pad_left ? placement.pblock.x0 : placement.pblock.x1;
    const double z = grid.rail_height;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (pts[i].first != prev_x && carried[i] != 0.0)
        segments.push_back(WireSegment{{prev_x, rails[r], z},
                                       {pts[i].first, rails[r], z},
                                       carried[i]});
      prev_x = pts[i].first;
    }
  }
  return segments;
}

}  // namespace qdmsim
