#include "qdmsim/layout.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "qdmsim/rng.hpp"

using namespace qdmsim;

namespace {

const Rect kBlock{0, 0, 400, 400};

LogicDesign small_design() {
  return make_design(make_counter(16), TrojanKind::CounterTrojan, 2);
}

}  // namespace

TEST(PlaceDesign, LockedBasePlacement) {
  LogicDesign tf = make_trojan_free(make_counter(16));
  LogicDesign ti = small_design();
  Placement p_tf = place_design(tf, kBlock, 7);
  Placement p_ti = place_design(ti, kBlock, 7);
  for (const auto& [id, pos] : p_tf.cell_positions)
    EXPECT_EQ(p_ti.cell_positions.at(id), pos) << id;
}

TEST(PlaceDesign, DeterministicAndSeedSensitive) {
  LogicDesign d = small_design();
  Placement a = place_design(d, kBlock, 3);
  Placement b = place_design(d, kBlock, 3);
  Placement c = place_design(d, kBlock, 4);
  EXPECT_EQ(a.cell_positions, b.cell_positions);
  bool any_moved = false;
  for (const auto& [id, pos] : a.cell_positions)
    if (id.rfind("base.", 0) != 0 && c.cell_positions.at(id) != pos)
      any_moved = true;
  EXPECT_TRUE(any_moved);
}

TEST(PlaceDesign, AllCellsInsidePblock) {
  LogicDesign d = small_design();
  Placement p = place_design(d, kBlock, 1);
  for (const auto& [id, pos] : p.cell_positions) {
    EXPECT_GT(pos[0], kBlock.x0);
    EXPECT_LT(pos[0], kBlock.x1);
    EXPECT_GT(pos[1], kBlock.y0);
    EXPECT_LT(pos[1], kBlock.y1);
  }
}

TEST(PlaceDesign, EmptyDesign) {
  LogicDesign d = make_trojan_free(make_counter(1));
  d.base.width = 0;
  d.base.state.clear();
  Placement p = place_design(d, kBlock, 1);
  EXPECT_TRUE(p.cell_positions.empty());
}

TEST(PlaceDesign, CapacityError) {
  LogicDesign d = make_trojan_free(make_counter(10));
  EXPECT_THROW(place_design(d, Rect{0, 0, 20, 20}, 1), capacity_error);  // 4 sites
}

TEST(ActivityToCurrents, LinearMap) {
  SwitchingProfile profile;
  profile.window_cycles = 100;
  profile.toggle_counts = {{"a", 50}, {"b", 0}};
  profile.primitive_kinds = {{"a", PrimitiveKind::Register},
                             {"b", PrimitiveKind::Lut}};
  std::map<PrimitiveKind, double> weights{{PrimitiveKind::Register, 2.0},
                                          {PrimitiveKind::Lut, 1.0}};
  CellCurrentMap cells = activity_to_currents(profile, weights);
  EXPECT_DOUBLE_EQ(cells.currents.at("a"), 1.0);  // rate 0.5 * 2 µA
  EXPECT_DOUBLE_EQ(cells.currents.at("b"), 0.0);

  profile.toggle_counts["a"] = 100;  // doubling toggles doubles the current
  CellCurrentMap doubled = activity_to_currents(profile, weights);
  EXPECT_DOUBLE_EQ(doubled.currents.at("a"), 2 * cells.currents.at("a"));
}

TEST(ActivityToCurrents, UnknownKind) {
  SwitchingProfile profile;
  profile.window_cycles = 10;
  profile.toggle_counts = {{"a", 5}};
  profile.primitive_kinds = {{"a", PrimitiveKind::Lut}};
  std::map<PrimitiveKind, double> weights{{PrimitiveKind::Register, 2.0}};
  EXPECT_THROW(activity_to_currents(profile, weights), config_error);
  weights = {{PrimitiveKind::Lut, -1.0}};
  EXPECT_THROW(activity_to_currents(profile, weights), config_error);
}

namespace {

Placement manual_placement(const std::vector<std::pair<std::string, std::array<double, 2>>>& cells,
                           Rect pblock) {
  Placement p;
  p.pblock = pblock;
  for (const auto& [id, pos] : cells) p.cell_positions[id] = pos;
  return p;
}

CellCurrentMap manual_currents(const std::vector<std::pair<std::string, double>>& cells) {
  CellCurrentMap m;
  for (const auto& [id, cur] : cells) m.currents[id] = cur;
  return m;
}

}  // namespace

TEST(SolveRailCurrents, SingleCellKirchhoff) {
  PowerGridSpec grid;
  grid.rail_pitch = 100;
  Rect pblock{0, 0, 300, 100};  // one rail at y = 50
  Placement p = manual_placement({{"c", {120, 55}}}, pblock);
  CellCurrentMap cells = manual_currents({{"c", 3.0}});
  auto segs = solve_rail_currents(cells, p, grid);
  ASSERT_EQ(segs.size(), 1u);
  EXPECT_DOUBLE_EQ(segs[0].start[0], 0.0);
  EXPECT_DOUBLE_EQ(segs[0].end[0], 120.0);
  EXPECT_DOUBLE_EQ(segs[0].start[1], 50.0);
  EXPECT_DOUBLE_EQ(segs[0].current, 3.0);
}

TEST(SolveRailCurrents, TwoCellAccumulation) {
  PowerGridSpec grid;
  grid.rail_pitch = 100;
  Rect pblock{0, 0, 300, 100};
  Placement p = manual_placement({{"a", {100, 40}}, {"b", {200, 60}}}, pblock);
  CellCurrentMap cells = manual_currents({{"a", 1.0}, {"b", 2.0}});
  auto segs = solve_rail_currents(cells, p, grid);
  // brute-force accumulation oracle: segment (0,100) carries 3, (100,200) carries 2
  ASSERT_EQ(segs.size(), 2u);
  EXPECT_DOUBLE_EQ(segs[0].end[0], 100.0);
  EXPECT_DOUBLE_EQ(segs[0].current, 3.0);
  EXPECT_DOUBLE_EQ(segs[1].start[0], 100.0);
  EXPECT_DOUBLE_EQ(segs[1].end[0], 200.0);
  EXPECT_DOUBLE_EQ(segs[1].current, 2.0);
}

TEST(SolveRailCurrents, PadRightMirrors) {
  PowerGridSpec grid;
  grid.rail_pitch = 100;
  grid.pad_side = PadSide::Right;
  Rect pblock{0, 0, 300, 100};
  Placement p = manual_placement({{"a", {100, 50}}}, pblock);
  CellCurrentMap cells = manual_currents({{"a", 1.0}});
  auto segs = solve_rail_currents(cells, p, grid);
  ASSERT_EQ(segs.size(), 1u);
  EXPECT_DOUBLE_EQ(segs[0].start[0], 300.0);
  EXPECT_DOUBLE_EQ(segs[0].end[0], 100.0);
}

TEST(SolveRailCurrents, NoCellsNoSegments) {
  PowerGridSpec grid;
  Placement p;
  p.pblock = Rect{0, 0, 100, 100};
  EXPECT_TRUE(solve_rail_currents(CellCurrentMap{}, p, grid).empty());
}

TEST(SolveRailCurrents, ConservationOnRandomPlacements) {
  Rng rng(31);
  PowerGridSpec grid;
  for (int trial = 0; trial < 100; ++trial) {
    Rect pblock{0, 0, 500 + rng.next_double() * 500, 300 + rng.next_double() * 300};
    const int n = 5 + static_cast<int>(rng.next_below(40));
    CellCurrentMap cells;
    Placement p;
    p.pblock = pblock;
    double total = 0;
    for (int i = 0; i < n; ++i) {
      const std::string id = "c" + std::to_string(i);
      p.cell_positions[id] = {rng.next_uniform(1.0, pblock.x1 - 1.0),
                              rng.next_uniform(0.0, pblock.y1)};
      const double cur = rng.next_double() * 10;
      cells.currents[id] = cur;
      total += cur;
    }
    auto segs = solve_rail_currents(cells, p, grid);
    // pad-end current per rail sums to the injected total
    double pad_total = 0;
    std::map<double, double> pad_current;  // rail y -> first segment current
    for (const auto& s : segs)
      if (s.start[0] == pblock.x0) pad_current[s.start[1]] = s.current;
    for (const auto& [y, cur] : pad_current) pad_total += cur;
    EXPECT_NEAR(pad_total, total, 1e-12 * std::max(1.0, std::abs(total)));
  }
}

TEST(SolveRailCurrents, LocalityOfMovedCell) {
  PowerGridSpec grid;
  grid.rail_pitch = 60;
  Rect pblock{0, 0, 600, 600};
  auto base_cells = manual_currents({{"x", 1.0}, {"y", 2.0}, {"z", 0.5}});
  Placement p1 = manual_placement(
      {{"x", {100, 35}}, {"y", {200, 95}}, {"z", {300, 155}}}, pblock);
  Placement p2 = p1;
  p2.cell_positions["z"] = {300, 515};  // different rail
  auto s1 = solve_rail_currents(base_cells, p1, grid);
  auto s2 = solve_rail_currents(base_cells, p2, grid);
  auto rail_map = [](const std::vector<WireSegment>& segs) {
    std::map<double, std::vector<WireSegment>> m;
    for (const auto& s : segs) m[s.start[1]].push_back(s);
    return m;
  };
  auto m1 = rail_map(s1), m2 = rail_map(s2);
  // rails not serving the moved cell are identical
  for (double y : {30.0, 90.0}) {
    ASSERT_EQ(m1[y].size(), m2[y].size());
    for (std::size_t i = 0; i < m1[y].size(); ++i) {
      EXPECT_DOUBLE_EQ(m1[y][i].current, m2[y][i].current);
      EXPECT_DOUBLE_EQ(m1[y][i].end[0], m2[y][i].end[0]);
    }
  }
  EXPECT_TRUE(m1.count(150.0));
  EXPECT_FALSE(m2.count(150.0));
  EXPECT_TRUE(m2.count(510.0));
}

TEST(SolveRailCurrents, TrojanDeltaConfinedToTrojanRails) {
  PowerGridSpec grid;
  grid.rail_pitch = 60;
  const Rect pblock{0, 0, 400, 400};
  std::map<PrimitiveKind, double> weights{{PrimitiveKind::Register, 2.0},
                                          {PrimitiveKind::Lut, 1.0}};
  LogicDesign tf = make_trojan_free(make_counter(32));
  LogicDesign ti = make_design(make_counter(32), TrojanKind::ShiftRegister, 2);
  const std::uint64_t window = 1 << 12;
  Placement p_tf = place_design(tf, pblock, 5);
  Placement p_ti = place_design(ti, pblock, 5);
  auto segs_tf = solve_rail_currents(
      activity_to_currents(simulate_activity(tf, window), weights), p_tf, grid);
  auto segs_ti = solve_rail_currents(
      activity_to_currents(simulate_activity(ti, window), weights), p_ti, grid);

  const auto rails = rail_y_positions(grid, pblock);
  auto nearest_rail = [&](double y) {
    double best = rails[0];
    for (double r : rails)
      if (std::abs(r - y) < std::abs(best - y)) best = r;
    return best;
  };
  std::set<double> trojan_rails;
  for (const auto& [id, pos] : p_ti.cell_positions)
    if (id.rfind("base.", 0) != 0)
      trojan_rails.insert(nearest_rail(pos[1]));

  auto per_rail = [](const std::vector<WireSegment>& segs) {
    std::map<double, std::map<double, double>> m;  // rail y -> end x -> current
    for (const auto& s : segs) m[s.start[1]][s.end[0]] = s.current;
    return m;
  };
  auto m_tf = per_rail(segs_tf), m_ti = per_rail(segs_ti);
  std::set<double> all_rails;
  for (const auto& [y, _] : m_tf) all_rails.insert(y);
  for (const auto& [y, _] : m_ti) all_rails.insert(y);
  for (double y : all_rails) {
    const bool differs = m_tf[y] != m_ti[y];
    if (differs) EXPECT_TRUE(trojan_rails.count(y)) << "rail " << y;
  }
}
