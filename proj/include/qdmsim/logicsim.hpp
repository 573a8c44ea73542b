#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "qdmsim/errors.hpp"

namespace qdmsim {

/// Bit vector, index 0 = least significant bit.
using Bits = std::vector<std::uint8_t>;

inline Bits bits_from_u64(std::uint64_t value, int width) {
  Bits b(static_cast<std::size_t>(width), 0);
  for (int i = 0; i < width && i < 64; ++i) b[i] = (value >> i) & 1u;
  return b;
}

inline std::uint64_t bits_to_u64(const Bits& b) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < b.size() && i < 64; ++i)
    v |= static_cast<std::uint64_t>(b[i] & 1u) << i;
  return v;
}

// ---------------------------------------------------------------------------
// Base circuits
// ---------------------------------------------------------------------------

enum class BaseKind { Counter, Lfsr };

struct BaseCircuit {
  BaseKind kind = BaseKind::Counter;
  int width = 0;
  std::vector<int> taps;  // Lfsr only, indices into the pre-shift state
  Bits state;
};

/// Binary increment modulo 2^width.
inline Bits counter_step(const Bits& state) {
  Bits next = state;
  for (std::size_t i = 0; i < next.size(); ++i) {
    next[i] ^= 1u;
    if (next[i]) break;  // no carry out of this bit
  }
  return next;
}

/// Fibonacci LFSR: feedback = XOR of tapped pre-shift bits, register shifts
/// toward higher indices, feedback enters bit 0.
inline Bits lfsr_step(const Bits& state, const std::vector<int>& taps) {
  if (taps.empty()) throw config_error("lfsr taps must be non-empty");
  std::uint8_t fb = 0;
  for (int t : taps) {
    if (t < 0 || t >= static_cast<int>(state.size()))
      throw config_error("lfsr tap index " + std::to_string(t) +
                         " out of range for width " +
                         std::to_string(state.size()));
    fb ^= state[static_cast<std::size_t>(t)] & 1u;
  }
  Bits next(state.size());
  for (std::size_t i = state.size(); i > 1; --i) next[i - 1] = state[i - 2];
  next[0] = fb;
  return next;
}

/// Maximal-length tap sets for this shift convention: taps {w-1, ...} realize
/// the characteristic polynomial x^w + sum x^(w-1-t) + ... with period
/// 2^w - 1 (verified by enumeration in tests for w <= 16).
inline const std::vector<int>& primitive_taps(int width) {
  static const std::map<int, std::vector<int>> table = {
      {2, {1, 0}},
      {3, {2, 1}},
      {4, {3, 2}},
      {5, {4, 2}},
      {6, {5, 4}},
      {7, {6, 5}},
      {8, {7, 3, 2, 1}},
      {9, {8, 4}},
      {10, {9, 6}},
      {11, {10, 8}},
      {12, {11, 10, 7, 5}},
      {13, {12, 11, 9, 8}},
      {14, {13, 12, 10, 8}},
      {15, {14, 13}},
      {16, {15, 11, 2, 0}},
      {24, {23, 6, 1, 0}},
      {32, {31, 30, 29, 9}},
      {167, {166, 160}},
  };
  auto it = table.find(width);
  if (it == table.end())
    throw config_error("no shipped primitive tap set for LFSR width " +
                       std::to_string(width));
  return it->second;
}

inline BaseCircuit make_counter(int width) {
  if (width < 1) throw config_error("base width must be >= 1");
  return BaseCircuit{BaseKind::Counter, width, {}, Bits(width, 0)};
}

/// Seed defaults to 0...01 (nonzero, reproducible).
inline BaseCircuit make_lfsr(int width, std::vector<int> taps = {}) {
  if (width < 1) throw config_error("base width must be >= 1");
  if (taps.empty()) taps = primitive_taps(width);
  for (int t : taps)
    if (t < 0 || t >= width)
      throw config_error("lfsr tap index out of range");
  Bits seed(width, 0);
  seed[0] = 1;
  return BaseCircuit{BaseKind::Lfsr, width, std::move(taps), std::move(seed)};
}

inline Bits base_step(const BaseCircuit& base) {
  return base.kind == BaseKind::Counter ? counter_step(base.state)
                                        : lfsr_step(base.state, base.taps);
}

// ---------------------------------------------------------------------------
// Trojan building blocks
// ---------------------------------------------------------------------------

enum class TrojanKind { Comparator, ShiftRegister, CounterTrojan };

struct TrojanBlock {
  TrojanKind kind = TrojanKind::Comparator;
  std::vector<int> input_bits;          // base state bit indices; 4 or 1
  std::array<std::uint8_t, 4> internal{};  // register bits, unused for Comparator
  std::uint8_t enable = 1;
  std::uint8_t trigger = 0;
};

inline std::uint8_t comparator_trigger(const std::array<std::uint8_t, 4>& in,
                                       std::uint8_t enable) {
  return (enable && in[0] && in[1] && in[2] && in[3]) ? 1 : 0;
}

struct TrojanStep {
  TrojanBlock block;
  std::uint8_t trigger;
};

/// Shift register block: reset/not-enable zeroes the register for that clock,
/// otherwise bits shift toward index 3 and `in` enters bit 0. Trigger is
/// evaluated on the post-clock state.
inline TrojanStep shiftreg_step(TrojanBlock block, std::uint8_t in,
                                std::uint8_t reset, std::uint8_t enable) {
  if (block.kind != TrojanKind::ShiftRegister)
    throw usage_error("shiftreg_step on non-shift-register block");
  if (reset || !enable) {
    block.internal = {0, 0, 0, 0};
  } else {
    block.internal = {static_cast<std::uint8_t>(in & 1u), block.internal[0],
                      block.internal[1], block.internal[2]};
  }
  block.trigger = (block.internal[0] && block.internal[1] &&
                   block.internal[2] && block.internal[3])
                      ? 1
                      : 0;
  return {block, block.trigger};
}

/// Counter block: counts clocks on which `in` is 1; the all-ones count raises
/// the trigger and the next increment wraps the 4-bit count back to zero.
inline TrojanStep counter_trojan_step(TrojanBlock block, std::uint8_t in,
                                      std::uint8_t reset, std::uint8_t enable) {
  if (block.kind != TrojanKind::CounterTrojan)
    throw usage_error("counter_trojan_step on non-counter block");
  if (reset || !enable) {
    block.internal = {0, 0, 0, 0};
  } else if (in & 1u) {
    for (int i = 0; i < 4; ++i) {
      block.internal[i] ^= 1u;
      if (block.internal[i]) break;
    }
  }
  block.trigger = (block.internal[0] && block.internal[1] &&
                   block.internal[2] && block.internal[3])
                      ? 1
                      : 0;
  return {block, block.trigger};
}

// ---------------------------------------------------------------------------
// Whole designs
// ---------------------------------------------------------------------------

struct LogicDesign {
  BaseCircuit base;
  std::vector<TrojanBlock> trojans;
  int trojan_scale = 0;      // number of instantiated blocks
  int frequency_divider = 1;  // power of two; shifts trojan input bit indices
};

inline int log2_exact(int v) {
  if (v < 1 || (v & (v - 1)) != 0)
    throw config_error("frequency divider must be a power of two, got " +
                       std::to_string(v));
  int k = 0;
  while ((1 << k) < v) ++k;
  return k;
}

/// Builds a design with `scale` blocks fed from consecutive base bits starting
/// at input_offset + log2(frequency_divider). Comparator blocks take 4
/// consecutive bits each; shift register and counter blocks take one.
inline LogicDesign make_design(BaseCircuit base, TrojanKind kind, int scale,
                               int input_offset = 0, int frequency_divider = 1,
                               bool enable = true) {
  LogicDesign d;
  d.base = std::move(base);
  d.trojan_scale = scale;
  d.frequency_divider = frequency_divider;
  const int shift = log2_exact(frequency_divider);
  const int stride = (kind == TrojanKind::Comparator) ? 4 : 1;
  for (int b = 0; b < scale; ++b) {
    TrojanBlock blk;
    blk.kind = kind;
    blk.enable = enable ? 1 : 0;
    for (int i = 0; i < stride; ++i) {
      int bit = input_offset + shift + b * stride + i;
      if (bit < 0 || bit >= d.base.width)
        throw config_error("trojan input bit " + std::to_string(bit) +
                           " outside base width " +
                           std::to_string(d.base.width));
      blk.input_bits.push_back(bit);
    }
    d.trojans.push_back(std::move(blk));
  }
  return d;
}

inline LogicDesign make_trojan_free(BaseCircuit base) {
  LogicDesign d;
  d.base = std::move(base);
  return d;
}

// ---------------------------------------------------------------------------
// Switching activity
// ---------------------------------------------------------------------------

enum class PrimitiveKind { Register, Lut };

struct SwitchingProfile {
  std::map<std::string, std::uint64_t> toggle_counts;
  std::uint64_t window_cycles = 0;
  std::map<std::string, PrimitiveKind> primitive_kinds;
};

namespace detail {

inline std::string pad4(int v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d", v);
  return buf;
}

/// OR-reduction tree over n block triggers with 4-input nodes; at least one
/// node so the accumulated trigger is always a physical LUT output.
inline int accumulate_tree_nodes(int n) {
  if (n <= 0) return 0;
  int total = 0;
  int count = n;
  do {
    int nodes = (count + 3) / 4;
    total += nodes;
    count = nodes;
  } while (count > 1);
  return total;
}

}  // namespace detail

/// Deterministic cell order shared by activity profiling and placement:
/// base registers first, then per-block cells, then the accumulate tree.
inline std::vector<std::pair<std::string, PrimitiveKind>> primitive_order(
    const LogicDesign& design) {
  std::vector<std::pair<std::string, PrimitiveKind>> order;
  for (int k = 0; k < design.base.width; ++k)
    order.emplace_back("base.r" + detail::pad4(k), PrimitiveKind::Register);
  for (std::size_t b = 0; b < design.trojans.size(); ++b) {
    const std::string id = "t" + detail::pad4(static_cast<int>(b));
    const TrojanBlock& blk = design.trojans[b];
    if (blk.kind != TrojanKind::Comparator)
      for (int j = 0; j < 4; ++j)
        order.emplace_back(id + ".r" + std::to_string(j),
                           PrimitiveKind::Register);
    if (blk.kind == TrojanKind::CounterTrojan)
      for (int j = 0; j < 4; ++j)
        order.emplace_back(id + ".inc" + std::to_string(j),
                           PrimitiveKind::Lut);
    order.emplace_back(id + ".trig", PrimitiveKind::Lut);
  }
  const int tree =
      detail::accumulate_tree_nodes(static_cast<int>(design.trojans.size()));
  for (int n = 0; n < tree; ++n)
    order.emplace_back("acc.l" + detail::pad4(n), PrimitiveKind::Lut);
  return order;
}

namespace detail {

/// Evaluates every primitive output for the current design state.
/// Combinational outputs follow the post-edge register values.
inline void eval_outputs(const LogicDesign& design,
                         const std::vector<TrojanBlock>& blocks,
                         std::vector<std::uint8_t>& out) {
  out.clear();
  for (int k = 0; k < design.base.width; ++k)
    out.push_back(design.base.state[static_cast<std::size_t>(k)] & 1u);
  std::vector<std::uint8_t> triggers;
  for (const TrojanBlock& blk : blocks) {
    std::uint8_t trig = 0;
    if (blk.kind == TrojanKind::Comparator) {
      std::array<std::uint8_t, 4> in{};
      for (int i = 0; i < 4; ++i)
        in[static_cast<std::size_t>(i)] =
            design.base.state[static_cast<std::size_t>(blk.input_bits[i])];
      trig = comparator_trigger(in, blk.enable);
    } else {
      for (int j = 0; j < 4; ++j) out.push_back(blk.internal[j] & 1u);
      if (blk.kind == TrojanKind::CounterTrojan) {
        // Increment LUT outputs: combinational next-count proposal.
        std::array<std::uint8_t, 4> next = blk.internal;
        std::uint8_t in =
            design.base.state[static_cast<std::size_t>(blk.input_bits[0])];
        if (!blk.enable) {
          next = {0, 0, 0, 0};
        } else if (in) {
          for (int i = 0; i < 4; ++i) {
            next[i] ^= 1u;
            if (next[i]) break;
          }
        }
        for (int j = 0; j < 4; ++j) out.push_back(next[j] & 1u);
      }
      trig = (blk.internal[0] && blk.internal[1] && blk.internal[2] &&
              blk.internal[3])
                 ? 1
                 : 0;
    }
    out.push_back(trig);
    triggers.push_back(trig);
  }
  // Accumulate tree, level by level, 4-input OR nodes.
  std::vector<std::uint8_t> level = triggers;
  if (!level.empty()) {
    do {
      std::vector<std::uint8_t> next_level;
      for (std::size_t i = 0; i < level.size(); i += 4) {
        std::uint8_t v = 0;
        for (std::size_t j = i; j < level.size() && j < i + 4; ++j)
          v |= level[j];
        out.push_back(v);
        next_level.push_back(v);
      }
      level = std::move(next_level);
    } while (level.size() > 1);
  }
}

}  // namespace detail

/// Steps the whole design window_cycles clocks from its seed state and counts
/// output transitions per primitive. Trojan registers sample the pre-edge
/// base state; combinational outputs are evaluated post-edge.
inline SwitchingProfile simulate_activity(const LogicDesign& design,
                                          std::uint64_t window_cycles) {
  if (window_cycles < 1) throw config_error("window_cycles must be >= 1");
  for (const TrojanBlock& blk : design.trojans)
    for (int bit : blk.input_bits)
      if (bit < 0 || bit >= design.base.width)
        throw config_error("trojan input bit outside base state");

  const auto order = primitive_order(design);
  LogicDesign cur = design;
  std::vector<std::uint8_t> prev, now;
  detail::eval_outputs(cur, cur.trojans, prev);
  std::vector<std::uint64_t> toggles(order.size(), 0);

  for (std::uint64_t cycle = 0; cycle < window_cycles; ++cycle) {
    const Bits old_base = cur.base.state;
    cur.base.state = base_step(cur.base);
    for (TrojanBlock& blk : cur.trojans) {
      if (blk.kind == TrojanKind::Comparator) continue;
      const std::uint8_t in =
          old_base[static_cast<std::size_t>(blk.input_bits[0])];
      blk = (blk.kind == TrojanKind::ShiftRegister)
                ? shiftreg_step(std::move(blk), in, 0, blk.enable).block
                : counter_trojan_step(std::move(blk), in, 0, blk.enable).block;
    }
    detail::eval_outputs(cur, cur.trojans, now);
    for (std::size_t i = 0; i < now.size(); ++i)
      toggles[i] += (now[i] != prev[i]) ? 1 : 0;
    prev.swap(now);
  }

  SwitchingProfile profile;
  profile.window_cycles = window_cycles;
  for (std::size_t i = 0; i < order.size(); ++i) {
    profile.toggle_counts[order[i].first] = toggles[i];
    profile.primitive_kinds[order[i].first] = order[i].second;
  }
  return profile;
}

// ---------------------------------------------------------------------------
// Design description (line-oriented key=value; grammar in the README)
// ---------------------------------------------------------------------------

inline bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw config_error("expected boolean, got '" + v + "'");
}

/// Builds a LogicDesign from flat key=value pairs:
///   base.kind, base.width, base.taps, base.seed,
///   trojan.kind, trojan.scale, trojan.input_offset,
///   trojan.frequency_divider, trojan.enable
inline LogicDesign design_from_kv(const std::map<std::string, std::string>& kv) {
  auto get = [&](const std::string& key, const std::string& fallback) {
    auto it = kv.find(key);
    return it == kv.end() ? fallback : it->second;
  };
  const std::string base_kind = get("base.kind", "counter");
  const int width = std::stoi(get("base.width", "200"));
  BaseCircuit base;
  if (base_kind == "counter") {
    base = make_counter(width);
  } else if (base_kind == "lfsr") {
    std::vector<int> taps;
    const std::string taps_str = get("base.taps", "");
    if (!taps_str.empty()) {
      std::size_t pos = 0;
      while (pos < taps_str.size()) {
        std::size_t comma = taps_str.find(',', pos);
        if (comma == std::string::npos) comma = taps_str.size();
        taps.push_back(std::stoi(taps_str.substr(pos, comma - pos)));
        pos = comma + 1;
      }
    }
    base = make_lfsr(width, std::move(taps));
  } else {
    throw config_error("unknown base kind '" + base_kind + "'");
  }
  const std::string seed_str = get("base.seed", "");
  if (!seed_str.empty()) {
    base.state = bits_from_u64(std::stoull(seed_str), width);
    if (base.kind == BaseKind::Lfsr && bits_to_u64(base.state) == 0)
      throw config_error("lfsr seed must be nonzero");
  }

  const std::string tk = get("trojan.kind", "none");
  if (tk == "none" || tk.empty()) return make_trojan_free(std::move(base));
  TrojanKind kind;
  if (tk == "comparator") kind = TrojanKind::Comparator;
  else if (tk == "shift_register") kind = TrojanKind::ShiftRegister;
  else if (tk == "counter") kind = TrojanKind::CounterTrojan;
  else throw config_error("unknown trojan kind '" + tk + "'");
  return make_design(std::move(base), kind, std::stoi(get("trojan.scale", "1")),
                     std::stoi(get("trojan.input_offset", "0")),
                     std::stoi(get("trojan.frequency_divider", "1")),
                     parse_bool(get("trojan.enable", "true")));
}

}  // namespace qdmsim
