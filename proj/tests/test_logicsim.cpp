#include "qdmsim/logicsim.hpp"

#include <gtest/gtest.h>

#include <set>

#include "qdmsim/rng.hpp"

using namespace qdmsim;

TEST(CounterStep, BinaryIncrement) {
  EXPECT_EQ(bits_to_u64(counter_step(bits_from_u64(0b0111, 4))), 0b1000u);
  EXPECT_EQ(bits_to_u64(counter_step(bits_from_u64(0b1111, 4))), 0u);  // wrap
}

TEST(CounterStep, BitToggleLaw) {
  // over 2^m cycles, bit k toggles 2^(m-k) times
  const int m = 10;
  Bits state = bits_from_u64(0, 16);
  std::vector<std::uint64_t> toggles(16, 0);
  for (int c = 0; c < (1 << m); ++c) {
    Bits next = counter_step(state);
    for (int k = 0; k < 16; ++k)
      if (next[k] != state[k]) ++toggles[k];
    state = next;
  }
  for (int k = 0; k <= m; ++k)
    EXPECT_EQ(toggles[k], static_cast<std::uint64_t>(1ull << (m - k))) << "bit " << k;
}

TEST(LfsrStep, AllZeroFixedPoint) {
  const Bits zero(8, 0);
  EXPECT_EQ(lfsr_step(zero, primitive_taps(8)), zero);
}

TEST(LfsrStep, InvalidTap) {
  EXPECT_THROW(lfsr_step(Bits(4, 1), {5}), config_error);
  EXPECT_THROW(lfsr_step(Bits(4, 1), {}), config_error);
}

namespace {

// Enumeration oracle: walk successor states until the seed returns.
std::uint64_t lfsr_period(int width, const std::vector<int>& taps) {
  Bits seed(width, 0);
  seed[0] = 1;
  Bits s = lfsr_step(seed, taps);
  std::uint64_t period = 1;
  while (s != seed) {
    s = lfsr_step(s, taps);
    ++period;
    if (period > (1ull << width)) break;  // runaway guard
  }
  return period;
}

}  // namespace

TEST(LfsrStep, PrimitivePeriods) {
  EXPECT_EQ(lfsr_period(4, primitive_taps(4)), 15u);
  EXPECT_EQ(lfsr_period(7, primitive_taps(7)), 127u);
}

TEST(LfsrStep, ShippedTapsMaximalUpTo16) {
  for (int w : {2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16})
    EXPECT_EQ(lfsr_period(w, primitive_taps(w)), (1ull << w) - 1) << "width " << w;
}

TEST(ComparatorTrigger, PseudocodeCases) {
  EXPECT_EQ(comparator_trigger({1, 1, 1, 1}, 1), 1);
  EXPECT_EQ(comparator_trigger({1, 1, 1, 1}, 0), 0);
  EXPECT_EQ(comparator_trigger({1, 0, 1, 1}, 1), 0);
}

TEST(ComparatorTrigger, Stateless) {
  for (int v = 0; v < 16; ++v) {
    std::array<std::uint8_t, 4> in{
        static_cast<std::uint8_t>(v & 1), static_cast<std::uint8_t>((v >> 1) & 1),
        static_cast<std::uint8_t>((v >> 2) & 1),
        static_cast<std::uint8_t>((v >> 3) & 1)};
    EXPECT_EQ(comparator_trigger(in, 1), comparator_trigger(in, 1));
  }
}

TEST(ShiftRegStep, FourConsecutiveOnes) {
  TrojanBlock b;
  b.kind = TrojanKind::ShiftRegister;
  std::uint8_t trig = 0;
  for (int i = 0; i < 4; ++i) {
    auto r = shiftreg_step(b, 1, 0, 1);
    b = r.block;
    trig = r.trigger;
    if (i < 3) EXPECT_EQ(trig, 0);
  }
  EXPECT_EQ(trig, 1);
}

TEST(ShiftRegStep, ResetZeroes) {
  TrojanBlock b;
  b.kind = TrojanKind::ShiftRegister;
  b.internal = {1, 1, 1, 0};
  auto r = shiftreg_step(b, 0, 1, 1);
  EXPECT_EQ(r.block.internal, (std::array<std::uint8_t, 4>{0, 0, 0, 0}));
  EXPECT_EQ(r.trigger, 0);
}

TEST(ShiftRegStep, BrokenRun) {
  TrojanBlock b;
  b.kind = TrojanKind::ShiftRegister;
  std::uint8_t trig = 0;
  for (std::uint8_t in : {1, 1, 0, 1}) {
    auto r = shiftreg_step(b, in, 0, 1);
    b = r.block;
    trig = r.trigger;
  }
  EXPECT_EQ(trig, 0);
}

TEST(ShiftRegStep, WrongKind) {
  TrojanBlock b;
  b.kind = TrojanKind::Comparator;
  EXPECT_THROW(shiftreg_step(b, 1, 0, 1), usage_error);
}

TEST(CounterTrojanStep, TriggersOnFifteenth) {
  TrojanBlock b;
  b.kind = TrojanKind::CounterTrojan;
  std::uint8_t trig = 0;
  for (int i = 0; i < 15; ++i) {
    auto r = counter_trojan_step(b, 1, 0, 1);
    b = r.block;
    trig = r.trigger;
    if (i < 14) EXPECT_EQ(trig, 0) << "clock " << i;
  }
  EXPECT_EQ(trig, 1);
  // the clock after trigger wraps the count to zero
  auto r = counter_trojan_step(b, 1, 0, 1);
  EXPECT_EQ(r.block.internal, (std::array<std::uint8_t, 4>{0, 0, 0, 0}));
  EXPECT_EQ(r.trigger, 0);
}

TEST(CounterTrojanStep, ResetZeroes) {
  TrojanBlock b;
  b.kind = TrojanKind::CounterTrojan;
  b.internal = {1, 0, 1, 0};
  auto r = counter_trojan_step(b, 0, 1, 1);
  EXPECT_EQ(r.block.internal, (std::array<std::uint8_t, 4>{0, 0, 0, 0}));
}

TEST(CounterTrojanStep, WrongKind) {
  TrojanBlock b;
  b.kind = TrojanKind::ShiftRegister;
  EXPECT_THROW(counter_trojan_step(b, 1, 0, 1), usage_error);
}

// ---------------------------------------------------------------------------
// Independent pseudocode interpreters (reset branch has priority; the shift
// or count happens only when neither reset nor not-enable is asserted).
// These deliberately mirror the published register-transfer pseudocode
// statement by statement rather than reusing the library implementations.
// ---------------------------------------------------------------------------

namespace oracle {

struct ShiftRegState {
  int reg[4] = {0, 0, 0, 0};
};

int shiftreg_clock(ShiftRegState& st, int in, int reset, int enable) {
  if (reset || !enable) {
    for (int i = 0; i < 4; ++i) st.reg[i] = 0;
  } else {
    st.reg[3] = st.reg[2];
    st.reg[2] = st.reg[1];
    st.reg[1] = st.reg[0];
    st.reg[0] = in;
  }
  return (st.reg[0] == 1 && st.reg[1] == 1 && st.reg[2] == 1 && st.reg[3] == 1)
             ? 1
             : 0;
}

struct CounterState {
  int count = 0;  // 4-bit
};

int counter_clock(CounterState& st, int in, int reset, int enable) {
  if (reset || !enable) st.count = 0;
  else if (in == 1) st.count = (st.count + 1) & 0xf;
  return st.count == 0xf ? 1 : 0;
}

int comparator(int in0, int in1, int in2, int in3, int enable) {
  return (enable == 1 && in0 == 1 && in1 == 1 && in2 == 1 && in3 == 1) ? 1 : 0;
}

}  // namespace oracle

TEST(TrojanOracle, RandomSequencesMatchPseudocode) {
  Rng rng(20240811);
  const int kSequences = 500;
  const int kSteps = 64;
  for (int s = 0; s < kSequences; ++s) {
    TrojanBlock sr;
    sr.kind = TrojanKind::ShiftRegister;
    TrojanBlock ct;
    ct.kind = TrojanKind::CounterTrojan;
    oracle::ShiftRegState osr;
    oracle::CounterState oct;
    for (int t = 0; t < kSteps; ++t) {
      const std::uint8_t in = rng.next_below(2);
      const std::uint8_t reset = rng.next_below(8) == 0;
      const std::uint8_t enable = rng.next_below(8) != 0;
      auto r1 = shiftreg_step(sr, in, reset, enable);
      sr = r1.block;
      EXPECT_EQ(r1.trigger, oracle::shiftreg_clock(osr, in, reset, enable));
      for (int i = 0; i < 4; ++i) EXPECT_EQ(sr.internal[i], osr.reg[i]);
      auto r2 = counter_trojan_step(ct, in, reset, enable);
      ct = r2.block;
      EXPECT_EQ(r2.trigger, oracle::counter_clock(oct, in, reset, enable));
      std::array<std::uint8_t, 4> bits{};
      for (int i = 0; i < 4; ++i)
        bits[i] = static_cast<std::uint8_t>((oct.count >> i) & 1);
      EXPECT_EQ(ct.internal, bits);
      std::array<std::uint8_t, 4> cin{};
      for (int i = 0; i < 4; ++i) cin[i] = rng.next_below(2);
      EXPECT_EQ(comparator_trigger(cin, enable),
                oracle::comparator(cin[0], cin[1], cin[2], cin[3], enable));
    }
  }
}

// ---------------------------------------------------------------------------
// simulate_activity
// ---------------------------------------------------------------------------

TEST(SimulateActivity, CounterToggleCounts) {
  LogicDesign d = make_trojan_free(make_counter(16));
  SwitchingProfile p = simulate_activity(d, 1 << 10);
  EXPECT_EQ(p.toggle_counts.at("base.r0003"), 1u << 7);
  EXPECT_EQ(p.toggle_counts.at("base.r0000"), 1u << 10);
}

TEST(SimulateActivity, DisabledTrojanIsSilent) {
  LogicDesign d = make_design(make_counter(32), TrojanKind::CounterTrojan, 2,
                              0, 1, /*enable=*/false);
  SwitchingProfile p = simulate_activity(d, 2048);
  for (const auto& [id, count] : p.toggle_counts)
    if (id.rfind("base.", 0) != 0)
      EXPECT_EQ(count, 0u) << id;
}

TEST(SimulateActivity, LfsrFullPeriodMatchesEnumeration) {
  LogicDesign d = make_trojan_free(make_lfsr(4));
  const std::uint64_t period = 15;
  SwitchingProfile p = simulate_activity(d, period);
  // Enumeration oracle: replay the state sequence directly.
  Bits s = d.base.state;
  std::vector<std::uint64_t> toggles(4, 0);
  for (std::uint64_t c = 0; c < period; ++c) {
    Bits next = lfsr_step(s, d.base.taps);
    for (int k = 0; k < 4; ++k)
      if (next[k] != s[k]) ++toggles[k];
    s = next;
  }
  for (int k = 0; k < 4; ++k)
    EXPECT_EQ(p.toggle_counts.at("base.r000" + std::to_string(k)), toggles[k]);
  // every bit toggles roughly half the cycles over the full period
  for (int k = 0; k < 4; ++k) {
    EXPECT_GE(toggles[k], 6u);
    EXPECT_LE(toggles[k], 9u);
  }
}

TEST(SimulateActivity, Deterministic) {
  LogicDesign d = make_design(make_lfsr(16), TrojanKind::ShiftRegister, 4);
  SwitchingProfile a = simulate_activity(d, 4096);
  SwitchingProfile b = simulate_activity(d, 4096);
  EXPECT_EQ(a.toggle_counts, b.toggle_counts);
}

TEST(SimulateActivity, TrojanNeverPerturbsBase) {
  LogicDesign tf = make_trojan_free(make_counter(24));
  LogicDesign ti = make_design(make_counter(24), TrojanKind::CounterTrojan, 4);
  SwitchingProfile a = simulate_activity(tf, 4096);
  SwitchingProfile b = simulate_activity(ti, 4096);
  for (const auto& [id, count] : a.toggle_counts)
    EXPECT_EQ(b.toggle_counts.at(id), count) << id;
}

TEST(SimulateActivity, FrequencyDividerHalvesInputToggles) {
  // feeding from bit k+1 instead of bit k halves the trojan input toggle
  // count over any window that is a multiple of 2^(k+1); the shift register
  // trojan's bit 0 replays the input one clock late, so its toggles halve too.
  const std::uint64_t window = 1 << 12;
  LogicDesign d1 = make_design(make_counter(32), TrojanKind::ShiftRegister, 1,
                               0, 1);
  LogicDesign d2 = make_design(make_counter(32), TrojanKind::ShiftRegister, 1,
                               0, 2);
  SwitchingProfile p1 = simulate_activity(d1, window);
  SwitchingProfile p2 = simulate_activity(d2, window);
  const std::uint64_t in1 = p1.toggle_counts.at("base.r0000");
  const std::uint64_t in2 = p2.toggle_counts.at("base.r0001");
  EXPECT_EQ(in1, 2 * in2);
  // the register replaying the input picks up a one-clock startup transient
  const std::uint64_t r1 = p1.toggle_counts.at("t0000.r0");
  const std::uint64_t r2 = p2.toggle_counts.at("t0000.r0");
  EXPECT_NEAR(static_cast<double>(r1), 2.0 * static_cast<double>(r2), 1.5);
}

TEST(SimulateActivity, ComparatorStructure) {
  LogicDesign d = make_design(make_counter(64), TrojanKind::Comparator, 8);
  const auto order = primitive_order(d);
  int luts = 0, regs = 0;
  for (const auto& [id, kind] : order)
    (kind == PrimitiveKind::Lut ? luts : regs)++;
  // 8 compare LUTs + 3-node accumulate tree (8 -> 2 -> 1), no trojan registers
  EXPECT_EQ(regs, 64);
  EXPECT_EQ(luts, 8 + 3);
}

TEST(MakeDesign, InputBitValidation) {
  EXPECT_THROW(make_design(make_counter(8), TrojanKind::Comparator, 4),
               config_error);  // needs 16 bits
  EXPECT_THROW(make_design(make_counter(8), TrojanKind::ShiftRegister, 4, 0, 64),
               config_error);  // divider shifts out of range
  EXPECT_THROW(make_design(make_counter(8), TrojanKind::ShiftRegister, 1, 0, 3),
               config_error);  // divider must be a power of two
}

TEST(DesignFromKv, RoundTrip) {
  std::map<std::string, std::string> kv{
      {"base.kind", "lfsr"},     {"base.width", "167"},
      {"trojan.kind", "counter"}, {"trojan.scale", "8"},
      {"trojan.enable", "true"},
  };
  LogicDesign d = design_from_kv(kv);
  EXPECT_EQ(d.base.kind, BaseKind::Lfsr);
  EXPECT_EQ(d.base.width, 167);
  EXPECT_EQ(d.base.taps, primitive_taps(167));
  EXPECT_EQ(d.trojans.size(), 8u);
  EXPECT_EQ(d.trojans[0].kind, TrojanKind::CounterTrojan);
}

TEST(DesignFromKv, Errors) {
  EXPECT_THROW(design_from_kv({{"base.kind", "mystery"}}), config_error);
  EXPECT_THROW(design_from_kv({{"base.kind", "lfsr"},
                               {"base.width", "8"},
                               {"base.seed", "0"}}),
               config_error);
}
