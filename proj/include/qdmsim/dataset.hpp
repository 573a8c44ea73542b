#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include "qdmsim/errors.hpp"
#include "qdmsim/field.hpp"
#include "qdmsim/image.hpp"
#include "qdmsim/layout.hpp"
#include "qdmsim/logicsim.hpp"
#include "qdmsim/rng.hpp"

namespace qdmsim {

enum class FrameRole : std::uint32_t { Test = 0, Base = 1 };

struct Frame {
  VectorFieldImage image;
  std::uint32_t index = 0;  // acquisition order within the configuration
  FrameRole role = FrameRole::Test;
  std::uint32_t chip_id = 0;        // ground truth, reporting only
  std::uint32_t config_ordinal = 0;  // acquisition session
};

struct CaptureProtocol {
  int test_frames = 80;
  int base_frames = 20;
  int base_every = 4;  // one base frame after every N test frames
};

/// Environmental drift: per-channel random-walk uniform offset plus a
/// random-walk linear gradient across the image.
struct DriftSpec {
  bool enabled = true;
  double offset_step = 5e-4;    // µT per acquisition step
  double gradient_step = 5e-4;  // µT edge-to-edge per acquisition step
};

/// Die/grid parameters shared by every configuration of one experiment.
struct SceneParams {
  Rect pblock{650.0, 1300.0, 1650.0, 2300.0};
  double cell_pitch = 10.0;
  PowerGridSpec grid;
  std::map<PrimitiveKind, double> weights{{PrimitiveKind::Register, 2.0},
                                          {PrimitiveKind::Lut, 1.0}};
  std::uint64_t window_cycles = 1u << 16;
  std::uint64_t placement_seed = 1;
};

struct ChipConfig {
  LogicDesign design;
  std::uint32_t chip_id = 0;
};

struct GenerationSpec {
  SceneParams scene;
  ImageSpec image;
  CaptureProtocol protocol;
  double noise_sigma = -1.0;  // <0: take calibrate_noise(image, grid)
  double noise_floor_ua = 0.1;
  DriftSpec drift;
};

struct Dataset {
  std::vector<Frame> frames;
  ImageSpec spec;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> manifest;
};

/// The full forward model for one configuration: simulate switching, place,
/// convert to currents, solve the grid, render the DC-average field.
inline VectorFieldImage clean_field_for(const LogicDesign& design,
                                        const SceneParams& scene,
                                        const ImageSpec& image) {
  const SwitchingProfile profile =
      simulate_activity(design, scene.window_cycles);
  const Placement placement = place_design(design, scene.pblock,
                                           scene.placement_seed,
                                           scene.cell_pitch);
  const CellCurrentMap cells = activity_to_currents(profile, scene.weights);
  const std::vector<WireSegment> segments =
      solve_rail_currents(cells, placement, scene.grid);
  ImageSpec spec = image;
  spec.rail_plane_z = scene.grid.rail_height;
  return render_field_image(segments, spec);
}

namespace detail {

inline std::vector<FrameRole> frame_sequence(const CaptureProtocol& p) {
  if (p.test_frames < 1 || p.base_frames < 1)
    throw protocol_error("protocol frame counts must be >= 1");
  std::vector<FrameRole> seq;
  int tests = 0, bases = 0, run = 0;
  while (tests < p.test_frames || bases < p.base_frames) {
    if (tests < p.test_frames) {
      seq.push_back(FrameRole::Test);
      ++tests;
      ++run;
    }
    if (bases < p.base_frames && (run == p.base_every || tests == p.test_frames)) {
      seq.push_back(FrameRole::Base);
      ++bases;
      run = 0;
    }
  }
  return seq;
}

struct DriftState {
  std::array<double, 3> offset{};
  std::array<double, 3> grad_row{};
  std::array<double, 3> grad_col{};
};

/// Walk trajectory over acquisition slots; step t is drawn from the stream
/// derived from (seed, config, t) so any frame is reproducible in isolation.
inline std::vector<DriftState> drift_trajectory(const Rng& config_rng,
                                                const DriftSpec& drift,
                                                std::size_t n_frames) {
  std::vector<DriftState> states(n_frames);
  DriftState cur{};
  for (std::size_t t = 0; t < n_frames; ++t) {
    if (drift.enabled) {
      Rng step = config_rng.derive("drift").derive(t);
      for (int c = 0; c < 3; ++c) {
        cur.offset[c] += drift.offset_step * step.next_gaussian();
        cur.grad_row[c] += drift.gradient_step * step.next_gaussian();
        cur.grad_col[c] += drift.gradient_step * step.next_gaussian();
      }
    }
    states[t] = cur;
  }
  return states;
}

inline void add_drift(VectorFieldImage& img, const DriftState& d) {
  const int h = img.height, w = img.width;
  for (int i = 0; i < h; ++i) {
    const double fy = h > 1 ? static_cast<double>(i) / (h - 1) - 0.5 : 0.0;
    for (int j = 0; j < w; ++j) {
      const double fx = w > 1 ? static_cast<double>(j) / (w - 1) - 0.5 : 0.0;
      for (int c = 0; c < 3 && c < img.channels; ++c)
        img.at(i, j, c) += d.offset[c] + d.grad_row[c] * fy + d.grad_col[c] * fx;
    }
  }
}

inline void add_noise(VectorFieldImage& img, double sigma, Rng rng) {
  if (sigma <= 0) return;
  for (double& v : img.data) v += sigma * rng.next_gaussian();
}

}  // namespace detail

/// Renders each configuration's clean DC field once, then emits the capture
/// sequence: Test frames = clean + drift + noise, Base frames (all switching
/// logic off) = drift + noise. Bit-identical for a fixed seed.
inline Dataset generate_dataset(const std::vector<ChipConfig>& configs,
                                const GenerationSpec& gen, std::uint64_t seed) {
  Dataset ds;
  ds.spec = gen.image;
  ds.spec.rail_plane_z = gen.scene.grid.rail_height;
  ds.seed = seed;
  ds.noise_sigma = gen.noise_sigma >= 0
                       ? gen.noise_sigma
                       : calibrate_noise(gen.image, gen.scene.grid,
                                         gen.noise_floor_ua);
  const Rng root(seed);
  const auto sequence = detail::frame_sequence(gen.protocol);
  for (std::size_t k = 0; k < configs.size(); ++k) {
    const VectorFieldImage clean =
        clean_field_for(configs[k].design, gen.scene, gen.image);
    const Rng config_rng = root.derive("config", k);
    const auto drift = detail::drift_trajectory(config_rng, gen.drift,
                                                sequence.size());
    for (std::size_t t = 0; t < sequence.size(); ++t) {
      Frame frame;
      frame.index = static_cast<std::uint32_t>(t);
      frame.role = sequence[t];
      frame.chip_id = configs[k].chip_id;
      frame.config_ordinal = static_cast<std::uint32_t>(k);
      frame.image = (frame.role == FrameRole::Test)
                        ? clean
                        : VectorFieldImage(gen.image.height_px,
                                           gen.image.width_px, 3);
      detail::add_drift(frame.image, drift[t]);
      detail::add_noise(frame.image, ds.noise_sigma,
                        config_rng.derive("noise").derive(t));
      ds.frames.push_back(std::move(frame));
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Container: "QDMSIM1\0", u32 LE height/width/channels/frame_count, then per
// frame u32 role, u32 chip_id, u32 index and H*W*3 float32 row-major
// channel-fastest.
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32(const char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

inline void put_f32(std::string& out, float f) {
  std::uint32_t v;
  std::memcpy(&v, &f, 4);
  put_u32(out, v);
}

inline float get_f32(const char* p) {
  const std::uint32_t v = get_u32(p);
  float f;
  std::memcpy(&f, &v, 4);
  return f;
}

}  // namespace detail

inline std::string encode_container(const std::vector<Frame>& frames,
                                    const ImageSpec& spec) {
  std::string out;
  out.append("QDMSIM1", 7);
  out.push_back('\0');
  detail::put_u32(out, static_cast<std::uint32_t>(spec.height_px));
  detail::put_u32(out, static_cast<std::uint32_t>(spec.width_px));
  detail::put_u32(out, 3);
  detail::put_u32(out, static_cast<std::uint32_t>(frames.size()));
  for (const Frame& f : frames) {
    if (f.image.height != spec.height_px || f.image.width != spec.width_px ||
        f.image.channels != 3)
      throw shape_error("frame shape does not match container header");
    detail::put_u32(out, static_cast<std::uint32_t>(f.role));
    detail::put_u32(out, f.chip_id);
    detail::put_u32(out, f.index);
    for (double v : f.image.data) detail::put_f32(out, static_cast<float>(v));
  }
  return out;
}

inline void write_container(const std::string& path,
                            const std::vector<Frame>& frames,
                            const ImageSpec& spec) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("cannot open '" + path + "' for writing");
  const std::string bytes = encode_container(frames, spec);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw io_error("write failed for '" + path + "'");
}

struct LoadedContainer {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<Frame> frames;
};

inline LoadedContainer decode_container(const std::string& bytes) {
  if (bytes.size() < 24 || bytes.compare(0, 7, "QDMSIM1") != 0 || bytes[7] != '\0')
    throw io_error("not a QDMSIM1 container");
  LoadedContainer lc;
  lc.height = static_cast<int>(detail::get_u32(bytes.data() + 8));
  lc.width = static_cast<int>(detail::get_u32(bytes.data() + 12));
  lc.channels = static_cast<int>(detail::get_u32(bytes.data() + 16));
  const std::uint32_t count = detail::get_u32(bytes.data() + 20);
  if (lc.channels != 3) throw io_error("container must have 3 channels");
  const std::size_t pixels =
      static_cast<std::size_t>(lc.height) * lc.width * lc.channels;
  std::size_t pos = 24;
  for (std::uint32_t k = 0; k < count; ++k) {
    if (bytes.size() < pos + 12 + 4 * pixels)
      throw io_error("container truncated");
    Frame f;
    f.role = static_cast<FrameRole>(detail::get_u32(bytes.data() + pos));
    f.chip_id = detail::get_u32(bytes.data() + pos + 4);
    f.index = detail::get_u32(bytes.data() + pos + 8);
    pos += 12;
    f.image = VectorFieldImage(lc.height, lc.width, lc.channels);
    for (std::size_t i = 0; i < pixels; ++i, pos += 4)
      f.image.data[i] = detail::get_f32(bytes.data() + pos);
    lc.frames.push_back(std::move(f));
  }
  return lc;
}

inline LoadedContainer read_container(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("cannot open '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(is)),
                    std::istreambuf_iterator<char>());
  return decode_container(bytes);
}

inline void write_manifest(const std::string& path,
                           const std::map<std::string, std::string>& kv) {
  std::ofstream os(path);
  if (!os) throw io_error("cannot open '" + path + "' for writing");
  for (const auto& [k, v] : kv) os << k << " = " << v << "\n";
}

inline std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("cannot open '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(is)),
                    std::istreambuf_iterator<char>());
  return fnv1a(bytes);
}

}  // namespace qdmsim
