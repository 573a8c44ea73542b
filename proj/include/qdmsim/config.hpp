#pragma once

#include <cctype>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "qdmsim/autoencoder.hpp"
#include "qdmsim/dataset.hpp"
#include "qdmsim/errors.hpp"
#include "qdmsim/layout.hpp"
#include "qdmsim/logicsim.hpp"
#include "qdmsim/preprocess.hpp"

namespace qdmsim {

/// Flat key=value text with '#' comments; keys use dotted section prefixes.
inline std::map<std::string, std::string> parse_kv_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
  };
  while (std::getline(is, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw parse_error("expected key = value", lineno,
                        static_cast<int>(line.size()) + 1);
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key.empty())
      throw parse_error("empty key", lineno, 1);
    if (val.empty())
      throw parse_error("empty value for key '" + key + "'", lineno,
                        static_cast<int>(eq) + 2);
    kv[key] = val;
  }
  return kv;
}

inline std::map<std::string, std::string> parse_kv_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw io_error("cannot open '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(is)),
                   std::istreambuf_iterator<char>());
  return parse_kv_text(text);
}

enum class ReduceMethod { Pca, Cnn, Both };

struct CnnConfig {
  std::string arch = "default";  // default | trusthub
  TrainConfig train;
  std::uint64_t seed_offset = 101;  // model init stream within the global seed
};

/// Everything one study needs, fully explicit after default filling; the
/// resolved form is serialized into every output directory.
struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string output_dir = "out";
  std::vector<std::map<std::string, std::string>> designs;  // design.N.* keys
  GenerationSpec generation;
  PreprocessConfig preprocess;
  ReduceMethod method = ReduceMethod::Both;
  int cluster_min_pts = 3;
  CnnConfig cnn;
  double train_fraction = 0.67;  // train+validation share, per configuration
  bool odmr_pixel_extraction = false;
  double odmr_spectrum_noise = 1.5e-3;
  std::array<double, 3> odmr_bias_ut{2000.0, 1600.0, 700.0};
  int threads = 1;
};

namespace detail {

inline double to_double(const std::string& v, const std::string& key) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw config_error("key '" + key + "': expected number, got '" + v + "'");
  }
}

inline int to_int(const std::string& v, const std::string& key) {
  try {
    std::size_t used = 0;
    const int i = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    throw config_error("key '" + key + "': expected integer, got '" + v + "'");
  }
}

inline std::vector<double> to_doubles(const std::string& v,
                                      const std::string& key) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos < v.size()) {
    std::size_t comma = v.find(',', pos);
    if (comma == std::string::npos) comma = v.size();
    out.push_back(to_double(v.substr(pos, comma - pos), key));
    pos = comma + 1;
  }
  return out;
}

}  // namespace detail

inline ExperimentConfig experiment_from_kv(
    const std::map<std::string, std::string>& kv) {
  ExperimentConfig cfg;
  auto get = [&](const std::string& key) -> const std::string* {
    auto it = kv.find(key);
    return it == kv.end() ? nullptr : &it->second;
  };
  auto num = [&](const std::string& key, double fallback) {
    const std::string* v = get(key);
    return v ? detail::to_double(*v, key) : fallback;
  };
  auto integer = [&](const std::string& key, int fallback) {
    const std::string* v = get(key);
    return v ? detail::to_int(*v, key) : fallback;
  };
  auto flag = [&](const std::string& key, bool fallback) {
    const std::string* v = get(key);
    return v ? parse_bool(*v) : fallback;
  };

  if (const std::string* v = get("seed"))
    cfg.seed = std::stoull(*v);
  if (const std::string* v = get("output.dir")) cfg.output_dir = *v;

  // Designs: design.<n>.<subkey>
  for (int n = 0;; ++n) {
    const std::string prefix = "design." + std::to_string(n) + ".";
    std::map<std::string, std::string> sub;
    for (const auto& [k, v] : kv)
      if (k.rfind(prefix, 0) == 0) sub[k.substr(prefix.size())] = v;
    if (sub.empty()) break;
    cfg.designs.push_back(std::move(sub));
  }

  GenerationSpec& gen = cfg.generation;
  if (const std::string* v = get("layout.pblock")) {
    const auto r = detail::to_doubles(*v, "layout.pblock");
    if (r.size() != 4) throw config_error("layout.pblock needs x0,y0,x1,y1");
    gen.scene.pblock = Rect{r[0], r[1], r[2], r[3]};
  }
  gen.scene.cell_pitch = num("layout.cell_pitch_um", gen.scene.cell_pitch);
  gen.scene.window_cycles = static_cast<std::uint64_t>(
      num("logic.window_cycles", static_cast<double>(gen.scene.window_cycles)));
  gen.scene.placement_seed = static_cast<std::uint64_t>(
      num("layout.placement_seed", static_cast<double>(gen.scene.placement_seed)));
  gen.scene.grid.rail_pitch = num("grid.rail_pitch_um", gen.scene.grid.rail_pitch);
  gen.scene.grid.rail_height = num("grid.rail_height_um", gen.scene.grid.rail_height);
  if (const std::string* v = get("grid.pad_side")) {
    if (*v == "left") gen.scene.grid.pad_side = PadSide::Left;
    else if (*v == "right") gen.scene.grid.pad_side = PadSide::Right;
    else throw config_error("grid.pad_side must be left or right");
  }
  gen.scene.weights[PrimitiveKind::Register] =
      num("weights.register_ua", gen.scene.weights[PrimitiveKind::Register]);
  gen.scene.weights[PrimitiveKind::Lut] =
      num("weights.lut_ua", gen.scene.weights[PrimitiveKind::Lut]);

  gen.image.height_px = integer("image.height", gen.image.height_px);
  gen.image.width_px = integer("image.width", gen.image.width_px);
  gen.image.pixel_pitch = num("image.pixel_pitch_um", gen.image.pixel_pitch);
  gen.image.standoff = num("image.standoff_um", gen.image.standoff);
  if (const std::string* v = get("image.origin")) {
    const auto o = detail::to_doubles(*v, "image.origin");
    if (o.size() != 2) throw config_error("image.origin needs x,y");
    gen.image.origin = {o[0], o[1]};
  }

  if (const std::string* v = get("noise.sigma_ut"))
    gen.noise_sigma = (*v == "auto") ? -1.0 : detail::to_double(*v, "noise.sigma_ut");
  gen.noise_floor_ua = num("noise.floor_ua", gen.noise_floor_ua);
  gen.drift.enabled = flag("drift.enabled", gen.drift.enabled);
  gen.drift.offset_step = num("drift.offset_step_ut", gen.drift.offset_step);
  gen.drift.gradient_step = num("drift.gradient_step_ut", gen.drift.gradient_step);

  gen.protocol.test_frames = integer("protocol.test_frames", gen.protocol.test_frames);
  gen.protocol.base_frames = integer("protocol.base_frames", gen.protocol.base_frames);
  gen.protocol.base_every = integer("protocol.base_every", gen.protocol.base_every);

  cfg.preprocess.averaging_k = integer("preprocess.averaging_k", cfg.preprocess.averaging_k);
  cfg.preprocess.highpass_sigma =
      num("preprocess.highpass_sigma_px", cfg.preprocess.highpass_sigma);
  const double crop_h =
      num("preprocess.crop_height_fraction",
          cfg.preprocess.crop ? cfg.preprocess.crop->height_fraction : 1.0);
  const double crop_w =
      num("preprocess.crop_width_fraction",
          cfg.preprocess.crop ? cfg.preprocess.crop->width_fraction : 1.0);
  if (crop_h >= 1.0 && crop_w >= 1.0) cfg.preprocess.crop.reset();
  else cfg.preprocess.crop = CropSpec{crop_h, crop_w};
  cfg.preprocess.normalize = flag("preprocess.normalize", cfg.preprocess.normalize);

  if (const std::string* v = get("reduce.method")) {
    if (*v == "pca") cfg.method = ReduceMethod::Pca;
    else if (*v == "cnn") cfg.method = ReduceMethod::Cnn;
    else if (*v == "both") cfg.method = ReduceMethod::Both;
    else throw config_error("reduce.method must be pca, cnn or both");
  }
  cfg.cluster_min_pts = integer("cluster.min_pts", cfg.cluster_min_pts);
  cfg.train_fraction = num("reduce.train_fraction", cfg.train_fraction);

  if (const std::string* v = get("cnn.arch")) {
    if (*v != "default" && *v != "trusthub")
      throw config_error("cnn.arch must be default or trusthub");
    cfg.cnn.arch = *v;
  }
  cfg.cnn.train.batch_size = integer("cnn.batch_size", cfg.cnn.train.batch_size);
  cfg.cnn.train.learning_rate = num("cnn.learning_rate", cfg.cnn.train.learning_rate);
  cfg.cnn.train.momentum = num("cnn.momentum", cfg.cnn.train.momentum);
  cfg.cnn.train.max_epochs = integer("cnn.max_epochs", cfg.cnn.train.max_epochs);
  cfg.cnn.train.check_interval = integer("cnn.check_interval", cfg.cnn.train.check_interval);

  cfg.odmr_pixel_extraction = flag("odmr.pixel_extraction", cfg.odmr_pixel_extraction);
  cfg.odmr_spectrum_noise = num("odmr.spectrum_noise", cfg.odmr_spectrum_noise);
  cfg.threads = integer("threads", cfg.threads);
  cfg.cnn.train.threads = cfg.threads;
  return cfg;
}

inline ExperimentConfig load_experiment(const std::string& path) {
  return experiment_from_kv(parse_kv_file(path));
}

inline std::vector<ChipConfig> configs_from_experiment(const ExperimentConfig& cfg) {
  if (cfg.designs.empty())
    throw config_error("experiment defines no design.N.* entries");
  std::vector<ChipConfig> chips;
  for (std::size_t n = 0; n < cfg.designs.size(); ++n)
    chips.push_back(ChipConfig{design_from_kv(cfg.designs[n]),
                               static_cast<std::uint32_t>(n)});
  return chips;
}

/// Deterministic resolved-config serialization used for provenance records.
inline std::string serialize_experiment(const ExperimentConfig& cfg) {
  std::ostringstream os;
  os.setf(std::ios::fmtflags(0), std::ios::floatfield);
  os.precision(17);
  os << "seed = " << cfg.seed << "\n";
  os << "output.dir = " << cfg.output_dir << "\n";
  for (std::size_t n = 0; n < cfg.designs.size(); ++n)
    for (const auto& [k, v] : cfg.designs[n])
      os << "design." << n << "." << k << " = " << v << "\n";
  const GenerationSpec& gen = cfg.generation;
  os << "layout.pblock = " << gen.scene.pblock.x0 << "," << gen.scene.pblock.y0
     << "," << gen.scene.pblock.x1 << "," << gen.scene.pblock.y1 << "\n";
  os << "layout.cell_pitch_um = " << gen.scene.cell_pitch << "\n";
  os << "layout.placement_seed = " << gen.scene.placement_seed << "\n";
  os << "logic.window_cycles = " << gen.scene.window_cycles << "\n";
  os << "grid.rail_pitch_um = " << gen.scene.grid.rail_pitch << "\n";
  os << "grid.rail_height_um = " << gen.scene.grid.rail_height << "\n";
  os << "grid.pad_side = "
     << (gen.scene.grid.pad_side == PadSide::Left ? "left" : "right") << "\n";
  os << "weights.register_ua = " << gen.scene.weights.at(PrimitiveKind::Register)
     << "\n";
  os << "weights.lut_ua = " << gen.scene.weights.at(PrimitiveKind::Lut) << "\n";
  os << "image.height = " << gen.image.height_px << "\n";
  os << "image.width = " << gen.image.width_px << "\n";
  os << "image.pixel_pitch_um = " << gen.image.pixel_pitch << "\n";
  os << "image.standoff_um = " << gen.image.standoff << "\n";
  os << "image.origin = " << gen.image.origin[0] << "," << gen.image.origin[1]
     << "\n";
  os << "noise.sigma_ut = "
     << (gen.noise_sigma < 0 ? std::string("auto")
                             : [&] {
                                 std::ostringstream t;
                                 t.precision(17);
                                 t << gen.noise_sigma;
                                 return t.str();
                               }())
     << "\n";
  os << "noise.floor_ua = " << gen.noise_floor_ua << "\n";
  os << "drift.enabled = " << (gen.drift.enabled ? "true" : "false") << "\n";
  os << "drift.offset_step_ut = " << gen.drift.offset_step << "\n";
  os << "drift.gradient_step_ut = " << gen.drift.gradient_step << "\n";
  os << "protocol.test_frames = " << gen.protocol.test_frames << "\n";
  os << "protocol.base_frames = " << gen.protocol.base_frames << "\n";
  os << "protocol.base_every = " << gen.protocol.base_every << "\n";
  os << "preprocess.averaging_k = " << cfg.preprocess.averaging_k << "\n";
  os << "preprocess.highpass_sigma_px = " << cfg.preprocess.highpass_sigma << "\n";
  os << "preprocess.crop_height_fraction = "
     << (cfg.preprocess.crop ? cfg.preprocess.crop->height_fraction : 1.0) << "\n";
  os << "preprocess.crop_width_fraction = "
     << (cfg.preprocess.crop ? cfg.preprocess.crop->width_fraction : 1.0) << "\n";
  os << "preprocess.normalize = " << (cfg.preprocess.normalize ? "true" : "false")
     << "\n";
  os << "reduce.method = "
     << (cfg.method == ReduceMethod::Pca
             ? "pca"
             : cfg.method == ReduceMethod::Cnn ? "cnn" : "both")
     << "\n";
  os << "reduce.train_fraction = " << cfg.train_fraction << "\n";
  os << "cluster.min_pts = " << cfg.cluster_min_pts << "\n";
  os << "cnn.arch = " << cfg.cnn.arch << "\n";
  os << "cnn.batch_size = " << cfg.cnn.train.batch_size << "\n";
  os << "cnn.learning_rate = " << cfg.cnn.train.learning_rate << "\n";
  os << "cnn.momentum = " << cfg.cnn.train.momentum << "\n";
  os << "cnn.max_epochs = " << cfg.cnn.train.max_epochs << "\n";
  os << "cnn.check_interval = " << cfg.cnn.train.check_interval << "\n";
  os << "odmr.pixel_extraction = "
     << (cfg.odmr_pixel_extraction ? "true" : "false") << "\n";
  os << "odmr.spectrum_noise = " << cfg.odmr_spectrum_noise << "\n";
  // threads is an execution knob, not an experiment parameter; results are
  // identical for any worker count, so it stays out of provenance records.
  return os.str();
}

}  // namespace qdmsim
