#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "qdmsim/autoencoder.hpp"
#include "qdmsim/cluster.hpp"
#include "qdmsim/config.hpp"
#include "qdmsim/dataset.hpp"
#include "qdmsim/odmr.hpp"
#include "qdmsim/pca.hpp"
#include "qdmsim/plot.hpp"
#include "qdmsim/preprocess.hpp"
#include "qdmsim/version.hpp"

namespace qdmsim {

inline std::string fmt_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

struct GeneratedFiles {
  std::vector<std::string> containers;
  std::vector<std::uint64_t> checksums;
};

inline GeneratedFiles run_generate(const ExperimentConfig& cfg,
                                   const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const std::vector<ChipConfig> chips = configs_from_experiment(cfg);
  Dataset ds = generate_dataset(chips, cfg.generation, cfg.seed);

  GeneratedFiles out;
  for (std::size_t k = 0; k < chips.size(); ++k) {
    std::vector<Frame> frames;
    for (const Frame& f : ds.frames)
      if (f.config_ordinal == k) frames.push_back(f);
    const std::string path =
        (fs::path(out_dir) / ("chip" + std::to_string(k) + ".qdm")).string();
    write_container(path, frames, ds.spec);
    std::map<std::string, std::string> manifest;
    manifest["container.version"] = "QDMSIM1";
    manifest["tool.version"] = kVersion;
    manifest["seed"] = std::to_string(cfg.seed);
    manifest["chip_id"] = std::to_string(chips[k].chip_id);
    manifest["noise.sigma_ut"] = fmt_num(ds.noise_sigma);
    manifest["image.height"] = std::to_string(ds.spec.height_px);
    manifest["image.width"] = std::to_string(ds.spec.width_px);
    manifest["image.pixel_pitch_um"] = fmt_num(ds.spec.pixel_pitch);
    manifest["image.standoff_um"] = fmt_num(ds.spec.standoff);
    for (const auto& [dk, dv] : cfg.designs[k]) manifest["design." + dk] = dv;
    manifest["grid.rail_pitch_um"] = fmt_num(cfg.generation.scene.grid.rail_pitch);
    manifest["grid.rail_height_um"] =
        fmt_num(cfg.generation.scene.grid.rail_height);
    manifest["weights.register_ua"] =
        fmt_num(cfg.generation.scene.weights.at(PrimitiveKind::Register));
    manifest["weights.lut_ua"] =
        fmt_num(cfg.generation.scene.weights.at(PrimitiveKind::Lut));
    write_manifest(path + ".manifest", manifest);
    out.containers.push_back(path);
    out.checksums.push_back(fnv1a_file(path));
  }
  std::ofstream cfg_out(fs::path(out_dir) / "config.txt");
  cfg_out << serialize_experiment(cfg);
  return out;
}

// ---------------------------------------------------------------------------
// detect
// ---------------------------------------------------------------------------

/// Result of the label-free analysis stages. Nothing in here ever saw a chip
/// identity; reporting joins it with the truth table afterwards.
struct BlindAnalysis {
  std::vector<LatentPoint> points;       // reported points
  std::vector<std::size_t> image_index;  // into the preprocessed set
  ClusterLabeling labeling;
  double eps = 0;
  bool eps_degenerate = false;
  std::optional<double> separation;
  TrainResult train;                    // cnn only
  std::vector<double> loss_history;     // cnn only
  std::optional<AutoencoderModel<float>> model;  // cnn only
};

namespace detail {

inline int split_stride(double train_fraction) {
  const double hold = 1.0 - train_fraction;
  if (hold <= 0) return 0;  // everything trains, nothing held out
  return std::max(2, static_cast<int>(std::lround(1.0 / hold)));
}

/// Per-configuration interleaved split: position p within its configuration
/// is held out iff p % stride == stride-1.
inline std::vector<bool> holdout_mask(const std::vector<std::uint32_t>& config_of,
                                      double train_fraction) {
  const int stride = split_stride(train_fraction);
  std::map<std::uint32_t, int> pos;
  std::vector<bool> held(config_of.size(), false);
  for (std::size_t i = 0; i < config_of.size(); ++i) {
    const int p = pos[config_of[i]]++;
    held[i] = stride > 0 && (p % stride == stride - 1);
  }
  return held;
}

}  // namespace detail

/// knee-eps + DBSCAN, the clustering route used everywhere.
inline std::pair<ClusterLabeling, KneeResult> cluster_latents(
    const std::vector<LatentPoint>& points, int min_pts) {
  const KneeResult knee = knee_eps(points);
  ClusterParams params{knee.eps, min_pts};
  return {dbscan(points, params), knee};
}

/// PCA route: fit and cluster the whole preprocessed set.
inline BlindAnalysis analyze_pca(const PreprocessedSet& set, int min_pts) {
  BlindAnalysis a;
  const PcaModel model = pca_fit(set.images, 4);
  for (std::size_t i = 0; i < set.images.size(); ++i) {
    a.points.push_back(pca_transform(model, set.images[i], static_cast<int>(i)));
    a.image_index.push_back(i);
  }
  auto [labeling, knee] = cluster_latents(a.points, min_pts);
  a.labeling = std::move(labeling);
  a.eps = knee.eps;
  a.eps_degenerate = knee.degenerate;
  a.separation = separation_ratio(a.labeling, a.points);
  return a;
}

/// CNN route: train on the train+validation share with the cluster-check stop
/// rule, then encode and cluster the held-out test images.
inline BlindAnalysis analyze_cnn(const PreprocessedSet& set, int min_pts,
                                 const CnnConfig& cnn, double train_fraction,
                                 std::uint64_t seed) {
  BlindAnalysis a;
  const VectorFieldImage& probe = set.images.at(0);
  const Architecture arch = cnn.arch == "trusthub"
                                ? trusthub_architecture()
                                : default_architecture();
  AutoencoderModel<float> model = autoencoder_init<float>(
      arch, probe.height, probe.width, probe.channels,
      Rng(seed).derive("cnn-init", cnn.seed_offset).next_u64());

  const std::vector<bool> held = detail::holdout_mask(set.config_of,
                                                      train_fraction);
  std::vector<VectorFieldImage> train_images;
  std::vector<std::size_t> test_index;
  for (std::size_t i = 0; i < set.images.size(); ++i) {
    if (held[i]) test_index.push_back(i);
    else train_images.push_back(set.images[i]);
  }
  if (train_images.empty() || test_index.empty())
    throw protocol_error("train/test split left one side empty");

  ClusterHook hook = [min_pts](const std::vector<LatentPoint>& latents) {
    return cluster_latents(latents, min_pts).first.cluster_count;
  };
  a.train = autoencoder_train(model, train_images, cnn.train, hook);
  a.loss_history = a.train.loss_history;

  for (std::size_t k = 0; k < test_index.size(); ++k) {
    a.points.push_back(autoencoder_encode(model, set.images[test_index[k]],
                                          static_cast<int>(test_index[k])));
    a.image_index.push_back(test_index[k]);
  }
  auto [labeling, knee] = cluster_latents(a.points, min_pts);
  a.labeling = std::move(labeling);
  a.eps = knee.eps;
  a.eps_degenerate = knee.degenerate;
  a.separation = separation_ratio(a.labeling, a.points);
  a.model = std::move(model);
  return a;
}

struct MethodOutcome {
  std::string method;
  DetectionReport report;
  GroupAssignment groups;
  double eps = 0;
  int min_pts = 3;
  int clusters = 0;
  std::optional<double> separation;
  std::string verdict;
  BlindAnalysis analysis;
};

struct DetectOutcome {
  std::vector<MethodOutcome> methods;
  double normalized_distance = 0;  // image-level golden metric
  std::uint32_t chip_a = 0, chip_b = 0;
  bool test_is_trojan = false;
  std::vector<std::string> files;
};

namespace detail {

inline bool design_has_trojan(const std::map<std::string, std::string>& kv) {
  auto it = kv.find("trojan.kind");
  if (it == kv.end() || it->second == "none") return false;
  auto en = kv.find("trojan.enable");
  (void)en;  // a disabled trojan is still inserted logic
  return true;
}

}  // namespace detail

/// Loads per-configuration containers, runs the blind pipeline, scores the
/// outcome against the withheld chip identities, and writes every report
/// artifact into out_dir.
inline DetectOutcome run_detect(const ExperimentConfig& cfg,
                                const std::vector<std::string>& dataset_paths,
                                const std::string& out_dir) {
  namespace fs = std::filesystem;
  if (dataset_paths.size() != 2)
    throw protocol_error("detect compares exactly two chip datasets");
  fs::create_directories(out_dir);

  // Load sessions; config ordinal = position on the command line.
  std::vector<Frame> frames;
  std::vector<std::uint32_t> chip_of_config(dataset_paths.size(), 0);
  for (std::size_t k = 0; k < dataset_paths.size(); ++k) {
    LoadedContainer lc = read_container(dataset_paths[k]);
    if (lc.frames.empty()) throw protocol_error("empty dataset");
    chip_of_config[k] = lc.frames[0].chip_id;
    for (Frame& f : lc.frames) {
      f.config_ordinal = static_cast<std::uint32_t>(k);
      f.chip_id = 0;  // withheld from every stage before scoring
      frames.push_back(std::move(f));
    }
  }

  // Optional ODMR measurement layer: replace each vector image by the
  // Lorentzian-fit B-parallel channel before any preprocessing.
  if (cfg.odmr_pixel_extraction) {
    OdmrSpec ospec;
    for (Frame& f : frames) {
      const std::uint64_t s = Rng(cfg.seed)
                                  .derive("odmr", f.config_ordinal)
                                  .derive(f.index)
                                  .next_u64();
      f.image = odmr_extract_image(f.image, ospec, cfg.odmr_bias_ut,
                                   cfg.odmr_spectrum_noise, s);
    }
  }

  const PreprocessedSet set = run_preprocess(frames, cfg.preprocess);

  // Golden-chip distance on the unnormalized preprocessed images.
  PreprocessConfig raw_pre = cfg.preprocess;
  raw_pre.normalize = false;
  const PreprocessedSet metric_set = run_preprocess(frames, raw_pre);
  std::vector<VectorFieldImage> golden, test_images;
  for (std::size_t i = 0; i < metric_set.images.size(); ++i)
    (metric_set.config_of[i] == 0 ? golden : test_images)
        .push_back(metric_set.images[i]);

  DetectOutcome outcome;
  outcome.chip_a = chip_of_config[0];
  outcome.chip_b = chip_of_config[1];
  outcome.normalized_distance = normalized_euclidean(test_images, golden);
  outcome.test_is_trojan = cfg.designs.size() > 1
                               ? detail::design_has_trojan(cfg.designs[1])
                               : false;

  std::vector<std::string> methods;
  if (cfg.method == ReduceMethod::Pca || cfg.method == ReduceMethod::Both)
    methods.push_back("pca");
  if (cfg.method == ReduceMethod::Cnn || cfg.method == ReduceMethod::Both)
    methods.push_back("cnn");

  for (const std::string& name : methods) {
    MethodOutcome m;
    m.method = name;
    m.min_pts = cfg.cluster_min_pts;
    m.analysis = name == "pca"
                     ? analyze_pca(set, cfg.cluster_min_pts)
                     : analyze_cnn(set, cfg.cluster_min_pts, cfg.cnn,
                                   cfg.train_fraction, cfg.seed);
    // Truth joins the pipeline only here.
    std::vector<std::uint32_t> truth;
    for (std::size_t idx : m.analysis.image_index)
      truth.push_back(chip_of_config[set.config_of[idx]]);
    m.groups = consolidate(m.analysis.labeling, truth);
    m.report = accuracy_report(m.groups, m.analysis.labeling, truth,
                               chip_of_config[1], outcome.test_is_trojan);
    m.eps = m.analysis.eps;
    m.clusters = m.analysis.labeling.cluster_count;
    m.separation = m.analysis.separation;
    m.verdict = m.groups.single_group ? "no trojan detected" : "trojan detected";

    // Artifacts: latent scatter CSV + cluster map.
    const std::string latent_path =
        (fs::path(out_dir) / ("latent_" + name + ".csv")).string();
    std::ofstream lcsv(latent_path);
    lcsv << "point,source_image,c0,c1,c2,c3,cluster,chip\n";
    for (std::size_t i = 0; i < m.analysis.points.size(); ++i) {
      const auto& pt = m.analysis.points[i];
      lcsv << i << "," << pt.source_frame;
      for (int d = 0; d < 4; ++d)
        lcsv << ","
             << fmt_num(d < static_cast<int>(pt.coords.size()) ? pt.coords[d]
                                                               : 0.0);
      lcsv << "," << m.analysis.labeling.labels[i] << "," << truth[i] << "\n";
    }
    outcome.files.push_back(latent_path);
    const std::string map_path =
        (fs::path(out_dir) / ("clusters_" + name + ".pgm")).string();
    write_cluster_map(map_path, m.analysis.points, m.analysis.labeling);
    outcome.files.push_back(map_path);
    if (name == "cnn") {
      const std::string loss_path = (fs::path(out_dir) / "cnn_loss.csv").string();
      std::ofstream loss(loss_path);
      loss << "epoch,loss\n";
      for (std::size_t e = 0; e < m.analysis.loss_history.size(); ++e)
        loss << (e + 1) << "," << fmt_num(m.analysis.loss_history[e]) << "\n";
      outcome.files.push_back(loss_path);
      if (m.analysis.model) {
        const std::string ck = (fs::path(out_dir) / "model.qdmae").string();
        save_checkpoint(ck, *m.analysis.model);
        outcome.files.push_back(ck);
      }
    }
    outcome.methods.push_back(std::move(m));
  }

  // Field snapshots and the difference image, from corrected test means.
  {
    std::vector<VectorFieldImage> mean_by_cfg;
    std::vector<int> counts;
    const std::vector<CorrectedImage> corrected = subtract_base(frames);
    for (const CorrectedImage& ci : corrected) {
      const std::size_t k = ci.config_ordinal;
      if (mean_by_cfg.size() <= k) {
        mean_by_cfg.resize(k + 1);
        counts.resize(k + 1, 0);
      }
      if (counts[k] == 0) mean_by_cfg[k] = ci.image;
      else
        for (std::size_t i = 0; i < mean_by_cfg[k].data.size(); ++i)
          mean_by_cfg[k].data[i] += ci.image.data[i];
      counts[k]++;
    }
    for (std::size_t k = 0; k < mean_by_cfg.size(); ++k) {
      for (double& v : mean_by_cfg[k].data) v /= counts[k];
      const std::string p =
          (fs::path(out_dir) / ("field_chip" + std::to_string(k) + ".ppm")).string();
      write_field_ppm(p, mean_by_cfg[k], mean_by_cfg[k].channels - 1);
      outcome.files.push_back(p);
    }
    if (mean_by_cfg.size() == 2) {
      const VectorFieldImage diff = mean_by_cfg[1] - mean_by_cfg[0];
      const std::string p = (fs::path(out_dir) / "difference.ppm").string();
      write_field_ppm(p, diff, diff.channels - 1);
      outcome.files.push_back(p);
    }
  }

  // report.csv + summary.txt + provenance.
  const std::string report_path = (fs::path(out_dir) / "report.csv").string();
  std::ofstream rep(report_path);
  rep << "method,chips,fp,fn,accuracy,noise,separation_ratio,eps,min_pts,"
         "clusters,normalized_distance,verdict\n";
  for (const MethodOutcome& m : outcome.methods) {
    rep << m.method << "," << outcome.chip_a << "|" << outcome.chip_b << ","
        << fmt_num(m.report.false_positive_rate) << ","
        << (outcome.test_is_trojan ? fmt_num(m.report.false_negative_rate)
                                   : std::string("n/a"))
        << "," << fmt_num(m.report.accuracy) << ","
        << fmt_num(m.report.noise_fraction) << ","
        << (m.separation ? fmt_num(*m.separation) : std::string("n/a")) << ","
        << fmt_num(m.eps) << "," << m.min_pts << "," << m.clusters << ","
        << fmt_num(outcome.normalized_distance) << "," << m.verdict << "\n";
  }
  rep.close();
  outcome.files.push_back(report_path);

  const std::string summary_path = (fs::path(out_dir) / "summary.txt").string();
  std::ofstream sum(summary_path);
  sum << "comparison: chip " << outcome.chip_a << " vs chip " << outcome.chip_b
      << "\n";
  sum << "normalized euclidean distance: "
      << fmt_num(outcome.normalized_distance) << "\n";
  for (const MethodOutcome& m : outcome.methods) {
    sum << "\n[" << m.method << "]\n";
    sum << "  clusters: " << m.clusters << " (eps " << fmt_num(m.eps)
        << ", min_pts " << m.min_pts << ")\n";
    sum << "  verdict: " << m.verdict << "\n";
    sum << "  accuracy: " << fmt_num(100 * m.report.accuracy) << "%  fp: "
        << fmt_num(100 * m.report.false_positive_rate) << "%";
    if (outcome.test_is_trojan)
      sum << "  fn: " << fmt_num(100 * m.report.false_negative_rate) << "%";
    sum << "  noise: " << fmt_num(100 * m.report.noise_fraction) << "%\n";
    if (m.separation)
      sum << "  separation ratio: " << fmt_num(*m.separation) << "\n";
  }
  sum.close();
  outcome.files.push_back(summary_path);

  std::ofstream cfg_out(fs::path(out_dir) / "config.txt");
  cfg_out << serialize_experiment(cfg);
  std::ofstream ver(fs::path(out_dir) / "version.txt");
  ver << "qdmsim " << kVersion << "\nseed " << cfg.seed << "\n";
  return outcome;
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

enum class SweepAxis { TrojanScale, FrequencyDivider, NoiseSigma, Standoff };

inline const char* axis_name(SweepAxis a) {
  switch (a) {
    case SweepAxis::TrojanScale: return "trojan_scale";
    case SweepAxis::FrequencyDivider: return "frequency_divider";
    case SweepAxis::NoiseSigma: return "noise_sigma";
    case SweepAxis::Standoff: return "standoff";
  }
  return "?";
}

struct SweepRow {
  double axis_value = 0;
  std::uint64_t seed = 0;
  std::string trojan_free;
  std::string trojan;
  std::map<std::string, DetectionReport> by_method;
  std::map<std::string, double> normalized_distance;
};

struct SweepOutcome {
  std::vector<SweepRow> rows;
  std::vector<std::string> files;
};

namespace detail {

inline std::string describe_design(const std::map<std::string, std::string>& kv) {
  auto get = [&](const char* k, const char* fb) {
    auto it = kv.find(k);
    return it == kv.end() ? std::string(fb) : it->second;
  };
  const std::string base =
      get("base.width", "200") + " bit " + get("base.kind", "counter");
  const std::string tk = get("trojan.kind", "none");
  if (tk == "none") return base;
  std::string t = get("trojan.scale", "1") + " bit " + tk;
  const std::string fd = get("trojan.frequency_divider", "1");
  if (fd != "1") t += " (1/" + fd + " frequency)";
  return t + " on " + base;
}

}  // namespace detail

/// Repeats generate+detect per (axis value, seed) and aggregates the figures
/// of merit into one tidy CSV plus a trend plot.
inline SweepOutcome run_sweep(const ExperimentConfig& base_cfg, SweepAxis axis,
                              const std::vector<double>& values,
                              const std::vector<std::uint64_t>& seeds,
                              const std::string& out_dir) {
  namespace fs = std::filesystem;
  if (values.empty()) throw parameter_error("sweep axis values are empty");
  if (seeds.empty()) throw parameter_error("sweep needs at least one seed");
  if (base_cfg.designs.size() < 2)
    throw config_error("sweep expects design.0 (trojan free) and design.1");
  fs::create_directories(out_dir);

  SweepOutcome outcome;
  for (double value : values) {
    for (std::uint64_t seed : seeds) {
      ExperimentConfig cfg = base_cfg;
      cfg.seed = seed;
      switch (axis) {
        case SweepAxis::TrojanScale:
          cfg.designs[1]["trojan.scale"] =
              std::to_string(static_cast<int>(value));
          break;
        case SweepAxis::FrequencyDivider:
          cfg.designs[1]["trojan.frequency_divider"] =
              std::to_string(static_cast<int>(value));
          break;
        case SweepAxis::NoiseSigma:
          cfg.generation.noise_sigma = value;
          break;
        case SweepAxis::Standoff:
          cfg.generation.image.standoff = value;
          break;
      }
      std::ostringstream sub;
      sub << axis_name(axis) << "_" << fmt_num(value) << "_seed" << seed;
      const std::string job_dir = (fs::path(out_dir) / sub.str()).string();
      const GeneratedFiles files = run_generate(cfg, job_dir);
      const DetectOutcome det = run_detect(cfg, files.containers, job_dir);

      SweepRow row;
      row.axis_value = value;
      row.seed = seed;
      row.trojan_free = detail::describe_design(cfg.designs[0]);
      row.trojan = detail::describe_design(cfg.designs[1]);
      for (const MethodOutcome& m : det.methods) {
        row.by_method[m.method] = m.report;
        row.normalized_distance[m.method] = det.normalized_distance;
      }
      outcome.rows.push_back(std::move(row));
    }
  }

  const std::string csv_path = (fs::path(out_dir) / "sweep.csv").string();
  std::ofstream csv(csv_path);
  csv << "axis,value,seed,trojan_free_circuit,trojan,pca_fp,pca_fn,pca_accuracy,"
         "cnn_fp,cnn_fn,cnn_accuracy,normalized_distance\n";
  for (const SweepRow& row : outcome.rows) {
    auto cell = [&](const char* method, auto pick) {
      auto it = row.by_method.find(method);
      return it == row.by_method.end() ? std::string("n/a")
                                       : fmt_num(pick(it->second));
    };
    csv << axis_name(axis) << "," << fmt_num(row.axis_value) << "," << row.seed
        << "," << row.trojan_free << "," << row.trojan << ","
        << cell("pca", [](const DetectionReport& r) { return r.false_positive_rate; })
        << ","
        << cell("pca", [](const DetectionReport& r) { return r.false_negative_rate; })
        << ","
        << cell("pca", [](const DetectionReport& r) { return r.accuracy; }) << ","
        << cell("cnn", [](const DetectionReport& r) { return r.false_positive_rate; })
        << ","
        << cell("cnn", [](const DetectionReport& r) { return r.false_negative_rate; })
        << ","
        << cell("cnn", [](const DetectionReport& r) { return r.accuracy; }) << ","
        << fmt_num(row.normalized_distance.empty()
                       ? 0.0
                       : row.normalized_distance.begin()->second)
        << "\n";
  }
  csv.close();
  outcome.files.push_back(csv_path);

  // Seed-averaged accuracy trend per method.
  std::vector<double> xs;
  std::vector<std::vector<double>> series(2);
  for (double value : values) {
    xs.push_back(value);
    for (int mi = 0; mi < 2; ++mi) {
      const char* method = mi == 0 ? "pca" : "cnn";
      double acc = 0;
      int n = 0;
      for (const SweepRow& row : outcome.rows)
        if (row.axis_value == value && row.by_method.count(method)) {
          acc += row.by_method.at(method).accuracy;
          ++n;
        }
      series[mi].push_back(n ? acc / n : 0.0);
    }
  }
  const std::string plot_path = (fs::path(out_dir) / "trend.pgm").string();
  write_line_plot(plot_path, xs, series);
  outcome.files.push_back(plot_path);
  std::ofstream cfg_out(fs::path(out_dir) / "config.txt");
  cfg_out << serialize_experiment(base_cfg);
  return outcome;
}

}  // namespace qdmsim
