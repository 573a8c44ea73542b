// Batch front-end: generate synthetic QDM datasets, run golden-chip-free
// trojan detection, sweep trojan/noise parameters, inspect containers.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "qdmsim/pipeline.hpp"
#include "qdmsim/version.hpp"

namespace {

std::string resolve_out_dir(const std::string& dir) {
  const char* root = std::getenv("QDMSIM_OUTPUT_ROOT");
  if (!root || std::filesystem::path(dir).is_absolute()) return dir;
  return (std::filesystem::path(root) / dir).string();
}

int resolve_threads(int cli_threads) {
  if (cli_threads > 0) return cli_threads;
  if (const char* env = std::getenv("QDMSIM_THREADS")) {
    const int t = std::atoi(env);
    if (t > 0) return t;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"qdmsim: synthetic magnetic side-channel trojan detection"};
  app.set_version_flag("--version", std::string("qdmsim ") + qdmsim::kVersion);
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  int threads = 0;

  auto* gen = app.add_subcommand("generate", "render datasets for every design");
  gen->add_option("-c,--config", config_path, "experiment config file")->required();
  gen->add_option("-o,--out", out_dir, "output directory");

  auto* det = app.add_subcommand("detect", "run detection on two chip datasets");
  std::vector<std::string> dataset_paths;
  det->add_option("-c,--config", config_path, "experiment config file")->required();
  det->add_option("-o,--out", out_dir, "output directory");
  det->add_option("-d,--dataset", dataset_paths,
                  "two container files (trojan-free first); defaults to the "
                  "files generate wrote under the output directory");
  std::string method_override;
  det->add_option("-m,--method", method_override, "pca | cnn | both");
  det->add_option("-t,--threads", threads, "worker threads");

  auto* sweep = app.add_subcommand("sweep", "repeat generate+detect over an axis");
  std::string axis_name_str;
  std::vector<double> axis_values;
  std::vector<std::uint64_t> sweep_seeds;
  sweep->add_option("-c,--config", config_path, "experiment config file")->required();
  sweep->add_option("-o,--out", out_dir, "output directory");
  sweep->add_option("-a,--axis", axis_name_str,
                    "trojan_scale | frequency_divider | noise_sigma | standoff")
      ->required();
  sweep->add_option("-v,--values", axis_values, "axis values")->required();
  sweep->add_option("-s,--seeds", sweep_seeds, "seeds (default: config seed)");
  sweep->add_option("-t,--threads", threads, "worker threads");

  auto* inspect = app.add_subcommand("inspect", "dump dataset metadata");
  std::string inspect_path;
  inspect->add_option("dataset", inspect_path, "container file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (inspect->parsed()) {
      const qdmsim::LoadedContainer lc = qdmsim::read_container(inspect_path);
      int tests = 0, bases = 0;
      std::set<std::uint32_t> chips;
      for (const auto& f : lc.frames) {
        (f.role == qdmsim::FrameRole::Test ? tests : bases)++;
        chips.insert(f.chip_id);
      }
      std::printf("container: %s\n", inspect_path.c_str());
      std::printf("image: %dx%dx%d float32\n", lc.height, lc.width, lc.channels);
      std::printf("frames: %zu (%d test, %d base)\n", lc.frames.size(), tests,
                  bases);
      std::printf("chip ids:");
      for (std::uint32_t c : chips) std::printf(" %u", c);
      std::printf("\nchecksum: %016llx\n",
                  static_cast<unsigned long long>(qdmsim::fnv1a_file(inspect_path)));
      return 0;
    }

    qdmsim::ExperimentConfig cfg = qdmsim::load_experiment(config_path);
    if (!out_dir.empty()) cfg.output_dir = out_dir;
    cfg.output_dir = resolve_out_dir(cfg.output_dir);
    cfg.threads = resolve_threads(threads);
    cfg.cnn.train.threads = cfg.threads;

    if (gen->parsed()) {
      const qdmsim::GeneratedFiles files =
          qdmsim::run_generate(cfg, cfg.output_dir);
      for (std::size_t k = 0; k < files.containers.size(); ++k)
        std::printf("%s checksum %016llx\n", files.containers[k].c_str(),
                    static_cast<unsigned long long>(files.checksums[k]));
      return 0;
    }
    if (det->parsed()) {
      if (!method_override.empty()) {
        if (method_override == "pca") cfg.method = qdmsim::ReduceMethod::Pca;
        else if (method_override == "cnn") cfg.method = qdmsim::ReduceMethod::Cnn;
        else if (method_override == "both") cfg.method = qdmsim::ReduceMethod::Both;
        else throw qdmsim::config_error("unknown method '" + method_override + "'");
      }
      std::vector<std::string> paths = dataset_paths;
      if (paths.empty())
        for (std::size_t k = 0; k < cfg.designs.size() && k < 2; ++k)
          paths.push_back((std::filesystem::path(cfg.output_dir) /
                           ("chip" + std::to_string(k) + ".qdm")).string());
      const qdmsim::DetectOutcome outcome =
          qdmsim::run_detect(cfg, paths, cfg.output_dir);
      for (const auto& m : outcome.methods)
        std::printf("[%s] %s | accuracy %.1f%% fp %.1f%% fn %.1f%% noise %.1f%%\n",
                    m.method.c_str(), m.verdict.c_str(),
                    100 * m.report.accuracy,
                    100 * m.report.false_positive_rate,
                    100 * m.report.false_negative_rate,
                    100 * m.report.noise_fraction);
      std::printf("normalized euclidean distance: %.3f\n",
                  outcome.normalized_distance);
      std::printf("reports in %s\n", cfg.output_dir.c_str());
      return 0;
    }
    if (sweep->parsed()) {
      qdmsim::SweepAxis axis;
      if (axis_name_str == "trojan_scale") axis = qdmsim::SweepAxis::TrojanScale;
      else if (axis_name_str == "frequency_divider")
        axis = qdmsim::SweepAxis::FrequencyDivider;
      else if (axis_name_str == "noise_sigma")
        axis = qdmsim::SweepAxis::NoiseSigma;
      else if (axis_name_str == "standoff") axis = qdmsim::SweepAxis::Standoff;
      else throw qdmsim::config_error("unknown sweep axis '" + axis_name_str + "'");
      if (sweep_seeds.empty()) sweep_seeds.push_back(cfg.seed);
      const qdmsim::SweepOutcome outcome = qdmsim::run_sweep(
          cfg, axis, axis_values, sweep_seeds, cfg.output_dir);
      std::printf("sweep rows: %zu\nreports in %s\n", outcome.rows.size(),
                  cfg.output_dir.c_str());
      return 0;
    }
  } catch (const qdmsim::parse_error& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
