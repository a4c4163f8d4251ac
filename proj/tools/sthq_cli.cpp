#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sthq/experiments.hpp"
#include "sthq/image_io.hpp"
#include "sthq/rng.hpp"

using namespace sthq;
namespace fs = std::filesystem;

namespace {

struct Invocation {
  std::string config_file;
  std::vector<std::string> overrides;
};

CLI::App* add_command(CLI::App& app, const std::string& name, const std::string& help, Invocation& inv) {
  CLI::App* cmd = app.add_subcommand(name, help);
  cmd->add_option("-c,--config", inv.config_file, "key=value config file");
  cmd->add_option("overrides", inv.overrides, "key=value settings; override the config file");
  return cmd;
}

RunConfig resolve(std::vector<ConfigKey> schema, const Invocation& inv) {
  RunConfig config(std::move(schema));
  if (!inv.config_file.empty()) config.merge_file(inv.config_file);
  for (const auto& kv : inv.overrides) config.assign(kv);
  return config;
}

fs::path prepare_run_dir(const RunConfig& config) {
  const fs::path dir = config.str("run_dir");
  fs::create_directories(dir);
  std::ofstream(dir / "config.txt", std::ios::binary) << config.echo();
  return dir;
}

void write_telemetry(const fs::path& path, const std::vector<TelemetryRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  TelemetryWriter w(out);
  for (const auto& r : rows) w.write(r);
}

void print_point(const RateDistortionPoint& p) { std::cout << format_metrics(p) << "\n"; }

const std::string& require(const RunConfig& config, const std::string& key) {
  const std::string& v = config.str(key);
  if (v.empty()) throw ConfigError("missing required key '" + key + "'");
  return v;
}

void train_ae(const RunConfig& config) {
  const fs::path dir = prepare_run_dir(config);
  const AutoencoderData data = autoencoder_data(config);
  const Model stage1 = autoencoder_stage1(config, data.train);
  stage1.save(dir / "stage1.sthm");
  const AutoencoderRun run = autoencoder_point(config, stage1, data, config.count("L"), config.count("patch"),
                                               config.real("beta_total"), "autoencoder", evaluation_threads());
  run.model.save(dir / "model.sthm");
  std::ofstream out(dir / "metrics.csv", std::ios::binary);
  MetricsWriter(out).write(run.evaluation.point);
  write_telemetry(dir / "telemetry.csv", run.telemetry);
  std::cout << metrics_header() << "\n";
  print_point(run.evaluation.point);
}

void sweep_beta(const RunConfig& config) {
  const fs::path dir = prepare_run_dir(config);
  const std::vector<double> betas = config.reals("betas");
  if (betas.empty()) throw ConfigError("betas is empty");
  const AutoencoderData data = autoencoder_data(config);
  const Model stage1 = autoencoder_stage1(config, data.train);
  stage1.save(dir / "stage1.sthm");
  std::ofstream out(dir / "metrics.csv", std::ios::binary);
  MetricsWriter metrics(out);
  std::cout << metrics_header() << "\n";
  for (std::size_t i = 0; i < betas.size(); ++i) {
    const std::string id = "beta" + std::to_string(i);
    const AutoencoderRun run = autoencoder_point(config, stage1, data, config.count("L"), config.count("patch"), betas[i],
                                                 id, evaluation_threads());
    run.model.save(dir / ("model_" + id + ".sthm"));
    write_telemetry(dir / ("telemetry_" + id + ".csv"), run.telemetry);
    metrics.write(run.evaluation.point);
    print_point(run.evaluation.point);
  }
}

void ablation_scalar_vector(const RunConfig& config) {
  const fs::path dir = prepare_run_dir(config);
  const AutoencoderData data = autoencoder_data(config);
  const Model stage1 = autoencoder_stage1(config, data.train);
  stage1.save(dir / "stage1.sthm");
  std::ofstream out(dir / "metrics.csv", std::ios::binary);
  MetricsWriter metrics(out);
  std::cout << metrics_header() << "\n";
  std::vector<RateDistortionPoint> points[2];
  const char* modes[2] = {"vector", "scalar"};
  for (int mode = 0; mode < 2; ++mode) {
    const std::string prefix = modes[mode];
    const std::vector<double> betas = config.reals(prefix + "_betas");
    for (std::size_t i = 0; i < betas.size(); ++i) {
      const std::string id = prefix + "-beta" + std::to_string(i);
      const AutoencoderRun run = autoencoder_point(config, stage1, data, config.count(prefix + "_L"),
                                                   config.count(prefix + "_patch"), betas[i], id, evaluation_threads());
      run.model.save(dir / ("model_" + id + ".sthm"));
      write_telemetry(dir / ("telemetry_" + id + ".csv"), run.telemetry);
      metrics.write(run.evaluation.point);
      print_point(run.evaluation.point);
      points[mode].push_back(run.evaluation.point);
    }
  }
  const std::size_t wins = matched_rate_wins(points[0], points[1]);
  std::ofstream(dir / "summary.txt", std::ios::binary)
      << "vector_wins_at_matched_rate=" << wins << "\nvector_points=" << points[0].size() << "\n";
  std::cout << "vector beats scalar at matched rate on " << wins << " of " << points[0].size() << " points\n";
}

void write_net_artifacts(const fs::path& dir, const std::string& id, const NetCompressionResult& r) {
  r.model.save(dir / ("model" + id + ".sthm"));
  write_file(dir / ("weights" + id + ".sthq"), r.bitstream.serialize());
  write_telemetry(dir / ("telemetry" + id + ".csv"), r.telemetry);
}

void train_netcompress(const RunConfig& config) {
  const fs::path dir = prepare_run_dir(config);
  const NetData data = netcompress_data(config);
  const Model baseline = netcompress_baseline(config, data);
  baseline.save(dir / "baseline.sthm");
  const double beta = config.real("beta_total");
  const NetCompressionResult r = train_net_compression(data.train, data.test, baseline, netcompress_options(config, beta));
  write_net_artifacts(dir, "", r);
  const RateDistortionPoint p = net_point(r, "netcompress", beta, config.count("L"));
  std::ofstream out(dir / "metrics.csv", std::ios::binary);
  MetricsWriter(out).write(p);
  std::cout << metrics_header() << "\n";
  print_point(p);
  std::cout << "baseline accuracy " << r.baseline_accuracy << ", hard switch at iteration " << r.hard_switch_iteration
            << "\n";
}

void ablation_beta_zero(const RunConfig& config) {
  const fs::path dir = prepare_run_dir(config);
  const NetData data = netcompress_data(config);
  const Model baseline = netcompress_baseline(config, data);
  baseline.save(dir / "baseline.sthm");
  std::ofstream out(dir / "metrics.csv", std::ios::binary);
  MetricsWriter metrics(out);
  std::cout << metrics_header() << "\n";
  const std::pair<std::string, double> runs[] = {{"beta-zero", 0.0}, {"beta", config.real("beta_total")}};
  for (const auto& [id, beta] : runs) {
    const NetCompressionResult r = train_net_compression(data.train, data.test, baseline, netcompress_options(config, beta));
    write_net_artifacts(dir, "_" + id, r);
    const RateDistortionPoint p = net_point(r, id, beta, config.count("L"));
    metrics.write(p);
    print_point(p);
  }
}

std::vector<ConfigKey> codec_keys() {
  return {{"model", "", "trained autoencoder (.sthm)"}, {"input", "", ""}, {"output", "", ""}};
}

void encode(const RunConfig& config) {
  const Model model = Model::load(require(config, "model"));
  const Image img = to_gray(read_image(require(config, "input")));
  const ImageArtifact a = compress_image(image_to_tensor(img), model);
  write_file(require(config, "output"), a.serialize());
  std::cout << "payload_bits=" << a.payload_bits() << " bpp="
            << static_cast<double>(a.payload_bits()) / static_cast<double>(img.width * img.height) << "\n";
}

void decode(const RunConfig& config) {
  const Model model = Model::load(require(config, "model"));
  const ImageArtifact a = ImageArtifact::parse(read_file(require(config, "input")));
  write_image(require(config, "output"), tensor_to_image(decompress_image(a, model)));
}

std::vector<ConfigKey> eval_keys() {
  return {{"model", "", "trained autoencoder (.sthm)"},
          {"run_dir", "runs/eval", "output directory"},
          {"seed", "1", "seed of the generated evaluation textures"},
          {"eval_images", "", "directory of evaluation images; empty uses generated textures"},
          {"image_size", "16", ""},
          {"eval_count", "128", ""},
          {"run_id", "eval", ""},
          {"save_reconstructions", "false", "write reconstructions as PGM files"}};
}

void eval(const RunConfig& config) {
  const Model model = Model::load(require(config, "model"));
  const fs::path dir = prepare_run_dir(config);
  const std::size_t size = config.count("image_size");
  const Tensor images = load_image_set(config.str("eval_images"), size, config.count("eval_count"),
                                       derive_seed(config.u64("seed"), "eval-images"));
  CodecEvaluation ev = evaluate_codec(model, images, evaluation_threads());
  ev.point.run_id = config.str("run_id");
  std::ofstream out(dir / "metrics.csv", std::ios::binary);
  MetricsWriter(out).write(ev.point);
  if (config.flag("save_reconstructions")) {
    for (std::size_t i = 0; i < images.dim(0); ++i) {
      Tensor x({1, 1, size, size});
      std::copy_n(ev.reconstruction.data().begin() + static_cast<std::ptrdiff_t>(i * size * size), size * size,
                  x.data().begin());
      char name[32];
      std::snprintf(name, sizeof name, "recon_%04zu.pgm", i);
      write_image(dir / name, tensor_to_image(x));
    }
  }
  std::cout << metrics_header() << "\n";
  print_point(ev.point);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Soft-to-hard vector quantization: training, coding and evaluation"};
  app.require_subcommand(1);
  Invocation inv;

  struct Command {
    CLI::App* app;
    std::vector<ConfigKey> (*schema)();
    void (*run)(const RunConfig&);
  };
  std::vector<Command> commands{
      {add_command(app, "train-ae", "train the autoencoder and its quantizer", inv), autoencoder_keys, train_ae},
      {add_command(app, "train-netcompress", "train and compress a classifier", inv), netcompress_keys,
       train_netcompress},
      {add_command(app, "encode", "compress one image", inv), codec_keys, encode},
      {add_command(app, "decode", "decompress one image", inv), codec_keys, decode},
      {add_command(app, "eval", "rate and distortion of a trained autoencoder", inv), eval_keys, eval},
      {add_command(app, "sweep-beta", "autoencoder runs over several beta values", inv), sweep_keys, sweep_beta},
  };
  CLI::App* ablation = app.add_subcommand("ablation", "paired comparison runs");
  ablation->require_subcommand(1);
  commands.push_back({add_command(*ablation, "scalar-vs-vector", "scalar and vector quantization sweeps", inv),
                      scalar_vector_keys, ablation_scalar_vector});
  commands.push_back({add_command(*ablation, "beta-zero", "classifier compression with and without the rate term", inv),
                      netcompress_keys, ablation_beta_zero});

  CLI11_PARSE(app, argc, argv);

  try {
    for (const Command& c : commands) {
      if (!c.app->parsed()) continue;
      c.run(resolve(c.schema(), inv));
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
