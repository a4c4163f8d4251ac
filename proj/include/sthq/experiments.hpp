#pragma once

// Run configuration and the desk experiments behind the command line.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sthq/pipelines.hpp"

namespace sthq {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ConfigKey {
  std::string name;
  std::string default_value;
  std::string help;
};

/// Flat key=value configuration over a fixed set of keys. Unknown keys are
/// rejected with a message listing the valid ones.
class RunConfig {
 public:
  explicit RunConfig(std::vector<ConfigKey> schema);

  void set(const std::string& key, const std::string& value);
  /// "key=value"
  void assign(const std::string& assignment);
  /// Lines of key=value; blank lines and lines starting with '#' are skipped.
  void merge_text(const std::string& text, const std::string& origin = "config");
  void merge_file(const std::filesystem::path& path);

  const std::string& str(const std::string& key) const;
  double real(const std::string& key) const;
  std::optional<double> optional_real(const std::string& key) const;  // empty value -> nullopt
  std::size_t count(const std::string& key) const;
  std::uint64_t u64(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::vector<double> reals(const std::string& key) const;    // comma separated
  std::vector<std::size_t> counts(const std::string& key) const;

  /// Every key in schema order, one key=value per line.
  std::string echo() const;
  const std::vector<ConfigKey>& schema() const noexcept { return schema_; }

 private:
  const ConfigKey& find(const std::string& key) const;

  std::vector<ConfigKey> schema_;
  std::map<std::string, std::string> values_;
};

std::vector<ConfigKey> autoencoder_keys();
std::vector<ConfigKey> sweep_keys();        // autoencoder keys + betas
std::vector<ConfigKey> scalar_vector_keys();  // autoencoder keys + both sweeps
std::vector<ConfigKey> netcompress_keys();

/// Images for the autoencoder: files from `dir` (gray, center-cropped to
/// `size`) or, when dir is empty, `count` generated textures.
Tensor load_image_set(const std::string& dir, std::size_t size, std::size_t count, std::uint64_t seed);

struct AutoencoderData {
  Tensor train, eval;
};
AutoencoderData autoencoder_data(const RunConfig& config);

/// Initialized and stage-1 trained autoencoder.
Model autoencoder_stage1(const RunConfig& config, const Tensor& train);
Stage2Options stage2_options(const RunConfig& config, std::size_t alphabet, double beta_total);

struct AutoencoderRun {
  Model model;
  CodecEvaluation evaluation;
  std::vector<TelemetryRow> telemetry;
};

/// Stage 2 from a stage-1 model with the given alphabet, patch and beta,
/// then evaluation on `eval`.
AutoencoderRun autoencoder_point(const RunConfig& config, const Model& stage1, const AutoencoderData& data,
                                 std::size_t alphabet, std::size_t patch, double beta_total, const std::string& run_id,
                                 std::size_t threads);

/// Number of vector points whose MSE beats the scalar curve at the same
/// rate. The scalar curve is interpolated linearly in rate; below its range
/// the lowest-rate scalar MSE is used, above it no comparison is won.
std::size_t matched_rate_wins(const std::vector<RateDistortionPoint>& vector_points,
                              const std::vector<RateDistortionPoint>& scalar_points);

struct NetData {
  LabeledSet train, test;
};
NetData netcompress_data(const RunConfig& config);
Model netcompress_baseline(const RunConfig& config, const NetData& data);
NetCompressionOptions netcompress_options(const RunConfig& config, double beta_total);

/// Metrics row for a compressed classifier.
RateDistortionPoint net_point(const NetCompressionResult& result, const std::string& run_id, double beta_total,
                              std::size_t alphabet);

}  // namespace sthq
