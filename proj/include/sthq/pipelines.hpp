#pragma once

// End-to-end applications: autoencoder bottleneck compression and scalar
// quantization of classifier weights, both trained with the soft-to-hard
// rate-distortion objective.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "sthq/annealing.hpp"
#include "sthq/autodiff.hpp"
#include "sthq/datasets.hpp"
#include "sthq/entropy_coder.hpp"
#include "sthq/entropy_model.hpp"
#include "sthq/metrics.hpp"
#include "sthq/model.hpp"
#include "sthq/quantizer.hpp"

namespace sthq {

enum class LossKind { mse, cross_entropy };

struct RDObjectiveConfig {
  double beta_total = 0.0;  // weight of the summed entropy terms
  double lambda = 0.0;      // l2 weight on the regularized parameters
  LossKind loss = LossKind::mse;

  void validate() const;
};

/// One entropy term: soft assignments [m, L] and the hard histogram they
/// are scored against.
struct RateTerm {
  ad::Var assignments;
  const HistogramPMF* pmf = nullptr;
};

/// sample_loss + lambda * sum |w|^2 + beta_total * sum_k H(q_k, p_k).
/// Throws ad::NonFiniteError if the total is not finite.
ad::Var rd_loss(ad::Var sample_loss, std::span<const ad::Var> regularized, std::span<const RateTerm> rates,
                const RDObjectiveConfig& config);

/// Permutation between an [N, C, H, W] bottleneck and its patch columns.
/// Rows are ordered by channel, then image, then patch (raster); each row
/// holds one ph x pw patch in raster order.
struct PatchLayout {
  std::size_t batch = 0, channels = 0, height = 0, width = 0, ph = 1, pw = 1;
  std::shared_ptr<const std::vector<std::size_t>> to_columns;    // column slot -> bottleneck index
  std::shared_ptr<const std::vector<std::size_t>> from_columns;  // bottleneck index -> column slot

  std::size_t dim() const noexcept { return ph * pw; }
  std::size_t rows_per_channel() const noexcept { return batch * (height / ph) * (width / pw); }
  std::size_t rows() const noexcept { return channels * rows_per_channel(); }
};

PatchLayout patch_layout(std::size_t batch, std::size_t channels, std::size_t height, std::size_t width, std::size_t ph,
                         std::size_t pw);
ColumnMatrix to_columns(const Tensor& bottleneck, const PatchLayout& layout);
Tensor from_columns(const ColumnMatrix& columns, const PatchLayout& layout);

/// Called once per training iteration.
using ProgressFn = std::function<void(const TelemetryRow&)>;

struct Stage1Options {
  std::size_t iterations = 2000;
  std::size_t batch = 32;
  double learning_rate = 2e-3;
  double lambda = 0.0;
  bool unfreeze_channels = false;  // enable bottleneck channels one at a time
  std::uint64_t seed = 0;
};

/// Trains the autoencoder with an identity bottleneck.
Model train_autoencoder_stage1(const Tensor& images, Model model, const Stage1Options& options);

struct Stage2Options {
  std::size_t alphabet = 256;
  RDObjectiveConfig objective;
  std::size_t iterations = 1500;
  std::size_t batch = 32;
  double learning_rate = 5e-4;
  double half_life = 10.0;        // T
  std::optional<double> gain;     // K_G; default gain_scale * sigma0 / gap0
  double gain_scale = 3.0;
  /// The feedback rule sees an exponential moving average of the per-batch
  /// gap with this coefficient (0 uses the raw batch gap).
  double gap_smoothing = 0.9;
  std::optional<double> sigma0;   // default from center initialization
  std::size_t init_iterations = 400;
  std::size_t histogram_capacity = 20;  // iterations kept by the running histograms
  std::size_t histogram_interval = 5;
  std::size_t probe_images = 256;       // images used to measure gap(0)
  std::uint64_t seed = 0;
};

struct Stage2Result {
  Model model;  // weights and quantizer state, rounded to f32
  std::vector<TelemetryRow> telemetry;
  AnnealState final_state;
};

/// Initializes centers and sigma_0 from stage-1 bottleneck columns, then
/// minimizes the rate-distortion objective while annealing sigma by gap
/// feedback. Per-channel histograms and entropy terms share sigma and beta.
Stage2Result train_autoencoder_stage2(const Tensor& images, Model model, const Stage2Options& options,
                                      const ProgressFn& progress = {});

/// Hard-quantized reconstruction of every image, without entropy coding.
Tensor reconstruct_hard(const Model& model, const Tensor& images);
/// Per-channel symbol streams of a batch of images.
std::vector<SymbolStream> encode_symbols(const Model& model, const Tensor& images);

/// Compressed image: "STHI" | version u8 | model hash u64 | width u16 |
/// height u16 | channel count u16 | one STHQ container per channel.
struct ImageArtifact {
  std::uint64_t model_hash = 0;
  std::size_t width = 0, height = 0;
  std::vector<Bitstream> channels;

  std::vector<std::uint8_t> serialize() const;
  static ImageArtifact parse(std::span<const std::uint8_t> bytes);
  std::uint64_t payload_bits() const;
};

std::uint64_t model_hash(const Model& model);

/// image: [1, 1, H, W] with values in [0, 1].
ImageArtifact compress_image(const Tensor& image, const Model& model);
Tensor decompress_image(const ImageArtifact& artifact, const Model& model);

struct CodecEvaluation {
  RateDistortionPoint point;
  std::vector<SymbolStream> streams;  // per channel, over all images
  Tensor reconstruction;              // hard, before 8-bit rounding
};

/// Codes every channel of the image set as one stream with the model's
/// tables; rate = payload bits / pixels. Distortion is measured on 8-bit
/// reconstructions. Images are processed on up to `threads` threads.
CodecEvaluation evaluate_codec(const Model& model, const Tensor& images, std::size_t threads = 1);

/// STHQ_THREADS if set, else the hardware concurrency (at least 1).
std::size_t evaluation_threads();

struct ClassifierOptions {
  std::size_t iterations = 4000;
  std::size_t batch = 128;
  double learning_rate = 0.05;
  double momentum = 0.9;
  double lambda = 0.0;
  std::uint64_t seed = 0;
};

/// Baseline trainer: SGD with momentum on cross-entropy, cosine-decayed rate.
Model train_classifier(const LabeledSet& train, Model model, const ClassifierOptions& options);

struct NetCompressionOptions {
  std::size_t alphabet = 16;
  RDObjectiveConfig objective{0.0, 0.0, LossKind::cross_entropy};
  std::size_t max_soft_iterations = 6000;  // upper bound before the hard switch
  std::size_t finetune_iterations = 800;
  std::size_t batch = 128;
  double learning_rate = 0.01;
  /// Each center's gradient sums over every weight assigned to it; the
  /// default rate is learning_rate * L / d.
  std::optional<double> center_learning_rate;
  double momentum = 0.9;
  double growth = 1.001;
  double switch_factor = 20.0;  // hard switch once sigma reaches this multiple of sigma_0
  std::optional<double> sigma0;
  std::size_t init_iterations = 500;
  std::size_t histogram_capacity = 1;
  std::size_t histogram_interval = 1;
  CoderId coder = CoderId::arithmetic;
  std::uint64_t seed = 0;
};

struct NetCompressionResult {
  Model model;  // weights decoded from `bitstream`
  Bitstream bitstream;
  SymbolStream symbols;
  CenterSet centers;
  double baseline_accuracy = 0.0;
  double accuracy = 0.0;          // from the decoded bitstream
  double in_memory_accuracy = 0.0;  // from the in-memory hard-quantized weights
  double entropy_bits = 0.0;      // H(p) of the final symbol stream
  double bits_per_weight = 0.0;   // serialized container bits / weight count
  std::size_t hard_switch_iteration = 0;
  std::vector<TelemetryRow> telemetry;
};

/// Scalar soft-to-hard quantization of all classifier parameters with an
/// exponential sigma schedule, a hard switch and center fine-tuning.
NetCompressionResult train_net_compression(const LabeledSet& train, const LabeledSet& test, const Model& pretrained,
                                           const NetCompressionOptions& options, const ProgressFn& progress = {});

/// Classifier weights decoded from a weight container.
Model decode_weights(const Model& spec_model, const Bitstream& bitstream);

}  // namespace sthq
