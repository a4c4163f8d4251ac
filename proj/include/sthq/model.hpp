#pragma once

// Layer stacks for the two desk pipelines and the "STHM" model file.
//
// Model file layout (little-endian):
//   "STHM" | version u8 = 1 | kind u8 | input C,H,W u16 each | layer count u16 |
//   per layer: kind u8, activation u8, in u32, out u32, kernel u8, stride u8, padding u8 |
//   bottleneck u16 | patch h u8, w u8 |
//   parameter count u64 | parameters f32 (weight then bias, layer by layer) |
//   quantizer flag u8 | [sigma f64 | centers (CenterSet bytes) | channel count u16 |
//                        per channel: L u32 frequencies]

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "sthq/autodiff.hpp"
#include "sthq/entropy_coder.hpp"
#include "sthq/quantizer.hpp"
#include "sthq/tensor.hpp"

namespace sthq {

enum class ModelKind : std::uint8_t { classifier = 0, autoencoder = 1 };
enum class LayerKind : std::uint8_t { dense = 0, conv = 1, upsample = 2 };
enum class Activation : std::uint8_t { none = 0, relu = 1 };

struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  Activation activation = Activation::none;
  std::uint32_t in = 0;   // features or channels
  std::uint32_t out = 0;
  std::uint8_t kernel = 0;
  std::uint8_t stride = 1;
  std::uint8_t padding = 0;

  bool has_params() const noexcept { return kind != LayerKind::upsample; }
  bool operator==(const LayerSpec&) const = default;
};

struct ModelSpec {
  ModelKind kind = ModelKind::classifier;
  std::uint16_t input_channels = 1, input_height = 0, input_width = 0;  // autoencoder input
  std::vector<LayerSpec> layers;
  std::size_t bottleneck = 0;  // number of encoder layers (autoencoder)
  std::uint8_t patch_h = 1, patch_w = 1;

  /// Checks layer chaining; for autoencoders also that the output shape
  /// equals the input shape and the bottleneck is smaller than the input.
  void validate() const;
  std::size_t parameter_count() const;
  /// Shape [C, H, W] after the first `layers` layers (autoencoder).
  std::vector<std::size_t> feature_shape(std::size_t layers) const;
  std::size_t patch_dim() const noexcept { return std::size_t{patch_h} * patch_w; }
  bool operator==(const ModelSpec&) const = default;
};

/// Dense classifier with ReLU between layers: sizes {in, h1, ..., classes}.
ModelSpec mlp_spec(const std::vector<std::uint32_t>& sizes);

/// conv(s2) -> conv(s2) bottleneck -> upsample+conv -> upsample+conv.
ModelSpec autoencoder_spec(std::size_t image_size, std::uint32_t hidden, std::uint32_t channels, std::uint8_t patch);

/// Trained quantization state carried alongside autoencoder weights.
struct QuantizerState {
  CenterSet centers;
  double sigma = 1.0;
  std::vector<FrequencyTable> tables;  // one per bottleneck channel
};

struct Model {
  ModelSpec spec;
  std::vector<Tensor> params;  // weight, bias for every layer with parameters
  std::optional<QuantizerState> quantizer;

  /// He-normal weights, zero biases.
  static Model init(ModelSpec spec, std::uint64_t seed);

  /// All parameters concatenated in file order.
  std::vector<double> flat_params() const;
  void set_flat_params(std::span<const double> values);
  /// Rounds parameters (and centers) to f32 so a saved model reloads exactly.
  void round_to_float();

  std::vector<std::uint8_t> serialize() const;
  static Model parse(std::span<const std::uint8_t> bytes);
  void save(const std::filesystem::path& path) const;
  static Model load(const std::filesystem::path& path);
};

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

namespace ad {

/// Applies layers [begin, end) of `spec` to x; `params` holds one Var per
/// parameter tensor of the whole model, in Model::params order.
Var apply_layers(const ModelSpec& spec, std::span<const Var> params, std::size_t begin, std::size_t end, Var x);

/// Mean over the batch of -log softmax(logits)[label].
Var cross_entropy_loss(Var logits, std::span<const std::uint32_t> labels);

/// Mean squared error over all elements.
Var mse_loss(Var prediction, Var target);

}  // namespace ad

/// Forward pass without gradients.
Tensor forward(const Model& model, const Tensor& input, std::size_t begin, std::size_t end);
double classification_accuracy(const Model& model, const Tensor& features, std::span<const std::uint32_t> labels);

}  // namespace sthq
