#include "sthq/model.hpp"

#include <cmath>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>

#include "sthq/byte_io.hpp"
#include "sthq/rng.hpp"

namespace sthq {

namespace {

constexpr std::uint8_t kModelVersion = 1;

std::vector<Shape> param_shapes(const LayerSpec& l) {
  if (l.kind == LayerKind::dense) return {{l.in, l.out}, {l.out}};
  if (l.kind == LayerKind::conv) return {{l.out, l.in, l.kernel, l.kernel}, {l.out}};
  return {};
}

std::vector<Shape> all_param_shapes(const ModelSpec& spec) {
  std::vector<Shape> out;
  for (const auto& l : spec.layers)
    for (auto& s : param_shapes(l)) out.push_back(std::move(s));
  return out;
}

std::string layer_label(std::size_t i) { return "layer " + std::to_string(i) + ": "; }

}  // namespace

void ModelSpec::validate() const {
  if (layers.empty()) throw std::invalid_argument("model has no layers");
  if (kind == ModelKind::classifier) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      if (l.kind != LayerKind::dense) throw std::invalid_argument(layer_label(i) + "classifiers use dense layers only");
      if (l.in == 0 || l.out == 0) throw std::invalid_argument(layer_label(i) + "zero width");
      if (i > 0 && layers[i - 1].out != l.in) throw std::invalid_argument(layer_label(i) + "input width does not match previous layer");
    }
    return;
  }
  if (input_height == 0 || input_width == 0 || input_channels == 0) throw std::invalid_argument("autoencoder input shape is empty");
  if (bottleneck == 0 || bottleneck >= layers.size()) throw std::invalid_argument("autoencoder bottleneck must split the layers");
  std::vector<std::size_t> shape{input_channels, input_height, input_width};
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.kind == LayerKind::dense) throw std::invalid_argument(layer_label(i) + "autoencoders use conv and upsample layers");
    if (l.kind == LayerKind::upsample) {
      shape[1] *= 2;
      shape[2] *= 2;
      continue;
    }
    if (l.in != shape[0]) throw std::invalid_argument(layer_label(i) + "input channels do not match");
    if (l.kernel == 0 || l.stride == 0) throw std::invalid_argument(layer_label(i) + "kernel and stride must be positive");
    for (std::size_t a = 1; a < 3; ++a) {
      const std::size_t padded = shape[a] + 2 * std::size_t{l.padding};
      if (padded < l.kernel) throw std::invalid_argument(layer_label(i) + "kernel larger than input");
      shape[a] = (padded - l.kernel) / l.stride + 1;
    }
    shape[0] = l.out;
  }
  if (shape != std::vector<std::size_t>{input_channels, input_height, input_width})
    throw std::invalid_argument("autoencoder output shape differs from its input shape");
  const auto b = feature_shape(bottleneck);
  if (b[0] * b[1] * b[2] >= std::size_t{input_channels} * input_height * input_width)
    throw std::invalid_argument("bottleneck must be smaller than the input");
  if (patch_h == 0 || patch_w == 0 || b[1] % patch_h != 0 || b[2] % patch_w != 0)
    throw std::invalid_argument("bottleneck " + std::to_string(b[1]) + "x" + std::to_string(b[2]) +
                                " is not divisible into " + std::to_string(patch_h) + "x" + std::to_string(patch_w) + " patches");
}

std::size_t ModelSpec::parameter_count() const {
  std::size_t n = 0;
  for (const auto& s : all_param_shapes(*this)) n += shape_size(s);
  return n;
}

std::vector<std::size_t> ModelSpec::feature_shape(std::size_t count) const {
  std::vector<std::size_t> shape{input_channels, input_height, input_width};
  for (std::size_t i = 0; i < count && i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.kind == LayerKind::upsample) {
      shape[1] *= 2;
      shape[2] *= 2;
    } else if (l.kind == LayerKind::conv) {
      for (std::size_t a = 1; a < 3; ++a) shape[a] = (shape[a] + 2 * std::size_t{l.padding} - l.kernel) / l.stride + 1;
      shape[0] = l.out;
    }
  }
  return shape;
}

ModelSpec mlp_spec(const std::vector<std::uint32_t>& sizes) {
  if (sizes.size() < 2) throw std::invalid_argument("mlp_spec needs at least input and output sizes");
  ModelSpec spec;
  spec.kind = ModelKind::classifier;
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i)
    spec.layers.push_back({LayerKind::dense, i + 2 < sizes.size() ? Activation::relu : Activation::none, sizes[i], sizes[i + 1]});
  spec.validate();
  return spec;
}

ModelSpec autoencoder_spec(std::size_t image_size, std::uint32_t hidden, std::uint32_t channels, std::uint8_t patch) {
  if (image_size % 4 != 0) throw std::invalid_argument("autoencoder image size must be divisible by 4");
  ModelSpec spec;
  spec.kind = ModelKind::autoencoder;
  spec.input_channels = 1;
  spec.input_height = spec.input_width = static_cast<std::uint16_t>(image_size);
  spec.layers = {
      {LayerKind::conv, Activation::relu, 1, hidden, 3, 2, 1},
      {LayerKind::conv, Activation::none, hidden, channels, 3, 2, 1},
      {LayerKind::upsample, Activation::none, channels, channels},
      {LayerKind::conv, Activation::relu, channels, hidden, 3, 1, 1},
      {LayerKind::upsample, Activation::none, hidden, hidden},
      {LayerKind::conv, Activation::none, hidden, 1, 3, 1, 1},
  };
  spec.bottleneck = 2;
  spec.patch_h = spec.patch_w = patch;
  spec.validate();
  return spec;
}

Model Model::init(ModelSpec spec, std::uint64_t seed) {
  spec.validate();
  Model m;
  m.spec = std::move(spec);
  Rng rng(seed, "model-init");
  for (const auto& shape : all_param_shapes(m.spec)) {
    Tensor t(shape);
    if (shape.size() > 1) {
      const std::size_t fan_in = shape.size() == 2 ? shape[0] : shape_size(shape) / shape[0];
      const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
      for (double& v : t.values()) v = sd * rng.normal();
    }
    m.params.push_back(std::move(t));
  }
  return m;
}

std::vector<double> Model::flat_params() const {
  std::vector<double> out;
  for (const auto& p : params) out.insert(out.end(), p.values().begin(), p.values().end());
  return out;
}

void Model::set_flat_params(std::span<const double> values) {
  std::size_t offset = 0;
  for (auto& p : params) {
    if (offset + p.size() > values.size()) throw std::invalid_argument("set_flat_params: too few values");
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(offset), p.size(), p.values().begin());
    offset += p.size();
  }
  if (offset != values.size()) throw std::invalid_argument("set_flat_params: too many values");
}

void Model::round_to_float() {
  for (auto& p : params)
    for (double& v : p.values()) v = static_cast<double>(static_cast<float>(v));
  if (quantizer) quantizer->centers.round_to_float();
}

std::vector<std::uint8_t> Model::serialize() const {
  spec.validate();
  ByteWriter w;
  w.tag("STHM");
  w.u8(kModelVersion);
  w.u8(static_cast<std::uint8_t>(spec.kind));
  w.u16(spec.input_channels);
  w.u16(spec.input_height);
  w.u16(spec.input_width);
  w.u16(static_cast<std::uint16_t>(spec.layers.size()));
  for (const auto& l : spec.layers) {
    w.u8(static_cast<std::uint8_t>(l.kind));
    w.u8(static_cast<std::uint8_t>(l.activation));
    w.u32(l.in);
    w.u32(l.out);
    w.u8(l.kernel);
    w.u8(l.stride);
    w.u8(l.padding);
  }
  w.u16(static_cast<std::uint16_t>(spec.bottleneck));
  w.u8(spec.patch_h);
  w.u8(spec.patch_w);
  w.u64(spec.parameter_count());
  for (const auto& p : params)
    for (double v : p.values()) w.f32(static_cast<float>(v));
  w.u8(quantizer ? 1 : 0);
  if (quantizer) {
    w.f64(quantizer->sigma);
    w.raw(quantizer->centers.serialize());
    w.u16(static_cast<std::uint16_t>(quantizer->tables.size()));
    for (const auto& t : quantizer->tables) {
      if (t.size() != quantizer->centers.size()) throw std::invalid_argument("frequency table size differs from center count");
      for (auto f : t.freqs()) w.u32(f);
    }
  }
  return w.take();
}

Model Model::parse(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_tag("STHM", "model");
  if (const auto v = r.u8(); v != kModelVersion) throw FormatError("model: unsupported version " + std::to_string(v));
  Model m;
  const auto kind = r.u8();
  if (kind > 1) throw FormatError("model: unknown kind " + std::to_string(kind));
  m.spec.kind = static_cast<ModelKind>(kind);
  m.spec.input_channels = r.u16();
  m.spec.input_height = r.u16();
  m.spec.input_width = r.u16();
  const std::size_t count = r.u16();
  for (std::size_t i = 0; i < count; ++i) {
    LayerSpec l;
    const auto lk = r.u8(), act = r.u8();
    if (lk > 2 || act > 1) throw FormatError("model: bad layer " + std::to_string(i));
    l.kind = static_cast<LayerKind>(lk);
    l.activation = static_cast<Activation>(act);
    l.in = r.u32();
    l.out = r.u32();
    l.kernel = r.u8();
    l.stride = r.u8();
    l.padding = r.u8();
    m.spec.layers.push_back(l);
  }
  m.spec.bottleneck = r.u16();
  m.spec.patch_h = r.u8();
  m.spec.patch_w = r.u8();
  try {
    m.spec.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("model: invalid spec: ") + e.what());
  }
  const std::uint64_t n = r.u64();
  if (n != m.spec.parameter_count()) throw FormatError("model: parameter count does not match layers");
  if (n * 4 > r.remaining()) throw FormatError("model: truncated parameters");
  for (const auto& shape : all_param_shapes(m.spec)) {
    Tensor t(shape);
    for (double& v : t.values()) v = r.f32();
    if (!t.all_finite()) throw FormatError("model: non-finite parameter");
    m.params.push_back(std::move(t));
  }
  if (r.u8() == 1) {
    const double sigma = r.f64();
    std::size_t used = 0;
    CenterSet centers = [&] {
      try {
        return CenterSet::deserialize(bytes.subspan(r.position()), &used);
      } catch (const std::invalid_argument& e) {
        throw FormatError(std::string("model: bad centers: ") + e.what());
      }
    }();
    r.raw(used);
    QuantizerState q{std::move(centers), sigma, {}};
    const std::size_t channels = r.u16();
    for (std::size_t c = 0; c < channels; ++c) {
      std::vector<std::uint32_t> f(q.centers.size());
      for (auto& v : f) v = r.u32();
      try {
        q.tables.emplace_back(std::move(f));
      } catch (const std::invalid_argument& e) {
        throw FormatError(std::string("model: bad frequency table: ") + e.what());
      }
    }
    m.quantizer = std::move(q);
  }
  if (r.remaining() != 0) throw FormatError("model: trailing bytes");
  return m;
}

void Model::save(const std::filesystem::path& path) const { write_file(path, serialize()); }

Model Model::load(const std::filesystem::path& path) { return parse(read_file(path)); }

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

namespace ad {

Var apply_layers(const ModelSpec& spec, std::span<const Var> params, std::size_t begin, std::size_t end, Var x) {
  std::size_t p = 0;
  for (std::size_t i = 0; i < begin; ++i) p += spec.layers[i].has_params() ? 2 : 0;
  for (std::size_t i = begin; i < end; ++i) {
    const auto& l = spec.layers[i];
    switch (l.kind) {
      case LayerKind::dense: x = matmul(x, params[p]) + params[p + 1]; break;
      case LayerKind::conv: x = conv2d(x, params[p], params[p + 1], l.stride, l.padding); break;
      case LayerKind::upsample: x = upsample2x(x); break;
    }
    if (l.has_params()) p += 2;
    if (l.activation == Activation::relu) x = relu(x);
  }
  return x;
}

Var cross_entropy_loss(Var logits, std::span<const std::uint32_t> labels) {
  const std::size_t n = logits.shape()[0], k = logits.shape()[1];
  if (labels.size() != n) throw std::invalid_argument("cross_entropy_loss: label count differs from batch size");
  auto idx = std::make_shared<std::vector<std::size_t>>(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= k) throw std::invalid_argument("cross_entropy_loss: label out of range");
    (*idx)[i] = i * k + labels[i];
  }
  return scale(mean(gather(log_softmax(logits), idx, {n})), -1.0);
}

Var mse_loss(Var prediction, Var target) {
  return scale(squared_error(prediction, target), 1.0 / static_cast<double>(prediction.size()));
}

}  // namespace ad

Tensor forward(const Model& model, const Tensor& input, std::size_t begin, std::size_t end) {
  ad::Graph g;
  std::vector<ad::Var> params;
  for (const auto& p : model.params) params.push_back(g.constant(p));
  return ad::apply_layers(model.spec, params, begin, end, g.constant(input)).value();
}

double classification_accuracy(const Model& model, const Tensor& features, std::span<const std::uint32_t> labels) {
  const Tensor logits = forward(model, features, 0, model.spec.layers.size());
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (logits.at(i, j) > logits.at(i, best)) best = j;
    correct += best == labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace sthq
