#include "sthq/pipelines.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <stdexcept>
#include <string>
#include <thread>

#include "sthq/byte_io.hpp"
#include "sthq/image_io.hpp"
#include "sthq/optim.hpp"
#include "sthq/rng.hpp"

namespace sthq {

void RDObjectiveConfig::validate() const {
  if (!(beta_total >= 0.0) || !std::isfinite(beta_total)) throw std::invalid_argument("beta_total must be finite and >= 0");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw std::invalid_argument("lambda must be finite and >= 0");
}

ad::Var rd_loss(ad::Var sample_loss, std::span<const ad::Var> regularized, std::span<const RateTerm> rates,
                const RDObjectiveConfig& config) {
  config.validate();
  ad::Var total = sample_loss;
  if (config.lambda > 0.0)
    for (const auto& w : regularized) total = total + ad::scale(ad::sum(w * w), config.lambda);
  if (config.beta_total > 0.0 && !rates.empty()) {
    ad::Var rate = ad::soft_cross_entropy_qp(rates[0].assignments, *rates[0].pmf);
    for (std::size_t k = 1; k < rates.size(); ++k) rate = rate + ad::soft_cross_entropy_qp(rates[k].assignments, *rates[k].pmf);
    total = total + ad::scale(rate, config.beta_total);
  }
  if (!std::isfinite(total.value().item()))
    throw ad::NonFiniteError("rd_loss: non-finite objective (sample loss " + std::to_string(sample_loss.value().item()) + ")");
  return total;
}

PatchLayout patch_layout(std::size_t batch, std::size_t channels, std::size_t height, std::size_t width, std::size_t ph,
                         std::size_t pw) {
  if (ph == 0 || pw == 0 || height % ph != 0 || width % pw != 0)
    throw std::invalid_argument("bottleneck " + std::to_string(height) + "x" + std::to_string(width) +
                                " is not divisible into " + std::to_string(ph) + "x" + std::to_string(pw) + " patches");
  PatchLayout l{batch, channels, height, width, ph, pw, nullptr, nullptr};
  const std::size_t n = batch * channels * height * width;
  auto to = std::make_shared<std::vector<std::size_t>>(n);
  auto from = std::make_shared<std::vector<std::size_t>>(n);
  const std::size_t gx = width / pw, gy = height / ph;
  std::size_t slot = 0;
  for (std::size_t k = 0; k < channels; ++k)
    for (std::size_t i = 0; i < batch; ++i)
      for (std::size_t py = 0; py < gy; ++py)
        for (std::size_t px = 0; px < gx; ++px)
          for (std::size_t dy = 0; dy < ph; ++dy)
            for (std::size_t dx = 0; dx < pw; ++dx) {
              const std::size_t src = ((i * channels + k) * height + py * ph + dy) * width + px * pw + dx;
              (*to)[slot] = src;
              (*from)[src] = slot;
              ++slot;
            }
  l.to_columns = std::move(to);
  l.from_columns = std::move(from);
  return l;
}

ColumnMatrix to_columns(const Tensor& bottleneck, const PatchLayout& layout) {
  if (bottleneck.size() != layout.to_columns->size()) throw std::invalid_argument("to_columns: bottleneck size does not match layout");
  Tensor t({layout.rows(), layout.dim()});
  for (std::size_t s = 0; s < t.size(); ++s) t[s] = bottleneck[(*layout.to_columns)[s]];
  return ColumnMatrix(std::move(t));
}

Tensor from_columns(const ColumnMatrix& columns, const PatchLayout& layout) {
  if (columns.tensor().size() != layout.from_columns->size()) throw std::invalid_argument("from_columns: column count does not match layout");
  Tensor out({layout.batch, layout.channels, layout.height, layout.width});
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = columns.tensor()[(*layout.from_columns)[i]];
  return out;
}

namespace {

class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::size_t batch, std::uint64_t seed, std::string_view tag)
      : rng_(seed, tag), order_(n), batch_(std::min(batch, n)) {
    if (n == 0 || batch == 0) throw std::invalid_argument("empty dataset or batch");
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    pos_ = n;
  }

  std::vector<std::size_t> next() {
    std::vector<std::size_t> out;
    out.reserve(batch_);
    while (out.size() < batch_) {
      if (pos_ == order_.size()) {
        std::shuffle(order_.begin(), order_.end(), rng_.engine());
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t batch_;
  std::size_t pos_ = 0;
};

Tensor take_rows(const Tensor& t, std::span<const std::size_t> rows) {
  Shape shape = t.shape();
  const std::size_t stride = t.size() / shape[0];
  shape[0] = rows.size();
  Tensor out(shape);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(t.data().begin() + static_cast<std::ptrdiff_t>(rows[i] * stride), stride,
                out.data().begin() + static_cast<std::ptrdiff_t>(i * stride));
  return out;
}

Tensor first_rows(const Tensor& t, std::size_t n) {
  std::vector<std::size_t> rows(std::min(n, t.dim(0)));
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return take_rows(t, rows);
}

std::vector<ad::Var> variables(ad::Graph& g, const std::vector<Tensor>& params) {
  std::vector<ad::Var> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(g.variable(p));
  return out;
}

void check_images(const Model& model, const Tensor& images) {
  if (model.spec.kind != ModelKind::autoencoder) throw std::invalid_argument("expected an autoencoder model");
  if (images.rank() != 4 || images.dim(1) != model.spec.input_channels || images.dim(0) == 0)
    throw std::invalid_argument("images must be [N, " + std::to_string(model.spec.input_channels) + ", H, W], got " +
                                shape_string(images.shape()));
  const std::size_t factor = std::size_t{model.spec.input_height} / model.spec.feature_shape(model.spec.bottleneck)[1];
  const std::size_t need_h = factor * model.spec.patch_h, need_w = factor * model.spec.patch_w;
  if (images.dim(2) % need_h != 0 || images.dim(3) % need_w != 0)
    throw std::invalid_argument("image size " + std::to_string(images.dim(3)) + "x" + std::to_string(images.dim(2)) +
                                " must have width divisible by " + std::to_string(need_w) + " and height divisible by " +
                                std::to_string(need_h));
}

PatchLayout layout_for(const Model& model, const Tensor& bottleneck) {
  return patch_layout(bottleneck.dim(0), bottleneck.dim(1), bottleneck.dim(2), bottleneck.dim(3), model.spec.patch_h,
                      model.spec.patch_w);
}

const QuantizerState& quantizer_of(const Model& model) {
  if (!model.quantizer) throw std::invalid_argument("model has no trained quantizer");
  return *model.quantizer;
}

SymbolStream channel_stream(const SymbolStream& all, std::size_t k, std::size_t per_channel) {
  SymbolStream s{{}, all.alphabet};
  s.symbols.assign(all.symbols.begin() + static_cast<std::ptrdiff_t>(k * per_channel),
                   all.symbols.begin() + static_cast<std::ptrdiff_t>((k + 1) * per_channel));
  return s;
}

struct SoftHardErrors {
  double e_soft, e_hard;
};

// Soft and hard reconstruction errors of a batch without gradients.
SoftHardErrors soft_hard_errors(const Model& model, const CenterSet& centers, double sigma, const Tensor& x) {
  const std::size_t bn = model.spec.bottleneck, end = model.spec.layers.size();
  const Tensor z = forward(model, x, 0, bn);
  const PatchLayout layout = layout_for(model, z);
  const ColumnMatrix cols = to_columns(z, layout);
  ColumnMatrix soft(cols.count(), cols.dim());
  for (std::size_t r = 0; r < cols.count(); ++r) {
    const auto q = soft_quantize(cols.column(r), centers, Hardness(sigma));
    std::copy(q.begin(), q.end(), soft.column(r).begin());
  }
  const HardQuantization hq = hard_quantize(cols, centers);
  const Tensor out_s = forward(model, from_columns(soft, layout), bn, end);
  const Tensor out_h = forward(model, from_columns(hq.reconstruction, layout), bn, end);
  return {mse(out_s.data(), x.data()), mse(out_h.data(), x.data())};
}

template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += threads) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

Model train_autoencoder_stage1(const Tensor& images, Model model, const Stage1Options& options) {
  check_images(model, images);
  const std::size_t bn = model.spec.bottleneck, end = model.spec.layers.size();
  const auto bshape = model.spec.feature_shape(bn);
  Adam adam(options.learning_rate);
  BatchSampler sampler(images.dim(0), options.batch, options.seed, "stage1");
  const RDObjectiveConfig reg{0.0, options.lambda, LossKind::mse};
  for (std::size_t it = 0; it < options.iterations; ++it) {
    const Tensor x = take_rows(images, sampler.next());
    ad::Graph g;
    const auto params = variables(g, model.params);
    const ad::Var xv = g.constant(x);
    ad::Var z = ad::apply_layers(model.spec, params, 0, bn, xv);
    if (options.unfreeze_channels) {
      const std::size_t active = std::min(bshape[0], 1 + it * bshape[0] / std::max<std::size_t>(1, options.iterations));
      Tensor mask({z.shape()[1], z.shape()[2], z.shape()[3]});
      std::fill_n(mask.data().begin(), active * z.shape()[2] * z.shape()[3], 1.0);
      z = z * g.constant(mask);
    }
    const ad::Var out = ad::apply_layers(model.spec, params, bn, end, z);
    const ad::Var loss = rd_loss(ad::mse_loss(out, xv), params, {}, reg);
    g.backward(loss);
    std::vector<Tensor*> ps;
    std::vector<const Tensor*> gs;
    for (std::size_t i = 0; i < params.size(); ++i) {
      ps.push_back(&model.params[i]);
      gs.push_back(&params[i].grad());
    }
    adam.step(ps, gs);
  }
  return model;
}

Stage2Result train_autoencoder_stage2(const Tensor& images, Model model, const Stage2Options& options,
                                      const ProgressFn& progress) {
  check_images(model, images);
  options.objective.validate();
  const std::size_t bn = model.spec.bottleneck, end = model.spec.layers.size();
  const std::size_t L = options.alphabet;

  // Centers and sigma_0 from the stage-1 bottleneck columns.
  const Tensor z_all = forward(model, images, 0, bn);
  const ColumnMatrix all_cols = to_columns(z_all, layout_for(model, z_all));
  CenterInitOptions init_opts;
  init_opts.iterations = options.init_iterations;
  init_opts.seed = derive_seed(options.seed, "stage2-centers");
  init_opts.sigma0 = options.sigma0;
  init_opts.sigma_min = 1e-6;
  init_opts.sigma_max = 1e9;
  CenterInit init = init_centers(all_cols, L, init_opts);
  CenterSet centers = std::move(init.centers);
  const double sigma0 = init.sigma0;

  const Tensor probe = first_rows(images, options.probe_images);
  const SoftHardErrors e0 = soft_hard_errors(model, centers, sigma0, probe);
  // A non-positive initial gap would make the target curve meaningless;
  // fall back to a small fraction of the hard error.
  const double gap0 = std::max(gap(e0.e_soft, e0.e_hard), 0.05 * e0.e_hard);
  const double gain = options.gain.value_or(options.gain_scale * sigma0 / gap0);
  AnnealState state = make_gap_feedback(sigma0, gap0, options.half_life, gain);
  if (!(options.gap_smoothing >= 0.0 && options.gap_smoothing < 1.0)) throw std::invalid_argument("gap_smoothing must lie in [0, 1)");
  double smoothed_gap = gap0;

  const std::size_t channels = z_all.dim(1);
  std::vector<RunningHistogram> hist;
  for (std::size_t k = 0; k < channels; ++k) hist.emplace_back(L, options.histogram_capacity, options.histogram_interval);

  Adam adam(options.learning_rate);
  BatchSampler sampler(images.dim(0), options.batch, options.seed, "stage2");
  Tensor center_points = centers.points();
  Stage2Result result{Model{}, {}, {}};
  result.telemetry.reserve(options.iterations);

  for (std::size_t it = 0; it < options.iterations; ++it) {
    const Tensor x = take_rows(images, sampler.next());
    ad::Graph g;
    const auto params = variables(g, model.params);
    const ad::Var C = g.variable(center_points);
    const ad::Var sig = g.constant(Tensor::scalar(state.sigma));
    const ad::Var xv = g.constant(x);
    const ad::Var z = ad::apply_layers(model.spec, params, 0, bn, xv);
    const PatchLayout layout = layout_for(model, z.value());
    const ad::Var cols = ad::gather(z, layout.to_columns, {layout.rows(), layout.dim()});
    const ad::Var phi = ad::soft_assign(cols, C, sig);
    const ad::Var zq = ad::gather(ad::matmul(phi, C), layout.from_columns, z.shape());
    const ad::Var e_soft = ad::mse_loss(ad::apply_layers(model.spec, params, bn, end, zq), xv);

    const HardQuantization hq = hard_quantize(ColumnMatrix(cols.value()), centers);
    const std::size_t per = layout.rows_per_channel();
    std::vector<RateTerm> rates;
    double entropy = 0.0;
    for (std::size_t k = 0; k < channels; ++k) {
      const SymbolStream s = channel_stream(hq.symbols, k, per);
      hist[k].update(std::span(&s, 1));
      entropy += sample_entropy(hist[k].pmf()) / static_cast<double>(channels);
      rates.push_back({ad::slice(phi, 0, k * per, (k + 1) * per), &hist[k].pmf()});
    }
    const ad::Var loss = rd_loss(e_soft, params, rates, options.objective);
    g.backward(loss);

    const Tensor out_h = forward(model, from_columns(hq.reconstruction, layout), bn, end);
    const double e_hard = mse(out_h.data(), x.data());
    const double gap_t = gap(e_soft.value().item(), e_hard);
    const TelemetryRow row{state.t, state.sigma, e_soft.value().item(), e_hard, gap_t, target_gap(state), entropy};
    result.telemetry.push_back(row);
    if (progress) progress(row);

    std::vector<Tensor*> ps;
    std::vector<const Tensor*> gs;
    for (std::size_t i = 0; i < params.size(); ++i) {
      ps.push_back(&model.params[i]);
      gs.push_back(&params[i].grad());
    }
    ps.push_back(&center_points);
    gs.push_back(&C.grad());
    adam.step(ps, gs);
    centers.assign(center_points);
    smoothed_gap = options.gap_smoothing * smoothed_gap + (1.0 - options.gap_smoothing) * gap_t;
    state = gap_feedback_step(state, smoothed_gap);
  }

  model.quantizer = QuantizerState{centers, state.sigma, {}};
  model.round_to_float();
  const auto streams = encode_symbols(model, images);
  for (const auto& s : streams) model.quantizer->tables.push_back(freq_table(s));
  result.model = std::move(model);
  result.final_state = state;
  return result;
}

std::vector<SymbolStream> encode_symbols(const Model& model, const Tensor& images) {
  check_images(model, images);
  const QuantizerState& q = quantizer_of(model);
  const Tensor z = forward(model, images, 0, model.spec.bottleneck);
  const PatchLayout layout = layout_for(model, z);
  const HardQuantization hq = hard_quantize(to_columns(z, layout), q.centers);
  std::vector<SymbolStream> out;
  for (std::size_t k = 0; k < layout.channels; ++k) out.push_back(channel_stream(hq.symbols, k, layout.rows_per_channel()));
  return out;
}

Tensor reconstruct_hard(const Model& model, const Tensor& images) {
  check_images(model, images);
  const QuantizerState& q = quantizer_of(model);
  const Tensor z = forward(model, images, 0, model.spec.bottleneck);
  const PatchLayout layout = layout_for(model, z);
  const HardQuantization hq = hard_quantize(to_columns(z, layout), q.centers);
  return forward(model, from_columns(hq.reconstruction, layout), model.spec.bottleneck, model.spec.layers.size());
}

std::uint64_t model_hash(const Model& model) { return fnv1a(model.serialize()); }

std::vector<std::uint8_t> ImageArtifact::serialize() const {
  ByteWriter w;
  w.tag("STHI");
  w.u8(1);
  w.u64(model_hash);
  w.u16(static_cast<std::uint16_t>(width));
  w.u16(static_cast<std::uint16_t>(height));
  w.u16(static_cast<std::uint16_t>(channels.size()));
  for (const auto& c : channels) w.raw(c.serialize());
  return w.take();
}

ImageArtifact ImageArtifact::parse(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_tag("STHI", "image artifact");
  if (const auto v = r.u8(); v != 1) throw FormatError("image artifact: unsupported version " + std::to_string(v));
  ImageArtifact a;
  a.model_hash = r.u64();
  a.width = r.u16();
  a.height = r.u16();
  const std::size_t count = r.u16();
  if (a.width == 0 || a.height == 0 || count == 0) throw FormatError("image artifact: empty image or no channels");
  for (std::size_t k = 0; k < count; ++k) {
    std::size_t used = 0;
    a.channels.push_back(Bitstream::parse(bytes.subspan(r.position()), &used));
    r.raw(used);
  }
  if (r.remaining() != 0) throw FormatError("image artifact: trailing bytes");
  return a;
}

std::uint64_t ImageArtifact::payload_bits() const {
  std::uint64_t bits = 0;
  for (const auto& c : channels) bits += c.payload.bits;
  return bits;
}

namespace {

std::vector<float> center_floats(const CenterSet& centers) {
  std::vector<float> out;
  out.reserve(centers.points().size());
  for (double v : centers.points().values()) out.push_back(static_cast<float>(v));
  return out;
}

}  // namespace

ImageArtifact compress_image(const Tensor& image, const Model& model) {
  if (image.rank() != 4 || image.dim(0) != 1) throw std::invalid_argument("compress_image expects one [1, 1, H, W] image");
  const QuantizerState& q = quantizer_of(model);
  const auto streams = encode_symbols(model, image);
  if (q.tables.size() != streams.size()) throw std::invalid_argument("model has no frequency table for every channel");
  ImageArtifact a;
  a.model_hash = model_hash(model);
  a.width = image.dim(3);
  a.height = image.dim(2);
  const auto floats = center_floats(q.centers);
  for (std::size_t k = 0; k < streams.size(); ++k)
    a.channels.push_back(encode_stream(streams[k], q.tables[k], CoderId::arithmetic, floats,
                                       static_cast<std::uint16_t>(q.centers.dim())));
  return a;
}

Tensor decompress_image(const ImageArtifact& artifact, const Model& model) {
  const QuantizerState& q = quantizer_of(model);
  if (artifact.model_hash != model_hash(model)) throw FormatError("image artifact was produced by a different model");
  check_images(model, Tensor({1, model.spec.input_channels, artifact.height, artifact.width}));
  const auto bshape = model.spec.feature_shape(model.spec.bottleneck);
  const std::size_t factor = std::size_t{model.spec.input_height} / bshape[1];
  const PatchLayout layout =
      patch_layout(1, bshape[0], artifact.height / factor, artifact.width / factor, model.spec.patch_h, model.spec.patch_w);
  if (artifact.channels.size() != layout.channels) throw FormatError("image artifact: channel count does not match the model");
  const auto floats = center_floats(q.centers);
  ColumnMatrix cols(layout.rows(), layout.dim());
  for (std::size_t k = 0; k < layout.channels; ++k) {
    const Bitstream& b = artifact.channels[k];
    if (b.centers != floats || b.dim != q.centers.dim()) throw FormatError("image artifact: centers differ from the model");
    if (b.symbol_count != layout.rows_per_channel()) throw FormatError("image artifact: symbol count does not match image size");
    const SymbolStream s = decode_stream(b);
    const ColumnMatrix part = dequantize(s, q.centers);
    for (std::size_t r = 0; r < part.count(); ++r) {
      const auto src = part.column(r);
      std::copy(src.begin(), src.end(), cols.column(k * layout.rows_per_channel() + r).begin());
    }
  }
  return forward(model, from_columns(cols, layout), model.spec.bottleneck, model.spec.layers.size());
}

std::size_t evaluation_threads() {
  if (const char* env = std::getenv("STHQ_THREADS")) {
    char* endp = nullptr;
    const long v = std::strtol(env, &endp, 10);
    if (endp != env && *endp == '\0' && v >= 1) return static_cast<std::size_t>(v);
    throw std::invalid_argument(std::string("STHQ_THREADS must be a positive integer, got '") + env + "'");
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

CodecEvaluation evaluate_codec(const Model& model, const Tensor& images, std::size_t threads) {
  check_images(model, images);
  const QuantizerState& q = quantizer_of(model);
  const std::size_t n = images.dim(0);
  std::vector<std::vector<SymbolStream>> per_image(n);
  std::vector<Tensor> recon(n);
  parallel_for(n, threads, [&](std::size_t i) {
    const std::size_t row = i;
    const Tensor x = take_rows(images, std::span(&row, 1));
    per_image[i] = encode_symbols(model, x);
    recon[i] = reconstruct_hard(model, x);
  });

  const std::size_t channels = per_image[0].size();
  if (q.tables.size() != channels) throw std::invalid_argument("model has no frequency table for every channel");
  CodecEvaluation ev;
  std::uint64_t bits = 0;
  double weighted_entropy = 0.0;
  std::size_t symbols = 0;
  for (std::size_t k = 0; k < channels; ++k) {
    SymbolStream s{{}, static_cast<std::uint32_t>(q.centers.size())};
    for (std::size_t i = 0; i < n; ++i) s.symbols.insert(s.symbols.end(), per_image[i][k].symbols.begin(), per_image[i][k].symbols.end());
    bits += arith_encode(s, q.tables[k]).bits;
    weighted_entropy += static_cast<double>(s.symbols.size()) * sample_entropy(hard_histogram(s, q.centers.size()));
    symbols += s.symbols.size();
    ev.streams.push_back(std::move(s));
  }

  ev.reconstruction = Tensor(images.shape());
  std::uint64_t sq = 0;
  const std::size_t pixels_per = images.size() / n;
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(recon[i].values().begin(), recon[i].values().end(),
              ev.reconstruction.data().begin() + static_cast<std::ptrdiff_t>(i * pixels_per));
    for (std::size_t p = 0; p < pixels_per; ++p) {
      const long a = std::clamp(std::lround(images[i * pixels_per + p] * 255.0), 0L, 255L);
      const long b = std::clamp(std::lround(recon[i][p] * 255.0), 0L, 255L);
      sq += static_cast<std::uint64_t>((a - b) * (a - b));
    }
  }
  auto& pt = ev.point;
  pt.alphabet = q.centers.size();
  pt.dim = q.centers.dim();
  pt.coded_bits = bits;
  pt.rate = static_cast<double>(bits) / static_cast<double>(images.size());
  pt.entropy_bits = weighted_entropy / static_cast<double>(symbols);
  pt.mse = static_cast<double>(sq) / static_cast<double>(images.size());
  pt.psnr_db = psnr(*pt.mse, 255.0);
  return ev;
}

Model train_classifier(const LabeledSet& train, Model model, const ClassifierOptions& options) {
  if (model.spec.kind != ModelKind::classifier) throw std::invalid_argument("train_classifier expects a classifier model");
  SgdMomentum sgd(options.learning_rate, options.momentum);
  BatchSampler sampler(train.size(), options.batch, options.seed, "classifier");
  const RDObjectiveConfig reg{0.0, options.lambda, LossKind::cross_entropy};
  const double pi = std::acos(-1.0);
  for (std::size_t it = 0; it < options.iterations; ++it) {
    sgd.set_learning_rate(options.learning_rate * 0.5 *
                          (1.0 + std::cos(pi * static_cast<double>(it) / static_cast<double>(options.iterations))));
    const LabeledSet batch = select_rows(train, sampler.next());
    ad::Graph g;
    const auto params = variables(g, model.params);
    const ad::Var logits = ad::apply_layers(model.spec, params, 0, model.spec.layers.size(), g.constant(batch.features));
    const ad::Var loss = rd_loss(ad::cross_entropy_loss(logits, batch.labels), params, {}, reg);
    g.backward(loss);
    std::vector<Tensor*> ps;
    std::vector<const Tensor*> gs;
    for (std::size_t i = 0; i < params.size(); ++i) {
      ps.push_back(&model.params[i]);
      gs.push_back(&params[i].grad());
    }
    sgd.step(ps, gs);
  }
  return model;
}

namespace {

// Splits a [d, 1] column of all parameters back into parameter shapes.
std::vector<ad::Var> split_params(const Model& model, ad::Var flat) {
  std::vector<ad::Var> out;
  std::size_t offset = 0;
  for (const auto& p : model.params) {
    out.push_back(ad::reshape(ad::slice(flat, 0, offset, offset + p.size()), p.shape()));
    offset += p.size();
  }
  return out;
}

double batch_cross_entropy(const Model& model, const LabeledSet& batch) {
  ad::Graph g;
  std::vector<ad::Var> params;
  for (const auto& p : model.params) params.push_back(g.constant(p));
  const ad::Var logits = ad::apply_layers(model.spec, params, 0, model.spec.layers.size(), g.constant(batch.features));
  return ad::cross_entropy_loss(logits, batch.labels).value().item();
}

}  // namespace

Model decode_weights(const Model& spec_model, const Bitstream& bitstream) {
  if (bitstream.dim != 1) throw FormatError("weight container must hold scalar centers");
  if (bitstream.symbol_count != spec_model.spec.parameter_count())
    throw FormatError("weight container holds " + std::to_string(bitstream.symbol_count) + " symbols, model needs " +
                      std::to_string(spec_model.spec.parameter_count()));
  const SymbolStream s = decode_stream(bitstream);
  std::vector<double> w(s.symbols.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<double>(bitstream.centers[s.symbols[i]]);
  Model out = spec_model;
  out.quantizer.reset();
  out.set_flat_params(w);
  return out;
}

NetCompressionResult train_net_compression(const LabeledSet& train, const LabeledSet& test, const Model& pretrained,
                                           const NetCompressionOptions& options, const ProgressFn& progress) {
  if (pretrained.spec.kind != ModelKind::classifier) throw std::invalid_argument("train_net_compression expects a classifier");
  options.objective.validate();
  const std::size_t L = options.alphabet;
  Model model = pretrained;
  model.quantizer.reset();
  const std::size_t d = model.spec.parameter_count();

  CenterInitOptions init_opts;
  init_opts.iterations = options.init_iterations;
  init_opts.seed = derive_seed(options.seed, "net-centers");
  init_opts.sigma0 = options.sigma0;
  init_opts.sigma_min = 1e-6;
  init_opts.sigma_max = 1e12;
  const std::vector<double> w0 = model.flat_params();
  CenterInit init = init_centers(reshape_columns(w0, 1), L, init_opts);
  CenterSet centers = std::move(init.centers);
  Tensor center_points = centers.points();

  NetCompressionResult res{Model{}, {}, {}, centers, 0.0, 0.0, 0.0, 0.0, 0.0, 0, {}};
  res.baseline_accuracy = classification_accuracy(model, test.features, test.labels);

  AnnealState state = make_exponential(init.sigma0, options.growth);
  const HardSwitchPolicy policy = HardSwitchPolicy::growth_factor(options.switch_factor);
  RunningHistogram hist(L, options.histogram_capacity, options.histogram_interval);
  const double center_lr =
      options.center_learning_rate.value_or(options.learning_rate * static_cast<double>(L) / static_cast<double>(d));
  SgdMomentum sgd(options.learning_rate, options.momentum);
  SgdMomentum center_sgd(center_lr, options.momentum);
  BatchSampler sampler(train.size(), options.batch, options.seed, "netcompress");

  std::size_t it = 0;
  for (; it < options.max_soft_iterations && !hard_switch_reached(state, policy); ++it) {
    const LabeledSet batch = select_rows(train, sampler.next());
    ad::Graph g;
    const auto params = variables(g, model.params);
    std::vector<ad::Var> parts;
    for (const auto& p : params) parts.push_back(ad::reshape(p, {p.size(), 1}));
    const ad::Var cols = ad::concat(parts, 0);
    const ad::Var C = g.variable(center_points);
    const ad::Var phi = ad::soft_assign(cols, C, g.constant(Tensor::scalar(state.sigma)));
    const auto soft_params = split_params(model, ad::matmul(phi, C));
    const ad::Var logits = ad::apply_layers(model.spec, soft_params, 0, model.spec.layers.size(), g.constant(batch.features));
    const ad::Var e_soft = ad::cross_entropy_loss(logits, batch.labels);

    const HardQuantization hq = hard_quantize(ColumnMatrix(cols.value()), centers);
    hist.update(std::span(&hq.symbols, 1));
    const RateTerm rate{phi, &hist.pmf()};
    const ad::Var loss = rd_loss(e_soft, params, std::span(&rate, 1), options.objective);
    g.backward(loss);

    Model hard = model;
    hard.set_flat_params(hq.reconstruction.flatten());
    const double e_hard = batch_cross_entropy(hard, batch);
    const TelemetryRow row{state.t, state.sigma, e_soft.value().item(), e_hard, gap(e_soft.value().item(), e_hard), 0.0,
                           sample_entropy(hist.pmf())};
    res.telemetry.push_back(row);
    if (progress) progress(row);

    std::vector<Tensor*> ps;
    std::vector<const Tensor*> gs;
    for (std::size_t i = 0; i < params.size(); ++i) {
      ps.push_back(&model.params[i]);
      gs.push_back(&params[i].grad());
    }
    sgd.step(ps, gs);
    center_sgd.step({&center_points}, {&C.grad()});
    centers.assign(center_points);
    state = exponential_step(state);
  }
  res.hard_switch_iteration = it;

  // Hard assignments are fixed from here on; only the centers move.
  const HardQuantization frozen = hard_quantize(reshape_columns(model.flat_params(), 1), centers);
  auto index = std::make_shared<std::vector<std::size_t>>(frozen.symbols.symbols.begin(), frozen.symbols.symbols.end());
  SgdMomentum finetune(center_lr / 10.0, options.momentum);
  for (std::size_t f = 0; f < options.finetune_iterations; ++f) {
    const LabeledSet batch = select_rows(train, sampler.next());
    ad::Graph g;
    const ad::Var C = g.variable(center_points);
    const auto hard_params = split_params(model, ad::gather(C, index, {d, 1}));
    const ad::Var logits = ad::apply_layers(model.spec, hard_params, 0, model.spec.layers.size(), g.constant(batch.features));
    const ad::Var loss = ad::cross_entropy_loss(logits, batch.labels);
    if (!std::isfinite(loss.value().item())) throw ad::NonFiniteError("fine-tuning loss is not finite");
    g.backward(loss);
    finetune.step({&center_points}, {&C.grad()});
  }
  centers.assign(center_points);
  centers.round_to_float();

  res.symbols = frozen.symbols;
  res.centers = centers;
  const FrequencyTable table = freq_table(res.symbols);
  res.bitstream = encode_stream(res.symbols, table, options.coder, center_floats(centers), 1);

  Model in_memory = model;
  in_memory.set_flat_params(dequantize(res.symbols, centers).flatten());
  res.in_memory_accuracy = classification_accuracy(in_memory, test.features, test.labels);
  const Bitstream parsed = Bitstream::parse(res.bitstream.serialize());
  res.model = decode_weights(model, parsed);
  res.accuracy = classification_accuracy(res.model, test.features, test.labels);
  res.entropy_bits = sample_entropy(hard_histogram(res.symbols, L));
  res.bits_per_weight = static_cast<double>(res.bitstream.total_bits()) / static_cast<double>(d);
  return res;
}

}  // namespace sthq
