#include "sthq/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>

#include "sthq/byte_io.hpp"
#include "sthq/rng.hpp"

namespace sthq {

void validate(const SymbolStream& stream) {
  for (std::uint32_t s : stream.symbols) {
    if (s >= stream.alphabet) {
      throw std::invalid_argument("symbol " + std::to_string(s) + " outside alphabet of size " +
                                  std::to_string(stream.alphabet));
    }
  }
}

namespace {

void require_finite(std::span<const double> values, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v)) throw std::invalid_argument(std::string(what) + ": non-finite input");
  }
}

void require_dim(std::span<const double> point, const CenterSet& centers, const char* what) {
  if (point.size() != centers.dim()) {
    throw ShapeError(std::string(what) + ": point has " + std::to_string(point.size()) +
                     " coordinates, centers have " + std::to_string(centers.dim()));
  }
  require_finite(point, what);
}

// Expanded squared distances |z|^2 - 2 z.c_j + |c_j|^2.
std::vector<double> expanded_distances(std::span<const double> point, const CenterSet& centers) {
  double znorm = 0.0;
  for (double v : point) znorm += v * v;
  std::vector<double> out(centers.size());
  for (std::size_t j = 0; j < centers.size(); ++j) {
    const auto c = centers.center(j);
    double dot = 0.0, cnorm = 0.0;
    for (std::size_t k = 0; k < c.size(); ++k) {
      dot += point[k] * c[k];
      cnorm += c[k] * c[k];
    }
    out[j] = znorm - 2.0 * dot + cnorm;
  }
  return out;
}

double direct_distance(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) d += (a[k] - b[k]) * (a[k] - b[k]);
  return d;
}

}  // namespace

Hardness::Hardness(double sigma) : sigma_(sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw std::invalid_argument("hardness sigma must be positive and finite, got " + std::to_string(sigma));
  }
}

CenterSet::CenterSet(Tensor points) : points_(std::move(points)) { validate(); }

CenterSet::CenterSet(std::size_t count, std::size_t dim, std::vector<double> coords)
    : points_({count, dim}, std::move(coords)) {
  validate();
}

void CenterSet::validate() const {
  if (points_.rank() != 2) throw ShapeError("center set must be an [L, dim] tensor, got " + shape_string(points_.shape()));
  if (points_.dim(0) < 2) throw std::invalid_argument("center set needs at least 2 centers");
  if (points_.dim(1) < 1) throw std::invalid_argument("center dimension must be at least 1");
  if (!points_.all_finite()) throw std::invalid_argument("center coordinates must be finite");
}

void CenterSet::assign(const Tensor& points) {
  if (points.shape() != points_.shape()) {
    throw ShapeError("center update shape " + shape_string(points.shape()) + " != " + shape_string(points_.shape()));
  }
  points_ = points;
  validate();
}

void CenterSet::round_to_float() {
  for (double& v : points_.data()) v = static_cast<double>(static_cast<float>(v));
}

std::vector<std::uint8_t> CenterSet::serialize() const {
  if (size() > 0xffff || dim() > 0xffff) throw std::length_error("center set too large for u16 header");
  ByteWriter w;
  w.u16(static_cast<std::uint16_t>(dim()));
  w.u16(static_cast<std::uint16_t>(size()));
  for (double v : points_.data()) w.f32(static_cast<float>(v));
  return w.take();
}

CenterSet CenterSet::deserialize(std::span<const std::uint8_t> bytes, std::size_t* consumed) {
  ByteReader r(bytes);
  const std::size_t dim = r.u16();
  const std::size_t count = r.u16();
  std::vector<double> coords(count * dim);
  for (double& v : coords) v = r.f32();
  if (consumed) *consumed = r.position();
  try {
    return CenterSet(count, dim, std::move(coords));
  } catch (const std::exception& e) {
    throw FormatError(std::string("center set: ") + e.what());
  }
}

ColumnMatrix::ColumnMatrix(std::size_t count, std::size_t dim) : columns_({count, dim}) {}

ColumnMatrix::ColumnMatrix(Tensor columns) : columns_(std::move(columns)) {
  if (columns_.rank() != 2) throw ShapeError("column matrix must be [m, dim], got " + shape_string(columns_.shape()));
}

ColumnMatrix reshape_columns(std::span<const double> z, std::size_t dim) {
  if (dim == 0 || z.size() % dim != 0) {
    throw std::invalid_argument("reshape_columns: dim " + std::to_string(dim) + " does not divide length " +
                                std::to_string(z.size()));
  }
  return ColumnMatrix(Tensor({z.size() / dim, dim}, std::vector<double>(z.begin(), z.end())));
}

SoftAssignment soft_assign(std::span<const double> point, const CenterSet& centers, Hardness sigma) {
  require_dim(point, centers, "soft_assign");
  std::vector<double> logits = expanded_distances(point, centers);
  for (double& v : logits) v *= -sigma.value();
  const double peak = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double& v : logits) total += (v = std::exp(v - peak));
  for (double& v : logits) v /= total;
  return {std::move(logits)};
}

std::size_t hard_assign(std::span<const double> point, const CenterSet& centers) {
  require_dim(point, centers, "hard_assign");
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < centers.size(); ++j) {
    const double d = direct_distance(point, centers.center(j));
    if (d < best_d) {
      best_d = d;
      best = j;
    }
  }
  return best;
}

std::vector<double> soft_quantize(std::span<const double> point, const CenterSet& centers, Hardness sigma) {
  const SoftAssignment phi = soft_assign(point, centers, sigma);
  std::vector<double> out(centers.dim(), 0.0);
  for (std::size_t j = 0; j < centers.size(); ++j) {
    const auto c = centers.center(j);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += phi.probs[j] * c[k];
  }
  return out;
}

HardQuantization hard_quantize(const ColumnMatrix& columns, const CenterSet& centers) {
  if (columns.dim() != centers.dim()) {
    throw ShapeError("hard_quantize: columns of dim " + std::to_string(columns.dim()) + ", centers of dim " +
                     std::to_string(centers.dim()));
  }
  SymbolStream symbols{std::vector<std::uint32_t>(columns.count()), static_cast<std::uint32_t>(centers.size())};
  for (std::size_t l = 0; l < columns.count(); ++l) {
    symbols.symbols[l] = static_cast<std::uint32_t>(hard_assign(columns.column(l), centers));
  }
  ColumnMatrix recon = dequantize(symbols, centers);
  return {std::move(symbols), std::move(recon)};
}

ColumnMatrix dequantize(const SymbolStream& symbols, const CenterSet& centers) {
  if (symbols.alphabet != centers.size()) {
    throw std::invalid_argument("dequantize: alphabet " + std::to_string(symbols.alphabet) + " != center count " +
                                std::to_string(centers.size()));
  }
  validate(symbols);
  ColumnMatrix out(symbols.size(), centers.dim());
  for (std::size_t l = 0; l < symbols.size(); ++l) {
    const auto c = centers.center(symbols.symbols[l]);
    std::copy(c.begin(), c.end(), out.column(l).begin());
  }
  return out;
}

double cluster_energy(const ColumnMatrix& samples, const CenterSet& centers, Hardness sigma) {
  if (samples.count() == 0) throw std::invalid_argument("cluster_energy: no samples");
  double total = 0.0;
  for (std::size_t l = 0; l < samples.count(); ++l) {
    const auto q = soft_quantize(samples.column(l), centers, sigma);
    total += direct_distance(samples.column(l), q);
  }
  return total / static_cast<double>(samples.count());
}

CenterInit init_centers(const ColumnMatrix& samples, std::size_t count, const CenterInitOptions& options) {
  const std::size_t n = samples.count();
  const std::size_t dim = samples.dim();
  if (count < 2) throw std::invalid_argument("init_centers: need at least 2 centers");
  if (n < count) {
    throw std::invalid_argument("init_centers: " + std::to_string(n) + " samples cannot seed " +
                                std::to_string(count) + " centers");
  }
  require_finite(samples.tensor().data(), "init_centers");

  // Seeding: draw without replacement, each draw weighted by the squared
  // distance to the closest center picked so far (uniform for the first).
  Rng rng(options.seed, "init_centers");
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  std::vector<bool> taken(n, false);
  std::vector<double> coords;
  coords.reserve(count * dim);
  for (std::size_t j = 0; j < count; ++j) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!taken[i] && std::isfinite(nearest[i])) total += nearest[i];
    }
    std::size_t pick = n;
    if (j > 0 && total > 0.0) {
      double target = rng.uniform(0.0, total);
      for (std::size_t i = 0; i < n; ++i) {
        if (taken[i] || nearest[i] <= 0.0) continue;
        pick = i;
        target -= nearest[i];
        if (target <= 0.0) break;
      }
    } else {
      std::size_t k = rng.index(n - j);
      for (std::size_t i = 0; i < n; ++i) {
        if (taken[i]) continue;
        if (k-- == 0) {
          pick = i;
          break;
        }
      }
    }
    taken[pick] = true;
    const auto c = samples.column(pick);
    coords.insert(coords.end(), c.begin(), c.end());
    for (std::size_t i = 0; i < n; ++i) nearest[i] = std::min(nearest[i], direct_distance(samples.column(i), c));
  }
  CenterSet centers(count, dim, std::move(coords));

  double sigma0 = 0.0;
  if (options.sigma0) {
    sigma0 = Hardness(*options.sigma0).value();
  } else {
    const double msd = std::accumulate(nearest.begin(), nearest.end(), 0.0) / static_cast<double>(n);
    sigma0 = msd > 0.0 ? 1.0 / (2.0 * msd) : options.sigma_max;
    sigma0 = std::clamp(sigma0, options.sigma_min, options.sigma_max);
  }

  const std::size_t batch = std::min(options.batch, n);
  Tensor points = centers.points();
  for (std::size_t it = 0; it < options.iterations; ++it) {
    Tensor chosen({batch, dim});
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t i = batch == n ? b : rng.index(n);
      const auto z = samples.column(i);
      std::copy(z.begin(), z.end(), chosen.data().begin() + static_cast<std::ptrdiff_t>(b * dim));
    }
    ad::Graph g;
    ad::Var c = g.variable(points);
    ad::Var z = g.constant(std::move(chosen));
    ad::Var s = g.constant(Tensor::scalar(sigma0));
    ad::Var energy = ad::scale(ad::squared_error(z, ad::soft_quantize(z, c, s)), 1.0 / static_cast<double>(batch));
    g.backward(energy);
    const double lr = options.learning_rate * 0.5 *
                      (1.0 + std::cos(std::numbers::pi * static_cast<double>(it) / static_cast<double>(options.iterations)));
    auto grad = c.grad().data();
    auto p = points.data();
    for (std::size_t k = 0; k < p.size(); ++k) p[k] -= lr * grad[k];
  }
  centers.assign(points);
  return {std::move(centers), sigma0};
}

namespace ad {

Var soft_assign(Var columns, Var centers, Var sigma) {
  if (sigma.size() != 1) throw ShapeError("soft_assign: sigma must hold one element, got " + shape_string(sigma.shape()));
  return softmax(mul(sq_dist(columns, centers), scale(sigma, -1.0)));
}

Var soft_quantize(Var columns, Var centers, Var sigma) {
  return matmul(soft_assign(columns, centers, sigma), centers);
}

}  // namespace ad

}  // namespace sthq
