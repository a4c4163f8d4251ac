#include "sthq/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "sthq/rng.hpp"

namespace sthq {

LabeledSet make_spirals(const SpiralOptions& options) {
  if (options.count < 2) throw std::invalid_argument("make_spirals: need at least two points");
  Rng rng(options.seed, "spirals");
  LabeledSet set{Tensor({options.count, 2}), {}, 2};
  set.labels.resize(options.count);
  for (std::size_t i = 0; i < options.count; ++i) {
    const std::uint32_t cls = static_cast<std::uint32_t>(i % 2);
    const double t = rng.uniform(0.05, 1.0);
    const double angle = 2.0 * std::numbers::pi * options.turns * t + cls * std::numbers::pi;
    set.features.at(i, 0) = t * std::cos(angle) + options.noise * rng.normal();
    set.features.at(i, 1) = t * std::sin(angle) + options.noise * rng.normal();
    set.labels[i] = cls;
  }
  return set;
}

LabeledSet select_rows(const LabeledSet& set, const std::vector<std::size_t>& rows) {
  const std::size_t d = set.features.dim(1);
  LabeledSet out{Tensor({rows.size(), d}), {}, set.classes};
  out.labels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::size_t r = rows[i];
    if (r >= set.size()) throw std::out_of_range("select_rows: row out of range");
    std::copy_n(set.features.data().begin() + static_cast<std::ptrdiff_t>(r * d), d,
                out.features.data().begin() + static_cast<std::ptrdiff_t>(i * d));
    out.labels.push_back(set.labels[r]);
  }
  return out;
}

namespace {

void grating(Rng& rng, std::span<double> img, std::size_t n) {
  const int waves = 1 + static_cast<int>(rng.index(2));
  for (int w = 0; w < waves; ++w) {
    const double theta = rng.uniform(0.0, std::numbers::pi);
    const double period = rng.uniform(3.0, 12.0);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double amp = rng.uniform(0.15, 0.35);
    const double kx = std::cos(theta) * 2.0 * std::numbers::pi / period;
    const double ky = std::sin(theta) * 2.0 * std::numbers::pi / period;
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) img[y * n + x] += amp * std::sin(kx * x + ky * y + phase);
  }
}

void blobs(Rng& rng, std::span<double> img, std::size_t n) {
  const int count = 2 + static_cast<int>(rng.index(3));
  for (int b = 0; b < count; ++b) {
    const double cx = rng.uniform(0.0, n), cy = rng.uniform(0.0, n);
    const double r = rng.uniform(1.5, n / 3.0);
    const double amp = rng.uniform(-0.45, 0.45);
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) {
        const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        img[y * n + x] += amp * std::exp(-d2 / (2 * r * r));
      }
  }
}

void checker(Rng& rng, std::span<double> img, std::size_t n) {
  const double period = rng.uniform(3.0, 8.0);
  const double theta = rng.uniform(0.0, std::numbers::pi / 2);
  const double amp = rng.uniform(0.2, 0.4);
  const double c = std::cos(theta), s = std::sin(theta);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const double u = (c * x + s * y) / period, v = (-s * x + c * y) / period;
      const double sq = std::tanh(3 * std::sin(std::numbers::pi * u)) * std::tanh(3 * std::sin(std::numbers::pi * v));
      img[y * n + x] += amp * sq;
    }
}

}  // namespace

Tensor make_textures(const TextureOptions& options) {
  const std::size_t n = options.size;
  if (n == 0 || options.count == 0) throw std::invalid_argument("make_textures: empty request");
  Tensor out({options.count, 1, n, n});
  for (std::size_t i = 0; i < options.count; ++i) {
    Rng rng(derive_seed(options.seed, "texture", i));
    std::span<double> img = out.data().subspan(i * n * n, n * n);
    const double base = rng.uniform(0.3, 0.7);
    std::fill(img.begin(), img.end(), base);
    switch (rng.index(3)) {
      case 0: grating(rng, img, n); break;
      case 1: blobs(rng, img, n); break;
      default: checker(rng, img, n); break;
    }
    if (rng.index(2) == 0) {
      const double gx = rng.uniform(-0.2, 0.2) / n, gy = rng.uniform(-0.2, 0.2) / n;
      for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) img[y * n + x] += gx * x + gy * y;
    }
    for (double& v : img) v = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
  }
  return out;
}

}  // namespace sthq
