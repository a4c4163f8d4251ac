#pragma once

// Generated desk-scale datasets.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "sthq/tensor.hpp"

namespace sthq {

/// Labelled points; `features` is [N, d], `labels` holds class indices.
struct LabeledSet {
  Tensor features;
  std::vector<std::uint32_t> labels;
  std::size_t classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
};

struct SpiralOptions {
  std::size_t count = 2000;   // split evenly over the two classes
  double turns = 1.75;
  double noise = 0.03;
  std::uint64_t seed = 0;
};

/// Two interleaved Archimedean spirals in [-1, 1]^2.
LabeledSet make_spirals(const SpiralOptions& options);

/// Copies the listed rows into a new set.
LabeledSet select_rows(const LabeledSet& set, const std::vector<std::size_t>& rows);

struct TextureOptions {
  std::size_t count = 256;
  std::size_t size = 16;
  std::uint64_t seed = 0;
};

/// Procedural grayscale textures (gratings, blobs, checkers) with values on
/// the 8-bit grid k/255, returned as an [N, 1, size, size] tensor.
Tensor make_textures(const TextureOptions& options);

}  // namespace sthq
