#pragma once

// Soft and hard vector quantization against a learnable set of centers.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "sthq/autodiff.hpp"
#include "sthq/symbols.hpp"
#include "sthq/tensor.hpp"

namespace sthq {

/// Hardness sigma of the soft assignment; always positive and finite.
class Hardness {
 public:
  explicit Hardness(double sigma);
  double value() const noexcept { return sigma_; }

 private:
  double sigma_;
};

/// L centers in R^dim, stored as an [L, dim] tensor (row j is center j).
class CenterSet {
 public:
  explicit CenterSet(Tensor points);
  CenterSet(std::size_t count, std::size_t dim, std::vector<double> coords);

  std::size_t size() const noexcept { return points_.dim(0); }
  std::size_t dim() const noexcept { return points_.dim(1); }
  std::span<const double> center(std::size_t j) const { return points_.data().subspan(j * dim(), dim()); }
  const Tensor& points() const noexcept { return points_; }

  /// Replaces all coordinates; shape must match.
  void assign(const Tensor& points);
  /// Rounds every coordinate to the nearest IEEE-754 single so in-memory
  /// decoding matches what a serialized artifact reproduces.
  void round_to_float();

  /// dim (u16 LE), L (u16 LE), then L*dim f32 LE values, center by center.
  std::vector<std::uint8_t> serialize() const;
  static CenterSet deserialize(std::span<const std::uint8_t> bytes, std::size_t* consumed = nullptr);

 private:
  void validate() const;
  Tensor points_;
};

/// m points of R^dim stored as rows of an [m, dim] tensor.
class ColumnMatrix {
 public:
  ColumnMatrix(std::size_t count, std::size_t dim);
  explicit ColumnMatrix(Tensor columns);

  std::size_t count() const noexcept { return columns_.dim(0); }
  std::size_t dim() const noexcept { return columns_.dim(1); }
  std::span<const double> column(std::size_t l) const { return columns_.data().subspan(l * dim(), dim()); }
  std::span<double> column(std::size_t l) { return columns_.data().subspan(l * dim(), dim()); }
  const Tensor& tensor() const noexcept { return columns_; }

  /// Inverse of reshape_columns.
  std::vector<double> flatten() const { return columns_.values(); }

  bool operator==(const ColumnMatrix& other) const { return columns_.values() == other.columns_.values() && dim() == other.dim(); }

 private:
  Tensor columns_;
};

/// Splits z into consecutive runs of `dim` values; `dim` must divide |z|.
ColumnMatrix reshape_columns(std::span<const double> z, std::size_t dim);

struct SoftAssignment {
  std::vector<double> probs;
};

SoftAssignment soft_assign(std::span<const double> point, const CenterSet& centers, Hardness sigma);

/// Index of the nearest center; ties go to the smallest index.
std::size_t hard_assign(std::span<const double> point, const CenterSet& centers);

/// Convex combination of centers weighted by the soft assignment.
std::vector<double> soft_quantize(std::span<const double> point, const CenterSet& centers, Hardness sigma);

struct HardQuantization {
  SymbolStream symbols;
  ColumnMatrix reconstruction;
};

HardQuantization hard_quantize(const ColumnMatrix& columns, const CenterSet& centers);

/// Decoder: picks the center of every symbol.
ColumnMatrix dequantize(const SymbolStream& symbols, const CenterSet& centers);

/// Mean over samples of |z - soft_quantize(z)|^2.
double cluster_energy(const ColumnMatrix& samples, const CenterSet& centers, Hardness sigma);

struct CenterInitOptions {
  std::size_t iterations = 1000;
  double learning_rate = 0.1;  // cosine-decayed to zero
  std::size_t batch = 256;
  std::uint64_t seed = 0;
  /// When unset, sigma_0 = 1 / (2 * mean squared distance of the samples to
  /// their nearest seed center), clamped to [sigma_min, sigma_max].
  std::optional<double> sigma0;
  double sigma_min = 1e-2;
  double sigma_max = 10.0;
};

struct CenterInit {
  CenterSet centers;
  double sigma0;
};

/// Seeds L centers from the samples, then refines them by SGD on the soft
/// cluster energy at fixed sigma_0.
CenterInit init_centers(const ColumnMatrix& samples, std::size_t count, const CenterInitOptions& options = {});

namespace ad {

/// Rows of softmax(-sigma * |z - c_j|^2) for every row z of `columns`.
/// columns: [m, dim], centers: [L, dim], sigma: single element. Returns [m, L].
Var soft_assign(Var columns, Var centers, Var sigma);

/// soft_assign(columns) * centers, shape [m, dim].
Var soft_quantize(Var columns, Var centers, Var sigma);

}  // namespace ad

}  // namespace sthq
