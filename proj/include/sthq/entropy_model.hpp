#pragma once

// Histogram probability models over symbols and the entropy terms built on
// them. All entropies are in bits.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <span>
#include <vector>

#include "sthq/autodiff.hpp"
#include "sthq/quantizer.hpp"
#include "sthq/symbols.hpp"

namespace sthq {

/// Floor applied to p_j inside log p_j when p is used as a code model.
inline constexpr double kProbabilityFloor = 1e-9;

/// Probability mass function over L symbols. `counts` is empty when the
/// PMF was built directly from probabilities.
struct HistogramPMF {
  std::vector<double> probs;
  std::vector<double> counts;

  static HistogramPMF from_counts(std::vector<double> counts);
  /// Validates non-negativity and a total of 1 within 1e-9.
  static HistogramPMF from_probs(std::vector<double> probs);

  std::size_t size() const noexcept { return probs.size(); }
};

HistogramPMF hard_histogram(std::span<const SymbolStream> streams, std::size_t alphabet);
HistogramPMF hard_histogram(const SymbolStream& stream, std::size_t alphabet);

/// q_j = mean over columns of phi_j(column).
HistogramPMF soft_histogram(const ColumnMatrix& columns, const CenterSet& centers, Hardness sigma);

/// H(p) in bits; zero-probability terms contribute nothing.
double sample_entropy(const HistogramPMF& p);

/// H(p, q) = -sum p_j log2 q_j. Throws if some p_j > 0 has q_j = 0.
double cross_entropy(const HistogramPMF& p, const HistogramPMF& q);
double kl_divergence(const HistogramPMF& p, const HistogramPMF& q);

/// m * H(p): entropy of m i.i.d. symbols drawn from p.
double joint_entropy_estimate(const HistogramPMF& p, std::size_t m);

/// -log2 max(p_j, floor) for every symbol.
std::vector<double> code_lengths(const HistogramPMF& p, double floor = kProbabilityFloor);

/// Ring buffer of per-item symbol counts; the PMF over the buffered items
/// is refreshed every `interval` calls to update().
class RunningHistogram {
 public:
  RunningHistogram(std::size_t alphabet, std::size_t capacity, std::size_t interval);

  /// Pushes the items of one training iteration. Recomputes the PMF on the
  /// first call and then on every `interval`-th call.
  /// Returns true when the PMF was recomputed.
  bool update(std::span<const SymbolStream> items);
  void recompute();

  const HistogramPMF& pmf() const;
  bool ready() const noexcept { return !pmf_.probs.empty(); }
  std::size_t buffered() const noexcept { return items_.size(); }
  std::size_t iterations() const noexcept { return iteration_; }

 private:
  std::size_t alphabet_, capacity_, interval_;
  std::deque<std::vector<std::uint64_t>> items_;
  std::vector<std::uint64_t> totals_;
  std::size_t iteration_ = 0;
  HistogramPMF pmf_;
};

namespace ad {

/// Column-wise mean of an [m, L] assignment matrix: the soft histogram q.
Var soft_histogram(Var assignments);

/// H(q, p) = -sum_j q_j log2 p_j with p constant and floored, where q is the
/// soft histogram of `assignments` ([m, L]). Additive over rows.
Var soft_cross_entropy_qp(Var assignments, const HistogramPMF& p);
Var soft_cross_entropy_qp(Var columns, Var centers, Var sigma, const HistogramPMF& p);

/// H(p, q) = -sum_j p_j log2 q_j, differentiable through q only.
Var soft_cross_entropy_pq(Var assignments, const HistogramPMF& p);

}  // namespace ad

}  // namespace sthq
