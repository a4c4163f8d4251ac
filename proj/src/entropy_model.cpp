#include "sthq/entropy_model.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>

namespace sthq {

namespace {

void require_same_size(const HistogramPMF& p, const HistogramPMF& q) {
  if (p.size() != q.size() || p.size() == 0) {
    throw std::invalid_argument("PMF size mismatch: " + std::to_string(p.size()) + " vs " + std::to_string(q.size()));
  }
}

}  // namespace

HistogramPMF HistogramPMF::from_counts(std::vector<double> counts) {
  double total = 0.0;
  for (double c : counts) {
    if (!(c >= 0.0) || !std::isfinite(c)) throw std::invalid_argument("histogram counts must be finite and non-negative");
    total += c;
  }
  if (!(total > 0.0)) throw std::invalid_argument("histogram needs a positive total count");
  HistogramPMF out;
  out.probs.reserve(counts.size());
  for (double c : counts) out.probs.push_back(c / total);
  out.counts = std::move(counts);
  return out;
}

HistogramPMF HistogramPMF::from_probs(std::vector<double> probs) {
  double total = 0.0;
  for (double v : probs) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("probabilities must be finite and non-negative");
    total += v;
  }
  if (probs.empty() || std::abs(total - 1.0) > 1e-9) {
    throw std::invalid_argument("probabilities must sum to 1, got " + std::to_string(total));
  }
  HistogramPMF out;
  out.probs = std::move(probs);
  return out;
}

HistogramPMF hard_histogram(std::span<const SymbolStream> streams, std::size_t alphabet) {
  std::vector<double> counts(alphabet, 0.0);
  std::size_t total = 0;
  for (const SymbolStream& s : streams) {
    for (std::uint32_t sym : s.symbols) {
      if (sym >= alphabet) throw std::invalid_argument("symbol " + std::to_string(sym) + " outside alphabet");
      counts[sym] += 1.0;
      ++total;
    }
  }
  if (total == 0) throw std::invalid_argument("hard_histogram: no symbols");
  return HistogramPMF::from_counts(std::move(counts));
}

HistogramPMF hard_histogram(const SymbolStream& stream, std::size_t alphabet) {
  return hard_histogram(std::span<const SymbolStream>(&stream, 1), alphabet);
}

HistogramPMF soft_histogram(const ColumnMatrix& columns, const CenterSet& centers, Hardness sigma) {
  if (columns.count() == 0) throw std::invalid_argument("soft_histogram: no columns");
  std::vector<double> sums(centers.size(), 0.0);
  for (std::size_t l = 0; l < columns.count(); ++l) {
    const auto phi = soft_assign(columns.column(l), centers, sigma);
    for (std::size_t j = 0; j < sums.size(); ++j) sums[j] += phi.probs[j];
  }
  return HistogramPMF::from_counts(std::move(sums));
}

double sample_entropy(const HistogramPMF& p) {
  double h = 0.0;
  for (double v : p.probs) {
    if (v > 0.0) h -= v * std::log2(v);
  }
  return std::max(h, 0.0);
}

double cross_entropy(const HistogramPMF& p, const HistogramPMF& q) {
  require_same_size(p, q);
  double h = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (p.probs[j] <= 0.0) continue;
    if (q.probs[j] <= 0.0) {
      throw std::domain_error("cross entropy is infinite: p_" + std::to_string(j) + " > 0 but q_" +
                              std::to_string(j) + " = 0");
    }
    h -= p.probs[j] * std::log2(q.probs[j]);
  }
  return h;
}

double kl_divergence(const HistogramPMF& p, const HistogramPMF& q) {
  require_same_size(p, q);
  double d = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (p.probs[j] <= 0.0) continue;
    if (q.probs[j] <= 0.0) throw std::domain_error("KL divergence is infinite");
    d += p.probs[j] * std::log2(p.probs[j] / q.probs[j]);
  }
  return d;
}

double joint_entropy_estimate(const HistogramPMF& p, std::size_t m) {
  if (m == 0) throw std::invalid_argument("joint_entropy_estimate: m must be at least 1");
  return static_cast<double>(m) * sample_entropy(p);
}

std::vector<double> code_lengths(const HistogramPMF& p, double floor) {
  std::vector<double> out(p.size());
  for (std::size_t j = 0; j < p.size(); ++j) out[j] = -std::log2(std::max(p.probs[j], floor));
  return out;
}

RunningHistogram::RunningHistogram(std::size_t alphabet, std::size_t capacity, std::size_t interval)
    : alphabet_(alphabet), capacity_(capacity), interval_(interval), totals_(alphabet, 0) {
  if (capacity == 0) throw std::invalid_argument("running histogram capacity must be positive");
  if (interval == 0) throw std::invalid_argument("running histogram interval must be positive");
  if (alphabet == 0) throw std::invalid_argument("running histogram alphabet must be positive");
}

bool RunningHistogram::update(std::span<const SymbolStream> items) {
  for (const SymbolStream& item : items) {
    std::vector<std::uint64_t> counts(alphabet_, 0);
    for (std::uint32_t s : item.symbols) {
      if (s >= alphabet_) throw std::invalid_argument("symbol " + std::to_string(s) + " outside alphabet");
      ++counts[s];
    }
    for (std::size_t j = 0; j < alphabet_; ++j) totals_[j] += counts[j];
    items_.push_back(std::move(counts));
    if (items_.size() > capacity_) {
      for (std::size_t j = 0; j < alphabet_; ++j) totals_[j] -= items_.front()[j];
      items_.pop_front();
    }
  }
  const bool due = iteration_ % interval_ == 0;
  ++iteration_;
  if (due) recompute();
  return due;
}

void RunningHistogram::recompute() {
  std::vector<double> counts(totals_.begin(), totals_.end());
  if (std::accumulate(counts.begin(), counts.end(), 0.0) <= 0.0) {
    throw std::logic_error("running histogram: no symbols buffered");
  }
  pmf_ = HistogramPMF::from_counts(std::move(counts));
}

const HistogramPMF& RunningHistogram::pmf() const {
  if (!ready()) throw std::logic_error("running histogram: PMF not computed yet");
  return pmf_;
}

namespace ad {

Var soft_histogram(Var assignments) {
  const Shape s = assignments.shape();
  if (s.size() != 2 || s[0] == 0) throw ShapeError("soft_histogram: expects [m, L] assignments, got " + shape_string(s));
  Graph& g = assignments.graph();
  Var ones = g.constant(Tensor({1, s[0]}, 1.0 / static_cast<double>(s[0])));
  return reshape(matmul(ones, assignments), {s[1]});
}

Var soft_cross_entropy_qp(Var assignments, const HistogramPMF& p) {
  const Shape s = assignments.shape();
  if (s.size() != 2 || s[0] == 0 || s[1] != p.size()) {
    throw ShapeError("soft_cross_entropy_qp: assignments " + shape_string(s) + " vs PMF over " +
                     std::to_string(p.size()) + " symbols");
  }
  Tensor weights({s[1]});
  const auto lengths = code_lengths(p);
  for (std::size_t j = 0; j < s[1]; ++j) weights[j] = lengths[j] / static_cast<double>(s[0]);
  return sum(mul(assignments, assignments.graph().constant(std::move(weights))));
}

Var soft_cross_entropy_qp(Var columns, Var centers, Var sigma, const HistogramPMF& p) {
  return soft_cross_entropy_qp(soft_assign(columns, centers, sigma), p);
}

Var soft_cross_entropy_pq(Var assignments, const HistogramPMF& p) {
  Var q = soft_histogram(assignments);
  if (q.size() != p.size()) throw ShapeError("soft_cross_entropy_pq: PMF size mismatch");
  Tensor weights({p.size()});
  for (std::size_t j = 0; j < p.size(); ++j) weights[j] = -p.probs[j] / std::numbers::ln2;
  return sum(mul(log(q), assignments.graph().constant(std::move(weights))));
}

}  // namespace ad

}  // namespace sthq
