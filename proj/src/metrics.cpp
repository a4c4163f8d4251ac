#include "sthq/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>

namespace sthq {

double mse(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) throw std::invalid_argument("mse: inputs must be non-empty and equally sized");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return acc / static_cast<double>(a.size());
}

double mse(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  if (a.size() != b.size() || a.empty()) throw std::invalid_argument("mse: inputs must be non-empty and equally sized");
  std::uint64_t acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const int d = int{a[i]} - int{b[i]};
    acc += static_cast<std::uint64_t>(d * d);
  }
  return static_cast<double>(acc) / static_cast<double>(a.size());
}

double psnr(double mse, double max_value) {
  if (!(mse >= 0.0)) throw std::invalid_argument("psnr: mse must be non-negative");
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(max_value * max_value / mse);
}

std::string metrics_header() { return "run_id,beta_total,L,dim,bpp_or_bpw,H_p_bits,coded_bits,mse,psnr_db,accuracy"; }

namespace {

std::string num(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string opt(const std::optional<double>& v) { return v ? num(*v) : std::string(); }

}  // namespace

std::string format_metrics(const RateDistortionPoint& p) {
  return p.run_id + ',' + num(p.beta_total) + ',' + std::to_string(p.alphabet) + ',' + std::to_string(p.dim) + ',' +
         num(p.rate) + ',' + num(p.entropy_bits) + ',' + std::to_string(p.coded_bits) + ',' + opt(p.mse) + ',' +
         opt(p.psnr_db) + ',' + opt(p.accuracy);
}

MetricsWriter::MetricsWriter(std::ostream& out) : out_(out) { out_ << metrics_header() << '\n'; }

void MetricsWriter::write(const RateDistortionPoint& point) { out_ << format_metrics(point) << '\n'; }

}  // namespace sthq
