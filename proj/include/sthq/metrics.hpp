#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <optional>
#include <span>
#include <string>

namespace sthq {

double mse(std::span<const double> a, std::span<const double> b);
double mse(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);

/// 10 log10(max^2 / mse); +infinity when mse is zero.
double psnr(double mse, double max_value);

/// One row of the metrics CSV. Fields that do not apply stay empty.
struct RateDistortionPoint {
  std::string run_id;
  double beta_total = 0.0;
  std::size_t alphabet = 0;
  std::size_t dim = 1;
  double rate = 0.0;          // bits per pixel or bits per weight
  double entropy_bits = 0.0;  // H(p) per symbol
  std::uint64_t coded_bits = 0;
  std::optional<double> mse;
  std::optional<double> psnr_db;
  std::optional<double> accuracy;
};

std::string metrics_header();
std::string format_metrics(const RateDistortionPoint& point);

class MetricsWriter {
 public:
  explicit MetricsWriter(std::ostream& out);
  void write(const RateDistortionPoint& point);

 private:
  std::ostream& out_;
};

}  // namespace sthq
