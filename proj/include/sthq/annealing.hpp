#pragma once

// Schedules that drive the hardness sigma from soft towards hard assignments.

#include <cstdint>
#include <iosfwd>
#include <string>

namespace sthq {

enum class ScheduleMode { gap_feedback, exponential };

struct AnnealState {
  ScheduleMode mode = ScheduleMode::exponential;
  double sigma = 1.0;
  double sigma0 = 1.0;   // sigma when the schedule started
  std::uint64_t t = 0;
  // gap-feedback mode
  double gap0 = 0.0;
  double half_life = 2000.0;  // T: iterations after which the target gap halves
  double gain = 1.0;          // K_G
  // exponential mode
  double growth = 1.001;
};

/// Lower bound applied to sigma by the feedback rule.
inline constexpr double kSigmaFloor = 1e-4;

AnnealState make_gap_feedback(double sigma0, double gap0, double half_life, double gain);
AnnealState make_exponential(double sigma0, double growth);

/// e_hard - e_soft; may be transiently negative.
double gap(double e_soft, double e_hard);

/// T / (T + t) * gap(0).
double target_gap(const AnnealState& state);

/// sigma(t+1) = max(sigma(t) + K_G (gap(t) - target(t)), floor).
AnnealState gap_feedback_step(const AnnealState& state, double gap_t);

/// sigma(t+1) = growth * sigma(t).
AnnealState exponential_step(const AnnealState& state);

struct HardSwitchPolicy {
  enum class Kind { never, sigma_at_least, growth_factor } kind = Kind::never;
  double value = 0.0;

  static HardSwitchPolicy never() { return {}; }
  static HardSwitchPolicy sigma_at_least(double sigma) { return {Kind::sigma_at_least, sigma}; }
  /// Triggers once sigma / sigma0 reaches `factor`.
  static HardSwitchPolicy growth_factor(double factor) { return {Kind::growth_factor, factor}; }
};

bool hard_switch_reached(const AnnealState& state, const HardSwitchPolicy& policy);

/// Per-iteration annealing diagnostics, one CSV row each.
struct TelemetryRow {
  std::uint64_t t = 0;
  double sigma = 0.0;
  double e_soft = 0.0;
  double e_hard = 0.0;
  double gap = 0.0;
  double target_gap = 0.0;
  double entropy_bits = 0.0;
};

class TelemetryWriter {
 public:
  explicit TelemetryWriter(std::ostream& out);
  void write(const TelemetryRow& row);

 private:
  std::ostream& out_;
};

std::string telemetry_header();
std::string format_telemetry(const TelemetryRow& row);

}  // namespace sthq
