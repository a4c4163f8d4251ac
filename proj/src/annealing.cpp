#include "sthq/annealing.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>

namespace sthq {

AnnealState make_gap_feedback(double sigma0, double gap0, double half_life, double gain) {
  if (!(sigma0 > 0.0) || !std::isfinite(sigma0)) throw std::invalid_argument("sigma0 must be positive");
  if (!(half_life > 0.0)) throw std::invalid_argument("gap-feedback half-life T must be positive");
  if (!std::isfinite(gap0) || !std::isfinite(gain)) throw std::invalid_argument("gap0 and gain must be finite");
  AnnealState s;
  s.mode = ScheduleMode::gap_feedback;
  s.sigma = s.sigma0 = sigma0;
  s.gap0 = gap0;
  s.half_life = half_life;
  s.gain = gain;
  return s;
}

AnnealState make_exponential(double sigma0, double growth) {
  if (!(sigma0 > 0.0) || !std::isfinite(sigma0)) throw std::invalid_argument("sigma0 must be positive");
  if (!(growth > 1.0) || !std::isfinite(growth)) throw std::invalid_argument("exponential growth factor must exceed 1");
  AnnealState s;
  s.mode = ScheduleMode::exponential;
  s.sigma = s.sigma0 = sigma0;
  s.growth = growth;
  return s;
}

double gap(double e_soft, double e_hard) { return e_hard - e_soft; }

double target_gap(const AnnealState& state) {
  return state.half_life / (state.half_life + static_cast<double>(state.t)) * state.gap0;
}

AnnealState gap_feedback_step(const AnnealState& state, double gap_t) {
  if (state.mode != ScheduleMode::gap_feedback) throw std::logic_error("gap_feedback_step on a non-feedback schedule");
  AnnealState next = state;
  const double error = gap_t - target_gap(state);
  next.sigma = std::max(state.sigma + state.gain * error, kSigmaFloor);
  ++next.t;
  return next;
}

AnnealState exponential_step(const AnnealState& state) {
  if (state.mode != ScheduleMode::exponential) throw std::logic_error("exponential_step on a non-exponential schedule");
  AnnealState next = state;
  next.sigma = state.sigma * state.growth;
  ++next.t;
  return next;
}

bool hard_switch_reached(const AnnealState& state, const HardSwitchPolicy& policy) {
  switch (policy.kind) {
    case HardSwitchPolicy::Kind::never: return false;
    case HardSwitchPolicy::Kind::sigma_at_least: return state.sigma >= policy.value;
    case HardSwitchPolicy::Kind::growth_factor: return state.sigma >= policy.value * state.sigma0;
  }
  return false;
}

std::string telemetry_header() { return "t,sigma,e_soft,e_hard,gap,target_gap,entropy_bits"; }

std::string format_telemetry(const TelemetryRow& row) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%llu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g", static_cast<unsigned long long>(row.t),
                row.sigma, row.e_soft, row.e_hard, row.gap, row.target_gap, row.entropy_bits);
  return buf;
}

TelemetryWriter::TelemetryWriter(std::ostream& out) : out_(out) { out_ << telemetry_header() << '\n'; }

void TelemetryWriter::write(const TelemetryRow& row) { out_ << format_telemetry(row) << '\n'; }

}  // namespace sthq
