#include "seldiff/schedule.hpp"

#include <cmath>
#include <stdexcept>

namespace seldiff {

std::string to_string(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::linear: return "linear";
  }
  return "?";
}

ScheduleKind schedule_kind_from_string(const std::string& name) {
  if (name == "linear") return ScheduleKind::linear;
  throw std::invalid_argument("unknown schedule kind '" + name + "'");
}

void NoiseSchedule::check_timestep(int t) const {
  if (t < 0 || t >= T) {
    throw std::out_of_range("timestep " + std::to_string(t) + " outside [0, " + std::to_string(T) + ")");
  }
}

NoiseSchedule make_schedule(int T, double beta_start, double beta_end, ScheduleKind kind) {
  if (T < 2) throw std::invalid_argument("schedule needs T >= 2, got " + std::to_string(T));
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
    throw std::invalid_argument("schedule needs 0 < beta_start <= beta_end < 1, got [" +
                                std::to_string(beta_start) + ", " + std::to_string(beta_end) + "]");
  }
  NoiseSchedule s;
  s.T = T;
  s.kind = kind;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  s.beta.resize(T);
  s.alpha_bar.resize(T);
  s.sigma.resize(T);
  s.loss_weight.assign(T, 1.0);
  double prod = 1.0;
  for (int t = 0; t < T; ++t) {
    s.beta[t] = beta_start + (beta_end - beta_start) * static_cast<double>(t) / static_cast<double>(T - 1);
    prod *= 1.0 - s.beta[t];
    s.alpha_bar[t] = prod;
    s.sigma[t] = std::sqrt(1.0 - prod);
  }
  return s;
}

}  // namespace seldiff
