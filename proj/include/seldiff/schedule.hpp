#pragma once

#include <string>
#include <vector>

namespace seldiff {

enum class ScheduleKind { linear };

std::string to_string(ScheduleKind kind);
ScheduleKind schedule_kind_from_string(const std::string& name);

/// Per-timestep DDPM coefficients for timestep indices 0..T-1.
///
/// Index t corresponds to alpha_bar[t] = prod_{s<=t} (1 - beta[s]); clean data
/// sits one step before index 0.
struct NoiseSchedule {
  int T = 0;
  ScheduleKind kind = ScheduleKind::linear;
  double beta_start = 0.0;
  double beta_end = 0.0;
  std::vector<double> beta;
  std::vector<double> alpha_bar;
  /// sqrt(1 - alpha_bar)
  std::vector<double> sigma;
  /// w_t, all ones unless overridden.
  std::vector<double> loss_weight;

  /// alpha_bar one index earlier; 1 for t == 0.
  double alpha_bar_prev(int t) const { return t == 0 ? 1.0 : alpha_bar[t - 1]; }
  void check_timestep(int t) const;
};

NoiseSchedule make_schedule(int T, double beta_start, double beta_end, ScheduleKind kind = ScheduleKind::linear);

}  // namespace seldiff
