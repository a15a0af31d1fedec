#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mcem/theta.hpp"

namespace mcem {

enum class TerminationReason {
  max_iterations,
  converged,
  ci_contains_zero,
  increment_below_tau,
};

inline const char* to_string(TerminationReason reason) {
  switch (reason) {
    case TerminationReason::max_iterations: return "max-iterations";
    case TerminationReason::converged: return "converged";
    case TerminationReason::ci_contains_zero: return "ci-contains-zero";
    case TerminationReason::increment_below_tau: return "increment-below-tau";
  }
  return "?";
}

struct TrajectoryRecord {
  int iteration = 0;  // 1-based, strictly increasing
  Theta theta;
  long mc_size = 0;  // 0 for deterministic EM
  std::optional<double> objective_increment;
  std::optional<double> ci_lower;
  std::optional<double> ci_upper;
  std::map<std::string, double> diagnostics;
};

struct Trajectory {
  std::vector<TrajectoryRecord> records;
  TerminationReason terminated_reason = TerminationReason::max_iterations;
  // Draws consumed outside the recorded updates (pilot bootstrap samples,
  // follower runs, restarts).
  long extra_mc_draws = 0;

  const Theta& final_theta() const { return records.back().theta; }

  long total_mc_draws() const {
    long total = extra_mc_draws;
    for (const auto& rec : records) total += rec.mc_size;
    return total;
  }
};

}  // namespace mcem
