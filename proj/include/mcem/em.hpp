#pragma once

#include <cmath>

#include "mcem/errors.hpp"
#include "mcem/model.hpp"
#include "mcem/trajectory.hpp"

namespace mcem {

// One deterministic EM update: maximize Q(. | theta0) using the exact E-step.
template <MissingDataModel M>
Theta em_step(const M& model, const Theta& theta0) {
  if constexpr (HasExactEStep<M> && HasSufficientStats<M>) {
    return model.maximize_given_stats(model.expected_stats(theta0));
  } else {
    throw CapabilityError("em_step: model lacks an exact E-step");
  }
}

// Iterate em_step until the parameter max-norm change falls below tol.
// Records the observed log-likelihood per iteration when available.
template <MissingDataModel M>
Trajectory run_em(const M& model, Theta theta, double tol, int max_iter) {
  if (!(tol > 0.0)) throw Error("run_em: tol must be positive");
  Trajectory trajectory;
  trajectory.terminated_reason = TerminationReason::max_iterations;
  for (int k = 1; k <= max_iter; ++k) {
    Theta next = em_step(model, theta);
    double change = (next.values - theta.values).lpNorm<Eigen::Infinity>();
    theta = next;
    TrajectoryRecord record;
    record.iteration = k;
    record.theta = theta;
    record.mc_size = 0;
    if constexpr (HasObservedLoglik<M>) {
      record.diagnostics["observed_loglik"] = model.observed_loglik(theta);
    }
    trajectory.records.push_back(std::move(record));
    if (change < tol) {
      trajectory.terminated_reason = TerminationReason::converged;
      break;
    }
  }
  return trajectory;
}

}  // namespace mcem
