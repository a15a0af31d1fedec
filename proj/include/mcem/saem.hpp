#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "mcem/errors.hpp"
#include "mcem/mcem.hpp"
#include "mcem/model.hpp"
#include "mcem/trajectory.hpp"

namespace mcem {

// Robbins-Monro step sizes: alpha_k = scale * k^{-gamma} (power) or
// scale / k (harmonic). Admissible schedules satisfy sum alpha = inf,
// sum alpha^2 < inf, which pins gamma to (0.5, 1].
struct StepSchedule {
  enum class Kind { power, harmonic };

  Kind kind = Kind::harmonic;
  double gamma = 1.0;
  double scale = 1.0;

  static StepSchedule power(double gamma, double scale = 1.0) {
    if (!(gamma > 0.5 && gamma <= 1.0)) {
      throw ConfigError("StepSchedule: power exponent must lie in (0.5, 1]");
    }
    if (!(scale > 0.0 && scale <= 1.0)) {
      throw ConfigError("StepSchedule: scale must lie in (0, 1]");
    }
    return {Kind::power, gamma, scale};
  }

  static StepSchedule harmonic(double scale = 1.0) {
    if (!(scale > 0.0 && scale <= 1.0)) {
      throw ConfigError("StepSchedule: scale must lie in (0, 1]");
    }
    return {Kind::harmonic, 1.0, scale};
  }

  double alpha(int k) const {
    if (k < 1) throw Error("StepSchedule: iteration index starts at 1");
    return kind == Kind::power ? scale * std::pow(k, -gamma) : scale / k;
  }
};

struct SaemState {
  Theta theta;
  Matrix gamma_matrix;  // Gu-Kong information preconditioner
  Vector stats;         // Delyon running sufficient statistics
  int iteration = 0;    // completed steps; the next step uses alpha(iteration+1)
  int floor_engagements = 0;  // iterations where the eigenvalue floor fired
};

template <MissingDataModel M>
SaemState make_saem_state(const M& model, Theta theta0) {
  SaemState state;
  state.theta = std::move(theta0);
  state.gamma_matrix = Matrix::Identity(model.dim(), model.dim());
  return state;
}

namespace detail {

// Project a symmetric matrix onto the cone of matrices with eigenvalues at
// least 1e-6 * trace / p. Returns whether any eigenvalue was raised.
inline bool eigen_floor(Matrix& m) {
  const int p = static_cast<int>(m.rows());
  double floor = 1e-6 * std::max(m.trace(), 0.0) / p;
  if (floor <= 0.0) floor = 1e-6;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(m);
  if (eig.eigenvalues().minCoeff() >= floor) return false;
  Vector lifted = eig.eigenvalues().cwiseMax(floor);
  m = eig.eigenvectors() * lifted.asDiagonal() * eig.eigenvectors().transpose();
  return true;
}

}  // namespace detail

// Gu-Kong SAEM step: the averaged complete-data score estimates the observed
// score, and a running Louis-identity estimate of the observed information
// preconditions the update, which is taken on the unconstrained scale.
template <MissingDataModel M>
SaemState saem_gu_kong_step(const M& model, SaemState state, long mc_size,
                            const StepSchedule& schedule,
                            const SamplerPolicy<M>& sampler, RngStream& rng) {
  if (mc_size < 1) throw Error("saem_gu_kong_step: M must be at least 1");
  const int k = state.iteration + 1;
  const double alpha = schedule.alpha(k);
  const int p = model.dim();

  RngStream stream = rng.child(k);
  auto sample = sampler(model, state.theta, mc_size, stream);

  // The same sample feeds the score estimate and the information estimate.
  Vector score_hat = Vector::Zero(p);
  Matrix curvature = Matrix::Zero(p, p);
  for (long i = 0; i < sample.size(); ++i) {
    Vector s = model.complete_score(state.theta, sample.draws[i]);
    score_hat += sample.weights[i] * s;
    curvature += sample.weights[i] *
                 (model.complete_neg_hessian(state.theta, sample.draws[i]) -
                  Matrix(s * s.transpose()));
  }
  Matrix info_hat = curvature + score_hat * score_hat.transpose();
  info_hat = Matrix(0.5 * (info_hat + info_hat.transpose().eval()));

  state.gamma_matrix += alpha * (info_hat - state.gamma_matrix);
  state.gamma_matrix = Matrix(0.5 * (state.gamma_matrix + state.gamma_matrix.transpose().eval()));
  if (detail::eigen_floor(state.gamma_matrix)) ++state.floor_engagements;

  Matrix jac = unconstrained_jacobian(state.theta);
  Vector score_u = jac.transpose() * score_hat;
  Matrix gamma_u = jac.transpose() * state.gamma_matrix * jac;
  Vector v = to_unconstrained(state.theta) + alpha * gamma_u.ldlt().solve(score_u);
  state.theta = from_unconstrained(v, state.theta.constraint);
  state.iteration = k;
  return state;
}

// Delyon SAEM step: exponentially weighted average of the sufficient
// statistics, maximized in closed form.
template <MissingDataModel M>
SaemState saem_delyon_step(const M& model, SaemState state, long mc_size,
                           const StepSchedule& schedule,
                           const SamplerPolicy<M>& sampler, RngStream& rng) {
  if constexpr (!HasSufficientStats<M>) {
    throw CapabilityError("saem_delyon_step: model lacks sufficient statistics");
  } else {
    static_assert(M::loglik_linear_in_stats,
                  "saem_delyon_step requires a log-likelihood linear in the stats");
    if (mc_size < 1) throw Error("saem_delyon_step: M must be at least 1");
    const int k = state.iteration + 1;
    const double alpha = schedule.alpha(k);

    RngStream stream = rng.child(k);
    auto sample = sampler(model, state.theta, mc_size, stream);
    Vector stats_hat = Vector::Zero(model.sufficient_stats(sample.draws[0]).size());
    for (long i = 0; i < sample.size(); ++i) {
      stats_hat += sample.weights[i] * model.sufficient_stats(sample.draws[i]);
    }
    if (state.stats.size() == 0) state.stats = Vector::Zero(stats_hat.size());
    state.stats += alpha * (stats_hat - state.stats);
    state.theta = model.maximize_given_stats(state.stats);
    state.iteration = k;
    return state;
  }
}

enum class SaemVariant { gu_kong, delyon };

template <MissingDataModel M>
Trajectory run_saem(const M& model, Theta theta0, SaemVariant variant, long mc_size,
                    int iterations, const StepSchedule& schedule,
                    const SamplerPolicy<M>& sampler, RngStream& rng) {
  SaemState state = make_saem_state(model, std::move(theta0));
  Trajectory trajectory;
  trajectory.terminated_reason = TerminationReason::max_iterations;
  for (int k = 1; k <= iterations; ++k) {
    state = variant == SaemVariant::gu_kong
                ? saem_gu_kong_step(model, std::move(state), mc_size, schedule,
                                    sampler, rng)
                : saem_delyon_step(model, std::move(state), mc_size, schedule,
                                   sampler, rng);
    TrajectoryRecord record;
    record.iteration = k;
    record.theta = state.theta;
    record.mc_size = mc_size;
    if (variant == SaemVariant::gu_kong) {
      record.diagnostics["floor_engagements"] =
          static_cast<double>(state.floor_engagements);
    }
    trajectory.records.push_back(std::move(record));
  }
  return trajectory;
}

// Fort-Moulines offline averaging: record j of the result holds the running
// mean of theta over source records burn+1..j, averaged component-wise on the
// unconstrained scale and back-transformed.
inline Trajectory offline_average(const Trajectory& trajectory, int burn) {
  const int len = static_cast<int>(trajectory.records.size());
  if (burn < 0 || burn >= len) {
    throw Error("offline_average: burn must leave a nonempty tail");
  }
  Trajectory out;
  out.terminated_reason = trajectory.terminated_reason;
  Vector running;
  for (int j = burn; j < len; ++j) {
    const TrajectoryRecord& src = trajectory.records[j];
    Vector v = to_unconstrained(src.theta);
    if (j == burn) {
      running = v;
    } else {
      running += (v - running) / static_cast<double>(j - burn + 1);
    }
    TrajectoryRecord record;
    record.iteration = src.iteration;
    record.theta = from_unconstrained(running, src.theta.constraint);
    record.mc_size = src.mc_size;
    out.records.push_back(std::move(record));
  }
  return out;
}

}  // namespace mcem
