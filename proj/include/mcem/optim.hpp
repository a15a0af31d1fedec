#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>

#include "mcem/errors.hpp"
#include "mcem/theta.hpp"

namespace mcem {

struct MaximizeResult {
  Vector v;
  double value = 0.0;
  bool converged = false;
  int iterations = 0;
};

namespace detail {

// Finite-difference Jacobian of a vector-valued map, per-coordinate step
// h_j = 1e-6 * (1 + |v_j|).
template <class G>
Matrix fd_jacobian(const G& grad, const Vector& v) {
  const int p = static_cast<int>(v.size());
  Matrix jac(p, p);
  for (int j = 0; j < p; ++j) {
    double h = 1e-6 * (1.0 + std::abs(v[j]));
    Vector hi = v, lo = v;
    hi[j] += h;
    lo[j] -= h;
    jac.col(j) = (grad(hi) - grad(lo)) / (2.0 * h);
  }
  return jac;
}

}  // namespace detail

// Newton ascent with finite-difference Hessian, falling back to gradient
// ascent when the Newton direction is not an ascent direction. Backtracking
// line search with halving and Armijo constant 1e-4. Convergence is gradient
// max-norm below tol; non-convergence is reported, not thrown.
template <class F, class G>
MaximizeResult maximize(const F& objective, const G& gradient, Vector v0,
                        double tol, int max_iter) {
  if (!(tol > 0.0)) throw Error("maximize: tol must be positive");
  const double armijo = 1e-4;
  Vector v = std::move(v0);
  double fv = objective(v);
  MaximizeResult result;
  for (int iter = 0; iter < max_iter; ++iter) {
    Vector g = gradient(v);
    if (g.template lpNorm<Eigen::Infinity>() < tol) {
      result.converged = true;
      result.iterations = iter;
      break;
    }
    Matrix hess = detail::fd_jacobian(gradient, v);
    hess = Matrix(0.5 * (hess + hess.transpose().eval()));
    Vector direction = -hess.ldlt().solve(g);
    if (!direction.allFinite() || direction.dot(g) <= 0.0) {
      direction = g;  // Newton step unusable, steepest ascent
    }
    double slope = direction.dot(g);
    double step = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      Vector trial = v + step * direction;
      double ft = objective(trial);
      if (std::isfinite(ft) && ft >= fv + armijo * step * slope) {
        v = trial;
        fv = ft;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    result.iterations = iter + 1;
    if (!accepted) break;  // stalled; report current point as non-converged
  }
  // One last check so a lucky final step still counts as converged.
  if (!result.converged && gradient(v).template lpNorm<Eigen::Infinity>() < tol) {
    result.converged = true;
  }
  result.v = v;
  result.value = fv;
  return result;
}

// Newton root-finding on the observed-data score of a model with analytic
// score equations. Roots outside the simplex interior are rejected.
template <class M>
  requires requires(const M& m, const Theta& t) {
    { m.observed_score(t) } -> std::convertible_to<Vector>;
  }
Theta solve_score_system(const M& model, const Theta& theta0, double tol = 1e-12,
                         int max_iter = 200) {
  Theta theta = theta0;
  auto score_of = [&](const Vector& values) {
    Theta t = theta0;
    t.values = values;
    return model.observed_score(t);
  };
  for (int iter = 0; iter < max_iter; ++iter) {
    Vector s = model.observed_score(theta);
    if (s.template lpNorm<Eigen::Infinity>() < tol) break;
    Matrix jac = detail::fd_jacobian(score_of, theta.values);
    Vector step = jac.fullPivLu().solve(-s);
    if (!step.allFinite()) {
      throw OptimizationError("solve_score_system: singular score Jacobian");
    }
    // Damp the step until the iterate stays in the feasible interior.
    double scale = 1.0;
    Theta next = theta;
    for (int half = 0; half < 60; ++half) {
      next.values = theta.values + scale * step;
      if (validate_theta(next)) break;
      scale *= 0.5;
    }
    if (!validate_theta(next)) {
      throw OptimizationError("solve_score_system: no interior root reachable");
    }
    theta = next;
  }
  if (model.observed_score(theta).template lpNorm<Eigen::Infinity>() >= 1e-9) {
    throw OptimizationError("solve_score_system: did not reach a root");
  }
  return theta;
}

}  // namespace mcem
