#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <concepts>
#include <vector>

#include "mcem/errors.hpp"
#include "mcem/rng.hpp"
#include "mcem/theta.hpp"

namespace mcem {

// The missing-data model contract. A model owns its observed data and exposes
// complete-data quantities plus the (unnormalized) conditional density of the
// missing data given the observed data. Payload type is model-defined.
template <class M>
concept MissingDataModel = requires(const M model, const Theta& theta,
                                    const typename M::Point& x) {
  typename M::Point;
  { model.dim() } -> std::convertible_to<int>;
  { model.initial_theta() } -> std::convertible_to<Theta>;
  { model.complete_loglik(theta, x) } -> std::convertible_to<double>;
  { model.complete_score(theta, x) } -> std::convertible_to<Vector>;
  { model.complete_neg_hessian(theta, x) } -> std::convertible_to<Matrix>;
  { model.conditional_log_density_unnorm(theta, x) } -> std::convertible_to<double>;
};

template <class M>
concept HasDirectSampler =
    requires(const M model, const Theta& theta, long m, RngStream& rng) {
      { model.sample_conditional_direct(theta, m, rng) } ->
          std::convertible_to<std::vector<typename M::Point>>;
    };

template <class M>
concept HasSufficientStats =
    requires(const M model, const typename M::Point& x, const Vector& s) {
      { model.sufficient_stats(x) } -> std::convertible_to<Vector>;
      { model.maximize_given_stats(s) } -> std::convertible_to<Theta>;
      { M::loglik_linear_in_stats } -> std::convertible_to<bool>;
    };

template <class M>
concept HasObservedLoglik = requires(const M model, const Theta& theta) {
  { model.observed_loglik(theta) } -> std::convertible_to<double>;
};

// Exact E-step: conditional expectation of the sufficient statistics.
template <class M>
concept HasExactEStep = requires(const M model, const Theta& theta) {
  { model.expected_stats(theta) } -> std::convertible_to<Vector>;
};

// Exact conditional moments of the complete-data score and Hessian; available
// for the oracle benchmark models only.
template <class M>
concept HasExactConditionalMoments = requires(const M model, const Theta& theta) {
  { model.exact_complete_information(theta) } -> std::convertible_to<Matrix>;
  { model.exact_score_outer_expectation(theta) } -> std::convertible_to<Matrix>;
  { model.observed_score(theta) } -> std::convertible_to<Vector>;
};

// Max relative error between analytic derivatives of the complete-data
// log-likelihood and central finite differences, over score and Hessian.
template <MissingDataModel M>
double finite_difference_check(const M& model, const Theta& theta,
                               const typename M::Point& x, double h) {
  if (!(h > 0.0 && h <= 1e-3)) throw Error("finite_difference_check: invalid step");
  if (!validate_theta(theta)) {
    throw ConstraintError("finite_difference_check: theta not interior");
  }
  const int p = theta.dim();
  Vector score = model.complete_score(theta, x);
  Matrix neg_hess = model.complete_neg_hessian(theta, x);

  double worst = 0.0;
  auto rel = [h](double analytic, double numeric) {
    return std::abs(analytic - numeric) / (std::abs(analytic) + h);
  };
  for (int j = 0; j < p; ++j) {
    Theta lo = theta, hi = theta;
    lo.values[j] -= h;
    hi.values[j] += h;
    double fd = (model.complete_loglik(hi, x) - model.complete_loglik(lo, x)) / (2.0 * h);
    worst = std::max(worst, rel(score[j], fd));
    Vector ds = (model.complete_score(hi, x) - model.complete_score(lo, x)) / (2.0 * h);
    for (int i = 0; i < p; ++i) {
      worst = std::max(worst, rel(-neg_hess(i, j), ds[i]));
    }
  }
  return worst;
}

}  // namespace mcem
