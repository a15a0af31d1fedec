#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "mcem/errors.hpp"
#include "mcem/model.hpp"
#include "mcem/optim.hpp"
#include "mcem/weighted_sample.hpp"

namespace mcem {

struct InferenceReport {
  Matrix info;        // Louis-identity observed information estimate
  Matrix covariance;  // info^{-1}
  Vector std_errors;  // sqrt of the covariance diagonal
  // Eigenvalues of I_c^{-1} I_m; they bound the EM rate of convergence.
  Vector fraction_missing;
  long mc_size_used = 0;
};

namespace detail {

inline InferenceReport build_report(Matrix info, Matrix complete_info, long mc_size) {
  info = Matrix(0.5 * (info + info.transpose().eval()));
  Eigen::SelfAdjointEigenSolver<Matrix> eig(info);
  if (eig.eigenvalues().minCoeff() <= 0.0) {
    std::vector<double> eigs(eig.eigenvalues().data(),
                             eig.eigenvalues().data() + eig.eigenvalues().size());
    throw IndefiniteInformationError(
        "louis_information: estimated information is not positive definite",
        std::move(eigs));
  }
  InferenceReport report;
  report.info = info;
  report.covariance = info.inverse();
  report.std_errors = report.covariance.diagonal().cwiseSqrt();
  Matrix missing_info = complete_info - info;
  missing_info = Matrix(0.5 * (missing_info + missing_info.transpose().eval()));
  // Generalized problem I_m v = lambda I_c v gives the eigenvalues of
  // I_c^{-1} I_m without forming the nonsymmetric product.
  Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> gen(missing_info, complete_info);
  report.fraction_missing = gen.eigenvalues();
  report.mc_size_used = mc_size;
  return report;
}

}  // namespace detail

// Louis' identity from a conditional sample drawn at theta:
// I^ = E^[-d2 l_c] - E^[S_c S_c^T] + S^ S^^T, the last term included by
// default because MCEM iterates are not exact critical points (it vanishes to
// Monte Carlo noise at the true MLE).
template <MissingDataModel M>
InferenceReport louis_information(const M& model, const Theta& theta,
                                  const WeightedSample<typename M::Point>& sample,
                                  bool include_score_term = true) {
  if (sample.size() < 2) {
    throw InsufficientSampleError("louis_information: need at least two draws");
  }
  const int p = theta.dim();
  Matrix complete_info = Matrix::Zero(p, p);
  Matrix score_outer = Matrix::Zero(p, p);
  Vector score_mean = Vector::Zero(p);
  for (long i = 0; i < sample.size(); ++i) {
    complete_info += sample.weights[i] * model.complete_neg_hessian(theta, sample.draws[i]);
    Vector s = model.complete_score(theta, sample.draws[i]);
    score_outer += sample.weights[i] * s * s.transpose();
    score_mean += sample.weights[i] * s;
  }
  complete_info = Matrix(0.5 * (complete_info + complete_info.transpose().eval()));
  Matrix info = complete_info - score_outer;
  if (include_score_term) info += score_mean * score_mean.transpose();
  return detail::build_report(std::move(info), complete_info, sample.size());
}

// Louis' identity with the model's exact conditional moments (oracle models).
template <MissingDataModel M>
  requires HasExactConditionalMoments<M>
InferenceReport louis_information_exact(const M& model, const Theta& theta,
                                        bool include_score_term = true) {
  Matrix complete_info = model.exact_complete_information(theta);
  Matrix info = complete_info - model.exact_score_outer_expectation(theta);
  if (include_score_term) {
    Vector s = model.observed_score(theta);
    info += s * s.transpose();
  }
  return detail::build_report(std::move(info), std::move(complete_info), 0);
}

template <class M>
concept HasObservedInformation = requires(const M model, const Theta& theta) {
  { model.observed_information(theta) } -> std::convertible_to<Matrix>;
};

template <class M>
concept HasExactMissingInformation = requires(const M model, const Theta& theta) {
  { model.exact_missing_information(theta) } -> std::convertible_to<Matrix>;
};

// Compare the available closed-form routes to the observed information:
// analytic (or a finite-difference Hessian of the observed log-likelihood),
// the complete-minus-missing decomposition, and Louis' identity with exact
// moments. Returns the maximum pairwise relative discrepancy in max-norm.
template <MissingDataModel M>
  requires HasExactConditionalMoments<M>
double information_decomposition_check(const M& model, const Theta& theta) {
  std::vector<Matrix> routes;
  routes.push_back(louis_information_exact(model, theta, true).info);
  if constexpr (HasExactMissingInformation<M>) {
    routes.push_back(model.exact_complete_information(theta) -
                     model.exact_missing_information(theta));
  }
  if constexpr (HasObservedInformation<M>) {
    routes.push_back(model.observed_information(theta));
  } else if constexpr (HasObservedLoglik<M>) {
    // Central-difference Hessian of the observed log-likelihood.
    const int p = theta.dim();
    Matrix fd(p, p);
    auto grad = [&](const Vector& values) {
      const double h = 1e-5;
      Vector g(p);
      for (int j = 0; j < p; ++j) {
        Theta lo = theta, hi = theta;
        lo.values = values;
        hi.values = values;
        lo.values[j] -= h;
        hi.values[j] += h;
        g[j] = (model.observed_loglik(hi) - model.observed_loglik(lo)) / (2.0 * h);
      }
      return g;
    };
    fd = -detail::fd_jacobian(grad, theta.values);
    routes.push_back(0.5 * (fd + fd.transpose()));
  }
  if (routes.size() < 2) {
    throw CapabilityError("information_decomposition_check: fewer than two routes");
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < routes.size(); ++i) {
    for (std::size_t j = i + 1; j < routes.size(); ++j) {
      double scale = std::max(routes[i].cwiseAbs().maxCoeff(),
                              routes[j].cwiseAbs().maxCoeff());
      worst = std::max(worst,
                       (routes[i] - routes[j]).cwiseAbs().maxCoeff() / scale);
    }
  }
  return worst;
}

}  // namespace mcem
