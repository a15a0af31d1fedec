#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "mcem/errors.hpp"
#include "mcem/model.hpp"
#include "mcem/optim.hpp"
#include "mcem/samplers.hpp"
#include "mcem/stats.hpp"
#include "mcem/weighted_sample.hpp"

namespace mcem {

// Monte Carlo estimate of the log-likelihood-ratio surface
// log L(theta) - log L(theta_star), built from one conditional sample at the
// reference parameter. Only the exact-complete-likelihood form is computed;
// models with an unnormalized complete density would supply the joint-sample
// correction via second_term, which both benchmark models leave absent.
template <MissingDataModel M>
class McmlSurface {
 public:
  McmlSurface(const M& model, Theta theta_star, WeightedSample<typename M::Point> sample)
      : model_(&model), theta_star_(std::move(theta_star)), sample_(std::move(sample)) {
    ref_logliks_.resize(sample_.size());
    log_weights_.resize(sample_.size());
    for (long i = 0; i < sample_.size(); ++i) {
      ref_logliks_[i] = model_->complete_loglik(theta_star_, sample_.draws[i]);
      log_weights_[i] = std::log(sample_.weights[i]);
    }
    log_norm_ = log_sum_exp(log_weights_);
  }

  const Theta& theta_star() const { return theta_star_; }
  const WeightedSample<typename M::Point>& sample() const { return sample_; }

  // At theta_star every exponent is exactly zero, so eval returns exactly 0.
  double eval(const Theta& theta) const {
    std::vector<double> terms(sample_.size());
    for (long i = 0; i < sample_.size(); ++i) {
      // The difference is taken first so that eval(theta_star) is exactly 0.
      terms[i] = log_weights_[i] +
                 (model_->complete_loglik(theta, sample_.draws[i]) - ref_logliks_[i]);
    }
    double value = log_sum_exp(terms) - log_norm_;
    if (second_term) value -= second_term(theta);
    return value;
  }

  // Gradient of eval: the self-normalized ratio weights times the complete
  // scores.
  Vector grad(const Theta& theta) const {
    std::vector<double> terms(sample_.size());
    double shift = -std::numeric_limits<double>::infinity();
    for (long i = 0; i < sample_.size(); ++i) {
      terms[i] = log_weights_[i] +
                 (model_->complete_loglik(theta, sample_.draws[i]) - ref_logliks_[i]);
      shift = std::max(shift, terms[i]);
    }
    double total = 0.0;
    for (double& t : terms) {
      t = std::exp(t - shift);
      total += t;
    }
    Vector grad = Vector::Zero(theta.dim());
    for (long i = 0; i < sample_.size(); ++i) {
      grad += (terms[i] / total) * model_->complete_score(theta, sample_.draws[i]);
    }
    return grad;
  }

  std::function<double(const Theta&)> second_term;

 private:
  const M* model_;
  Theta theta_star_;
  WeightedSample<typename M::Point> sample_;
  std::vector<double> ref_logliks_;
  std::vector<double> log_weights_;
  double log_norm_ = 0.0;
};

template <MissingDataModel M>
McmlSurface<M> mcml_surface(const M& model, const Theta& theta_star,
                            WeightedSample<typename M::Point> sample) {
  if (sample.size() < 2) throw Error("mcml_surface: M must be at least 2");
  return McmlSurface<M>(model, theta_star, std::move(sample));
}

template <MissingDataModel M>
McmlSurface<M> mcml_surface(const M& model, const Theta& theta_star, long mc_size,
                            RngStream& rng) {
  if (mc_size < 2) throw Error("mcml_surface: M must be at least 2");
  return McmlSurface<M>(model, theta_star, sample_direct(model, theta_star, mc_size, rng));
}

template <MissingDataModel M>
Theta mcml_maximize(const McmlSurface<M>& surface, const Theta& theta_init) {
  const Constraint& constraint = theta_init.constraint;
  auto objective = [&](const Vector& v) {
    return surface.eval(from_unconstrained(v, constraint));
  };
  auto gradient = [&](const Vector& v) {
    Theta theta = from_unconstrained(v, constraint);
    return Vector(unconstrained_jacobian(theta).transpose() * surface.grad(theta));
  };
  auto fit = maximize(objective, gradient, to_unconstrained(theta_init), 1e-6, 500);
  if (!fit.converged) {
    throw OptimizationError("mcml_maximize: optimizer did not converge");
  }
  return from_unconstrained(fit.v, constraint);
}

template <MissingDataModel M>
Theta mcml_maximize(const McmlSurface<M>& surface) {
  return mcml_maximize(surface, surface.theta_star());
}

}  // namespace mcem
