#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "mcem/errors.hpp"
#include "mcem/inference.hpp"
#include "mcem/model.hpp"
#include "mcem/optim.hpp"
#include "mcem/samplers.hpp"
#include "mcem/stats.hpp"
#include "mcem/trajectory.hpp"
#include "mcem/weighted_sample.hpp"

namespace mcem {

// How a controller obtains its Monte Carlo sample at each iteration.
// The default draws from the model's direct conditional sampler; tests swap
// in the exact-enumeration oracle or the importance/MH samplers.
template <class M>
using SamplerPolicy = std::function<WeightedSample<typename M::Point>(
    const M&, const Theta&, long, RngStream&)>;

template <MissingDataModel M>
SamplerPolicy<M> direct_sampler_policy() {
  return [](const M& model, const Theta& theta, long mc_size, RngStream& rng) {
    return sample_direct(model, theta, mc_size, rng);
  };
}

template <class Point>
struct McemStepResult {
  Theta theta_new;
  WeightedSample<Point> sample;  // target_theta is the old parameter
  double qhat_at_new = 0.0;
  double qhat_at_old = 0.0;
};

template <MissingDataModel M>
double weighted_q(const M& model, const Theta& theta,
                  const WeightedSample<typename M::Point>& sample) {
  double total = 0.0;
  for (long i = 0; i < sample.size(); ++i) {
    total += sample.weights[i] * model.complete_loglik(theta, sample.draws[i]);
  }
  return total;
}

// Maximize the MCEM objective sum_i w_i l_c(theta; x_i). Uses the closed-form
// M-step when the log-likelihood is linear in the sufficient statistics,
// otherwise Newton ascent on the unconstrained scale.
template <MissingDataModel M>
McemStepResult<typename M::Point> mcem_inner_step(
    const M& model, const Theta& theta_old,
    WeightedSample<typename M::Point> sample) {
  McemStepResult<typename M::Point> result;
  if constexpr (HasSufficientStats<M>) {
    if constexpr (M::loglik_linear_in_stats) {
      Vector stats = Vector::Zero(model.sufficient_stats(sample.draws[0]).size());
      for (long i = 0; i < sample.size(); ++i) {
        stats += sample.weights[i] * model.sufficient_stats(sample.draws[i]);
      }
      result.theta_new = model.maximize_given_stats(stats);
    }
  }
  if (result.theta_new.dim() == 0) {
    auto objective = [&](const Vector& v) {
      return weighted_q(model, from_unconstrained(v, theta_old.constraint), sample);
    };
    auto gradient = [&](const Vector& v) {
      Theta theta = from_unconstrained(v, theta_old.constraint);
      Vector grad = Vector::Zero(theta.dim());
      for (long i = 0; i < sample.size(); ++i) {
        grad += sample.weights[i] * model.complete_score(theta, sample.draws[i]);
      }
      return Vector(unconstrained_jacobian(theta).transpose() * grad);
    };
    auto fit = maximize(objective, gradient, to_unconstrained(theta_old), 1e-10, 200);
    if (!fit.converged) {
      throw OptimizationError("mcem_inner_step: M-step optimizer did not converge");
    }
    result.theta_new = from_unconstrained(fit.v, theta_old.constraint);
  }
  result.qhat_at_old = weighted_q(model, theta_old, sample);
  result.qhat_at_new = weighted_q(model, result.theta_new, sample);
  result.sample = std::move(sample);
  return result;
}

// Monte Carlo log-likelihood-ratio estimator of Chan & Ledolter:
// log L(theta_a)/L(theta_b) from a sample drawn at theta_b, with a delta
// method standard error.
template <MissingDataModel M>
std::pair<double, double> estimate_log_lr(const M& model, const Theta& theta_a,
                                          const Theta& theta_b,
                                          const WeightedSample<typename M::Point>& sample) {
  if (sample.size() < 2) {
    throw InsufficientSampleError("estimate_log_lr: need at least two draws");
  }
  const long m = sample.size();
  std::vector<double> diffs(m);
  double shift = -std::numeric_limits<double>::infinity();
  for (long i = 0; i < m; ++i) {
    diffs[i] = model.complete_loglik(theta_a, sample.draws[i]) -
               model.complete_loglik(theta_b, sample.draws[i]);
    shift = std::max(shift, diffs[i]);
  }
  std::vector<double> scaled(m);
  for (long i = 0; i < m; ++i) scaled[i] = std::exp(diffs[i] - shift);
  double ratio_mean = weighted_mean(scaled, sample.weights);
  double estimate = shift + std::log(ratio_mean);
  if (sample.exact_weights()) return {estimate, 0.0};
  double sd = std::sqrt(weighted_variance(scaled, sample.weights));
  double m_eff = effective_sample_size(sample);
  double se = sd / (std::sqrt(m_eff) * ratio_mean);
  return {estimate, se};
}

// Booth-Hobert sandwich covariance of the MCEM update around the EM update:
// (1/M) H^{-1} E^[S_c S_c^T] H^{-1} with H the weighted complete-data
// negative Hessian at theta_new.
template <MissingDataModel M>
Matrix mc_update_covariance(const M& model,
                            const McemStepResult<typename M::Point>& step) {
  const auto& sample = step.sample;
  const int p = step.theta_new.dim();
  if (sample.exact_weights()) return Matrix::Zero(p, p);
  Matrix hess = Matrix::Zero(p, p);
  Matrix outer = Matrix::Zero(p, p);
  for (long i = 0; i < sample.size(); ++i) {
    hess += sample.weights[i] * model.complete_neg_hessian(step.theta_new, sample.draws[i]);
    Vector score = model.complete_score(step.theta_new, sample.draws[i]);
    outer += sample.weights[i] * score * score.transpose();
  }
  Eigen::FullPivLU<Matrix> lu(hess);
  if (!lu.isInvertible()) {
    throw SingularityError("mc_update_covariance: singular weighted Hessian");
  }
  Matrix inv = lu.inverse();
  return (inv * outer * inv) / static_cast<double>(sample.size());
}

// Confidence bounds for the EM objective increment (Caffo et al.). The
// increment uses the improvement convention: Q^(new|old) - Q^(old|old).
template <MissingDataModel M>
std::pair<double, double> delta_q_bounds(const M& model,
                                         const McemStepResult<typename M::Point>& step,
                                         double level) {
  const auto& sample = step.sample;
  if (sample.size() < 2) {
    throw InsufficientSampleError("delta_q_bounds: need at least two draws");
  }
  double delta = step.qhat_at_new - step.qhat_at_old;
  if (sample.exact_weights()) return {delta, delta};
  std::vector<double> diffs(sample.size());
  const Theta& theta_old = sample.target_theta;
  for (long i = 0; i < sample.size(); ++i) {
    diffs[i] = model.complete_loglik(step.theta_new, sample.draws[i]) -
               model.complete_loglik(theta_old, sample.draws[i]);
  }
  double sd = std::sqrt(weighted_variance(diffs, sample.weights));
  if (sd == 0.0) return {delta, delta};
  double z = normal_quantile(level);
  double half_width = z * sd / std::sqrt(effective_sample_size(sample));
  return {delta - half_width, delta + half_width};
}

// ---------------------------------------------------------------------------
// Controllers
// ---------------------------------------------------------------------------

struct WeiTannerConfig {
  // (iterations, Monte Carlo size) stages, run verbatim with no adaptation.
  std::vector<std::pair<int, long>> schedule;
};

template <MissingDataModel M>
Trajectory run_wei_tanner(const M& model, Theta theta, const WeiTannerConfig& config,
                          const SamplerPolicy<M>& sampler, RngStream& rng) {
  for (const auto& [iters, mc_size] : config.schedule) {
    if (iters < 0 || mc_size < 1) throw ConfigError("run_wei_tanner: invalid schedule");
  }
  Trajectory trajectory;
  trajectory.terminated_reason = TerminationReason::max_iterations;
  int k = 0;
  for (const auto& [iters, mc_size] : config.schedule) {
    for (int j = 0; j < iters; ++j) {
      ++k;
      RngStream stream = rng.child(k);
      auto step = mcem_inner_step(model, theta, sampler(model, theta, mc_size, stream));
      theta = step.theta_new;
      TrajectoryRecord record;
      record.iteration = k;
      record.theta = theta;
      record.mc_size = step.sample.size();
      record.objective_increment = step.qhat_at_new - step.qhat_at_old;
      trajectory.records.push_back(std::move(record));
    }
  }
  return trajectory;
}

struct BoothHobertConfig {
  long m0 = 10;
  double alpha = 0.25;  // CI miss level for the escalation check
  int r = 3;            // escalation divisor: M <- ceil(M (1 + 1/r))
  double delta1 = 1e-3;
  double delta2 = 2e-3;
  int consecutive = 3;
  bool se_rule = false;  // use SE-denominator stopping (delta1/2 reused)
  bool ripatti_variant = false;
  int max_iters = 500;
};

template <MissingDataModel M>
Trajectory run_booth_hobert(const M& model, Theta theta, const BoothHobertConfig& config,
                            const SamplerPolicy<M>& sampler, RngStream& rng) {
  if (config.r < 1 || config.delta1 <= 0.0 || config.delta2 <= 0.0) {
    throw ConfigError("run_booth_hobert: invalid tolerances");
  }
  Trajectory trajectory;
  trajectory.terminated_reason = TerminationReason::max_iterations;
  long mc_size = config.m0;
  int streak = 0;
  double z = normal_quantile(1.0 - config.alpha / 2.0);
  std::vector<double> rel_history;
  for (int k = 1; k <= config.max_iters; ++k) {
    RngStream stream = rng.child(k);
    auto step = mcem_inner_step(model, theta, sampler(model, theta, mc_size, stream));
    Matrix cov = mc_update_covariance(model, step);

    // The se_rule denominator is the statistical standard error of the
    // estimate (Louis identity from the iteration's sample), not the Monte
    // Carlo update SE, which vanishes as M grows.
    Vector denominators(theta.dim());
    if (config.se_rule) {
      try {
        denominators = louis_information(model, step.theta_new, step.sample).std_errors;
      } catch (const Error&) {
        // Small early samples can give an indefinite estimate; fall back to
        // the magnitude rule for this iteration.
        denominators = theta.values.cwiseAbs();
      }
    } else {
      denominators = theta.values.cwiseAbs();
    }
    double rel_error = 0.0;
    for (int j = 0; j < theta.dim(); ++j) {
      double denom = denominators[j] + config.delta1;
      rel_error = std::max(rel_error,
                           std::abs(step.theta_new.values[j] - theta.values[j]) / denom);
    }
    rel_history.push_back(rel_error);

    // Stopping is evaluated before escalation.
    streak = rel_error < config.delta2 ? streak + 1 : 0;
    bool done = streak >= config.consecutive;

    bool escalate = false;
    if (!done) {
      if (config.ripatti_variant) {
        const auto h = rel_history.size();
        if (h >= 4) {
          auto cov_of_variation = [&](std::size_t end) {
            std::span<const double> window(rel_history.data() + end - 3, 3);
            double m = mean(window);
            return m != 0.0 ? sample_sd(window) / m
                            : std::numeric_limits<double>::infinity();
          };
          escalate = cov_of_variation(h) > cov_of_variation(h - 1);
        }
      } else {
        // Box interval around the MCEM update; containment of the previous
        // estimate means Monte Carlo noise dominates the step.
        bool contains = true;
        for (int j = 0; j < theta.dim(); ++j) {
          double half = z * std::sqrt(std::max(cov(j, j), 0.0));
          if (std::abs(theta.values[j] - step.theta_new.values[j]) > half) {
            contains = false;
            break;
          }
        }
        escalate = contains;
      }
    }

    theta = step.theta_new;
    TrajectoryRecord record;
    record.iteration = k;
    record.theta = theta;
    record.mc_size = step.sample.size();
    record.objective_increment = step.qhat_at_new - step.qhat_at_old;
    record.diagnostics["rel_error"] = rel_error;
    record.diagnostics["escalated"] = escalate ? 1.0 : 0.0;
    trajectory.records.push_back(std::move(record));
    if (done) {
      trajectory.terminated_reason = TerminationReason::converged;
      break;
    }
    if (escalate) {
      mc_size = static_cast<long>(std::ceil(mc_size * (1.0 + 1.0 / config.r)));
    }
  }
  return trajectory;
}

struct CaffoConfig {
  long m0 = 10;
  double ascent_level = 0.80;
  double term_level = 0.90;
  double tau = 1e-3;
  double augment_fraction = 0.5;
  int max_iters = 500;
  int max_augments_per_iter = 60;
};

namespace detail {

// Merge two uniform-weight batches from the same target into one.
template <class Point>
WeightedSample<Point> merge_uniform(WeightedSample<Point> a, WeightedSample<Point> b) {
  for (auto& x : b.draws) a.draws.push_back(std::move(x));
  long total = a.size();
  a.raw_weights.assign(total, 1.0);
  a.weights.assign(total, 1.0 / static_cast<double>(total));
  return a;
}

template <class Point>
bool uniform_weights(const WeightedSample<Point>& sample) {
  return sample.sampler_kind == SamplerKind::direct ||
         sample.sampler_kind == SamplerKind::rejection ||
         sample.sampler_kind == SamplerKind::metropolis_hastings;
}

}  // namespace detail

template <MissingDataModel M>
Trajectory run_caffo(const M& model, Theta theta, const CaffoConfig& config,
                     const SamplerPolicy<M>& sampler, RngStream& rng) {
  if (!(config.tau > 0.0) || !(config.augment_fraction > 0.0) ||
      !(config.ascent_level > 0.0 && config.ascent_level < 1.0) ||
      !(config.term_level > 0.0 && config.term_level < 1.0)) {
    throw ConfigError("run_caffo: invalid configuration");
  }
  Trajectory trajectory;
  trajectory.terminated_reason = TerminationReason::max_iterations;
  long mc_size = config.m0;
  for (int k = 1; k <= config.max_iters; ++k) {
    RngStream stream = rng.child(k);
    long batch = mc_size;
    auto sample = sampler(model, theta, batch, stream);
    auto step = mcem_inner_step(model, theta, std::move(sample));
    auto [lower, upper] = delta_q_bounds(model, step, config.ascent_level);
    if (!step.sample.exact_weights()) {
      int augments = 0;
      long add = static_cast<long>(std::ceil(mc_size * config.augment_fraction));
      // Augment until ascent is certified — unless the termination bound
      // already shows there is little remaining room for improvement, in
      // which case the run is about to stop anyway.
      while (lower <= 0.0 &&
             delta_q_bounds(model, step, config.term_level).second >= config.tau) {
        if (++augments > config.max_augments_per_iter) {
          throw AugmentationStallError("run_caffo: augmentation cap reached", k,
                                       step.sample.size());
        }
        RngStream extra = stream.child(augments);
        auto fresh = sampler(model, theta, add, extra);
        WeightedSample<typename M::Point> combined;
        if (detail::uniform_weights(step.sample) && detail::uniform_weights(fresh)) {
          combined = detail::merge_uniform(std::move(step.sample), std::move(fresh));
        } else {
          // Weighted batches cannot be merged without rescaling; redraw at
          // the combined size instead.
          combined = sampler(model, theta, step.sample.size() + add, extra);
        }
        step = mcem_inner_step(model, theta, std::move(combined));
        std::tie(lower, upper) = delta_q_bounds(model, step, config.ascent_level);
      }
    }
    auto [term_lower, term_upper] = delta_q_bounds(model, step, config.term_level);
    theta = step.theta_new;
    TrajectoryRecord record;
    record.iteration = k;
    record.theta = theta;
    record.mc_size = step.sample.size();
    record.objective_increment = step.qhat_at_new - step.qhat_at_old;
    record.ci_lower = term_lower;
    record.ci_upper = term_upper;
    trajectory.records.push_back(std::move(record));
    mc_size = std::max(mc_size, step.sample.size());
    if (term_upper < config.tau) {
      trajectory.terminated_reason = TerminationReason::increment_below_tau;
      break;
    }
  }
  return trajectory;
}

struct ChanLedolterConfig {
  int pilot_iters = 50;
  long pilot_mc_size = 100;
  int followers = 10;
  double se_threshold = 1e-3;
  double ci_level = 0.95;
  int max_stage2_iters = 200;
};

template <MissingDataModel M>
Trajectory run_chan_ledolter(const M& model, Theta theta0,
                             const ChanLedolterConfig& config,
                             const SamplerPolicy<M>& sampler, RngStream& rng) {
  if (!(config.ci_level > 0.0 && config.ci_level < 1.0) ||
      !(config.se_threshold > 0.0)) {
    throw ConfigError("run_chan_ledolter: invalid configuration");
  }
  Trajectory trajectory;
  trajectory.terminated_reason = TerminationReason::max_iterations;

  // Stage 1: pilot run at a fixed Monte Carlo size, tracking the cumulative
  // estimated log-likelihood ratio against the starting point. The sample
  // drawn at each new estimate first prices the one-step ratio, then drives
  // the next update (recycling the old sample would bias the ratio).
  std::vector<Theta> pilot_thetas;  // theta_1 .. theta_P
  std::vector<double> cumulative_llr;
  Theta theta = theta0;
  RngStream stream0 = rng.child(0);
  auto current = sampler(model, theta, config.pilot_mc_size, stream0);
  long extra_draws = current.size();
  double cumulative = 0.0;
  for (int k = 1; k <= config.pilot_iters; ++k) {
    auto step = mcem_inner_step(model, theta, std::move(current));
    RngStream stream = rng.child(k);
    auto fresh = sampler(model, step.theta_new, config.pilot_mc_size, stream);
    auto [reciprocal, se] = estimate_log_lr(model, theta, step.theta_new, fresh);
    cumulative += -reciprocal;
    theta = step.theta_new;
    pilot_thetas.push_back(theta);
    cumulative_llr.push_back(cumulative);
    TrajectoryRecord record;
    record.iteration = k;
    record.theta = theta;
    record.mc_size = config.pilot_mc_size;
    record.objective_increment = -reciprocal;
    record.diagnostics["stage"] = 1.0;
    record.diagnostics["cumulative_llr"] = cumulative;
    trajectory.records.push_back(std::move(record));
    current = std::move(fresh);
  }

  // The maximizer must leave a full follower window after it; candidates in
  // the pilot tail are excluded up front (past convergence the cumulative
  // log-LR is a noise plateau, so the restriction costs nothing).
  const int candidates = config.pilot_iters - config.followers;
  if (candidates < 1) {
    throw InsufficientPilotError(
        "run_chan_ledolter: pilot too short to leave a follower window");
  }
  int best = 0;
  for (int k = 1; k < candidates; ++k) {
    if (cumulative_llr[k] > cumulative_llr[best]) best = k;
  }

  // One-step runs from the follower iterates pool the Monte Carlo variance of
  // the one-step log-likelihood-ratio estimator near the maximizer.
  double pooled_var = 0.0;
  for (int j = 0; j < config.followers; ++j) {
    const Theta& start = pilot_thetas[best + 1 + j];
    RngStream stream_a = rng.child(1000 + 2 * j);
    auto step = mcem_inner_step(model, start,
                                sampler(model, start, config.pilot_mc_size, stream_a));
    RngStream stream_b = rng.child(1000 + 2 * j + 1);
    auto fresh = sampler(model, step.theta_new, config.pilot_mc_size, stream_b);
    auto [reciprocal, se] = estimate_log_lr(model, start, step.theta_new, fresh);
    (void)reciprocal;
    pooled_var += se * se;
    extra_draws += 2 * config.pilot_mc_size;
  }
  pooled_var /= config.followers;

  // Near the MLE the ratio SE scales like 1/M, so the required size follows
  // from a single proportionality.
  double pooled_se = std::sqrt(pooled_var);
  long stage2_size = std::max<long>(
      2, static_cast<long>(std::ceil(config.pilot_mc_size * pooled_se /
                                     config.se_threshold)));

  // Stage 2: restart from the pilot maximizer; stop when the Wald interval
  // for the one-step log-likelihood ratio contains zero.
  theta = pilot_thetas[best];
  double z = normal_quantile(0.5 * (1.0 + config.ci_level));
  RngStream restart = rng.child(2000);
  current = sampler(model, theta, stage2_size, restart);
  extra_draws += current.size();
  int iteration = config.pilot_iters;
  for (int j = 1; j <= config.max_stage2_iters; ++j) {
    auto step = mcem_inner_step(model, theta, std::move(current));
    RngStream stream = rng.child(2000 + j);
    auto fresh = sampler(model, step.theta_new, stage2_size, stream);
    auto [reciprocal, se] = estimate_log_lr(model, theta, step.theta_new, fresh);
    double increment = -reciprocal;
    theta = step.theta_new;
    TrajectoryRecord record;
    record.iteration = ++iteration;
    record.theta = theta;
    record.mc_size = stage2_size;
    record.objective_increment = increment;
    record.ci_lower = increment - z * se;
    record.ci_upper = increment + z * se;
    record.diagnostics["stage"] = 2.0;
    if (j == 1) record.diagnostics["restart"] = 1.0;
    trajectory.records.push_back(std::move(record));
    if (*trajectory.records.back().ci_lower <= 0.0 &&
        *trajectory.records.back().ci_upper >= 0.0) {
      trajectory.terminated_reason = TerminationReason::ci_contains_zero;
      break;
    }
    current = std::move(fresh);
  }
  trajectory.extra_mc_draws = extra_draws;
  return trajectory;
}

}  // namespace mcem
