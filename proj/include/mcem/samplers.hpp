#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "mcem/errors.hpp"
#include "mcem/model.hpp"
#include "mcem/rng.hpp"
#include "mcem/stats.hpp"
#include "mcem/weighted_sample.hpp"

namespace mcem {

template <class Point>
struct ProposalSpec {
  enum class Kind { independence, random_walk };

  Kind kind = Kind::independence;
  // Independence proposals: a (possibly unnormalized) log density and a
  // generator. Random-walk proposals: a symmetric step function; step scales
  // are payload-specific and baked into the step closure.
  std::function<double(const Point&)> log_density;
  std::function<Point(RngStream&)> sample;
  std::function<Point(const Point&, RngStream&)> step;

  static ProposalSpec independence(std::function<double(const Point&)> log_dens,
                                   std::function<Point(RngStream&)> sampler) {
    ProposalSpec spec;
    spec.kind = Kind::independence;
    spec.log_density = std::move(log_dens);
    spec.sample = std::move(sampler);
    return spec;
  }

  static ProposalSpec random_walk(std::function<Point(const Point&, RngStream&)> stepper) {
    ProposalSpec spec;
    spec.kind = Kind::random_walk;
    spec.step = std::move(stepper);
    return spec;
  }
};

template <class Point>
struct MHConfig {
  long burn_in = 0;
  long thinning = 1;  // keep every thinning-th state
  ProposalSpec<Point> proposal;
};

template <MissingDataModel M>
WeightedSample<typename M::Point> sample_direct(const M& model, const Theta& theta,
                                                long mc_size, RngStream& rng) {
  if (mc_size < 1) throw Error("sample_direct: M must be at least 1");
  WeightedSample<typename M::Point> sample;
  if constexpr (HasDirectSampler<M>) {
    sample.draws = model.sample_conditional_direct(theta, mc_size, rng);
  } else {
    throw CapabilityError("sample_direct: model has no direct conditional sampler");
  }
  sample.sampler_kind = SamplerKind::direct;
  sample.target_theta = theta;
  sample.raw_weights.assign(mc_size, 1.0);
  sample.weights.assign(mc_size, 1.0 / static_cast<double>(mc_size));
  return sample;
}

// Self-normalized importance sampling; raw weights are likelihood ratios of
// the unnormalized conditional density to the proposal, computed in log space
// with max-shift. With truncate, raw weights are clamped at sqrt(M) times
// their mean before normalization.
template <MissingDataModel M>
WeightedSample<typename M::Point> sample_importance(const M& model, const Theta& theta,
                                                    const ProposalSpec<typename M::Point>& proposal,
                                                    long mc_size, bool truncate,
                                                    RngStream& rng) {
  if (mc_size < 2) throw Error("sample_importance: M must be at least 2");
  WeightedSample<typename M::Point> sample;
  sample.sampler_kind =
      truncate ? SamplerKind::truncated_importance : SamplerKind::importance;
  sample.target_theta = theta;
  sample.draws.reserve(mc_size);
  std::vector<double> log_w(mc_size);
  double max_log = -std::numeric_limits<double>::infinity();
  for (long i = 0; i < mc_size; ++i) {
    auto x = proposal.sample(rng);
    log_w[i] = model.conditional_log_density_unnorm(theta, x) - proposal.log_density(x);
    max_log = std::max(max_log, log_w[i]);
    sample.draws.push_back(std::move(x));
  }
  if (!std::isfinite(max_log)) {
    throw DegenerateWeightsError("sample_importance: all raw weights are zero");
  }
  sample.raw_weights.resize(mc_size);
  double total = 0.0;
  for (long i = 0; i < mc_size; ++i) {
    sample.raw_weights[i] = std::exp(log_w[i] - max_log);
    total += sample.raw_weights[i];
  }
  if (truncate) {
    double threshold = std::sqrt(static_cast<double>(mc_size)) *
                       (total / static_cast<double>(mc_size));
    total = 0.0;
    for (double& w : sample.raw_weights) {
      w = std::min(w, threshold);
      total += w;
    }
  }
  sample.weights.resize(mc_size);
  for (long i = 0; i < mc_size; ++i) sample.weights[i] = sample.raw_weights[i] / total;
  return sample;
}

// Accept-reject with a caller-asserted log-scale envelope constant:
// target_log_unnorm(x) <= envelope_log_const + proposal.log_density(x).
template <MissingDataModel M>
WeightedSample<typename M::Point> sample_rejection(const M& model, const Theta& theta,
                                                   const ProposalSpec<typename M::Point>& proposal,
                                                   double envelope_log_const, long mc_size,
                                                   long max_proposals, RngStream& rng) {
  if (mc_size < 1) throw Error("sample_rejection: M must be at least 1");
  WeightedSample<typename M::Point> sample;
  sample.sampler_kind = SamplerKind::rejection;
  sample.target_theta = theta;
  long consumed = 0;
  while (sample.size() < mc_size) {
    if (consumed >= max_proposals) {
      throw BudgetExhaustedError("sample_rejection: proposal budget exhausted",
                                 sample.size());
    }
    auto x = proposal.sample(rng);
    ++consumed;
    double log_accept = model.conditional_log_density_unnorm(theta, x) -
                        envelope_log_const - proposal.log_density(x);
    if (log_accept >= 0.0 || std::log(rng.uniform()) <= log_accept) {
      sample.draws.push_back(std::move(x));
    }
  }
  sample.raw_weights.assign(mc_size, 1.0);
  sample.weights.assign(mc_size, 1.0 / static_cast<double>(mc_size));
  sample.diagnostics["proposals_consumed"] = static_cast<double>(consumed);
  sample.diagnostics["acceptance_rate"] =
      static_cast<double>(mc_size) / static_cast<double>(consumed);
  return sample;
}

// Metropolis-Hastings chain targeting the conditional distribution. Rejected
// steps repeat the previous state in the pre-thinning chain; every
// thinning-th post-burn-in state is kept.
template <MissingDataModel M>
WeightedSample<typename M::Point> sample_mh(const M& model, const Theta& theta,
                                            const MHConfig<typename M::Point>& config,
                                            long mc_size, typename M::Point init,
                                            RngStream& rng) {
  if (mc_size < 1) throw Error("sample_mh: M must be at least 1");
  if (config.thinning < 1) throw Error("sample_mh: thinning must be at least 1");
  double current_log_target = model.conditional_log_density_unnorm(theta, init);
  if (!std::isfinite(current_log_target)) {
    throw InvalidInitError("sample_mh: initial state outside the conditional support");
  }
  WeightedSample<typename M::Point> sample;
  sample.sampler_kind = SamplerKind::metropolis_hastings;
  sample.target_theta = theta;
  sample.draws.reserve(mc_size);

  const bool independence = config.proposal.kind == ProposalSpec<typename M::Point>::Kind::independence;
  typename M::Point current = std::move(init);
  double current_log_proposal = independence ? config.proposal.log_density(current) : 0.0;
  long accepted = 0;
  const long total_steps = config.burn_in + mc_size * config.thinning;
  for (long step = 0; step < total_steps; ++step) {
    typename M::Point candidate =
        independence ? config.proposal.sample(rng) : config.proposal.step(current, rng);
    double cand_log_target = model.conditional_log_density_unnorm(theta, candidate);
    double log_ratio = cand_log_target - current_log_target;
    double cand_log_proposal = 0.0;
    if (independence) {
      cand_log_proposal = config.proposal.log_density(candidate);
      log_ratio += current_log_proposal - cand_log_proposal;
    }
    if (log_ratio >= 0.0 || std::log(rng.uniform()) <= log_ratio) {
      current = std::move(candidate);
      current_log_target = cand_log_target;
      current_log_proposal = cand_log_proposal;
      ++accepted;
    }
    bool past_burn_in = step >= config.burn_in;
    if (past_burn_in && (step - config.burn_in + 1) % config.thinning == 0) {
      sample.draws.push_back(current);
    }
  }
  sample.raw_weights.assign(mc_size, 1.0);
  sample.weights.assign(mc_size, 1.0 / static_cast<double>(mc_size));
  sample.diagnostics["acceptance_rate"] =
      static_cast<double>(accepted) / static_cast<double>(total_steps);
  return sample;
}

}  // namespace mcem
