#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mcem/errors.hpp"
#include "mcem/theta.hpp"

namespace mcem {

enum class SamplerKind {
  direct,
  importance,
  truncated_importance,
  rejection,
  metropolis_hastings,
};

inline const char* to_string(SamplerKind kind) {
  switch (kind) {
    case SamplerKind::direct: return "direct";
    case SamplerKind::importance: return "importance";
    case SamplerKind::truncated_importance: return "truncated-importance";
    case SamplerKind::rejection: return "rejection";
    case SamplerKind::metropolis_hastings: return "metropolis-hastings";
  }
  return "?";
}

// A batch of missing-data draws with normalized weights and provenance.
// Payloads are model-defined; engines never inspect them.
template <class Point>
struct WeightedSample {
  std::vector<Point> draws;
  std::vector<double> weights;      // nonnegative, sum to one
  std::vector<double> raw_weights;  // unnormalized, same length as draws
  SamplerKind sampler_kind = SamplerKind::direct;
  Theta target_theta;
  std::uint64_t seed = 0;
  std::map<std::string, double> diagnostics;

  long size() const { return static_cast<long>(draws.size()); }

  // Set when the "sample" is a full enumeration of the conditional support
  // with exact probabilities as weights; Monte Carlo error is then zero.
  bool exact_weights() const {
    auto it = diagnostics.find("exact_weights");
    return it != diagnostics.end() && it->second > 0.0;
  }
};

template <class Point>
void check_sample_invariants(const WeightedSample<Point>& sample) {
  if (sample.raw_weights.size() != sample.draws.size() ||
      sample.weights.size() != sample.draws.size()) {
    throw Error("WeightedSample: weight vectors must match draws in length");
  }
  double total = 0.0;
  for (double w : sample.weights) {
    if (!(w >= 0.0)) throw Error("WeightedSample: negative weight");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-12) {
    throw Error("WeightedSample: weights must sum to one");
  }
}

// 1 / sum(w_i^2): the equivalent number of equally weighted draws.
template <class Point>
double effective_sample_size(const WeightedSample<Point>& sample) {
  double s = 0.0;
  for (double w : sample.weights) s += w * w;
  return s > 0.0 ? 1.0 / s : 0.0;
}

}  // namespace mcem
