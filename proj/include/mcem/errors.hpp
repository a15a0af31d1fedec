#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace mcem {

// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A constraint on a parameter vector was violated.
struct ConstraintError : Error {
  using Error::Error;
};

// A model does not provide a capability required by the caller.
struct CapabilityError : Error {
  using Error::Error;
};

// All importance weights underflowed to zero (support mismatch).
struct DegenerateWeightsError : Error {
  using Error::Error;
};

// Rejection sampler ran out of proposals before reaching the target size.
struct BudgetExhaustedError : Error {
  BudgetExhaustedError(const std::string& msg, long accepted)
      : Error(msg), accepted_count(accepted) {}
  long accepted_count;
};

// Markov chain initial state has zero target density.
struct InvalidInitError : Error {
  using Error::Error;
};

struct OptimizationError : Error {
  using Error::Error;
};

struct SingularityError : Error {
  using Error::Error;
};

// Chan-Ledolter: pilot maximizer too close to the end of the pilot run.
struct InsufficientPilotError : Error {
  using Error::Error;
};

// Caffo: sample augmentation loop hit its cap without a positive lower bound.
struct AugmentationStallError : Error {
  AugmentationStallError(const std::string& msg, int iter, long mc_size)
      : Error(msg), iteration(iter), mc_size(mc_size) {}
  int iteration;
  long mc_size;
};

struct InsufficientSampleError : Error {
  using Error::Error;
};

// Estimated information matrix is not positive definite.
struct IndefiniteInformationError : Error {
  IndefiniteInformationError(const std::string& msg, std::vector<double> eigs)
      : Error(msg), eigenvalues(std::move(eigs)) {}
  std::vector<double> eigenvalues;
};

struct ConfigError : Error {
  using Error::Error;
};

}  // namespace mcem
