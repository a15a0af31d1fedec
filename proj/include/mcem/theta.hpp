#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "mcem/errors.hpp"

namespace mcem {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

enum class ConstraintKind {
  unconstrained,
  // All components in (0,1) with sum < 1; the remainder r = 1 - sum(values)
  // is an implicit extra category.
  simplex_interior,
  // Flagged components strictly positive.
  positive_components,
};

struct Constraint {
  ConstraintKind kind = ConstraintKind::unconstrained;
  std::vector<int> positive_indices;  // used by positive_components

  static Constraint none() { return {}; }
  static Constraint simplex() { return {ConstraintKind::simplex_interior, {}}; }
  static Constraint positive(std::vector<int> idx) {
    return {ConstraintKind::positive_components, std::move(idx)};
  }
};

// Parameter vector plus constraint metadata. Immutable value object.
struct Theta {
  Vector values;
  Constraint constraint;

  int dim() const { return static_cast<int>(values.size()); }
};

inline bool validate_theta(const Theta& theta) {
  switch (theta.constraint.kind) {
    case ConstraintKind::unconstrained:
      return theta.values.allFinite();
    case ConstraintKind::simplex_interior: {
      if (!theta.values.allFinite()) return false;
      double sum = 0.0;
      for (int i = 0; i < theta.dim(); ++i) {
        double v = theta.values[i];
        if (!(v > 0.0 && v < 1.0)) return false;
        sum += v;
      }
      return sum < 1.0;
    }
    case ConstraintKind::positive_components: {
      if (!theta.values.allFinite()) return false;
      for (int i : theta.constraint.positive_indices) {
        if (!(theta.values[i] > 0.0)) return false;
      }
      return true;
    }
  }
  return false;
}

// Logit-style map to an unconstrained parameterization.
// Simplex: v_i = log(theta_i / r) with r the implicit remainder.
// Positive components: v_i = log(theta_i) on flagged coordinates.
inline Vector to_unconstrained(const Theta& theta) {
  if (!validate_theta(theta)) {
    throw ConstraintError("to_unconstrained: theta violates its constraint");
  }
  Vector v = theta.values;
  switch (theta.constraint.kind) {
    case ConstraintKind::unconstrained:
      break;
    case ConstraintKind::simplex_interior: {
      double r = 1.0 - theta.values.sum();
      for (int i = 0; i < v.size(); ++i) v[i] = std::log(theta.values[i] / r);
      break;
    }
    case ConstraintKind::positive_components:
      for (int i : theta.constraint.positive_indices) v[i] = std::log(v[i]);
      break;
  }
  return v;
}

inline Theta from_unconstrained(const Vector& v, const Constraint& constraint) {
  Theta theta{v, constraint};
  switch (constraint.kind) {
    case ConstraintKind::unconstrained:
      break;
    case ConstraintKind::simplex_interior: {
      // Softmax with an implicit zero category, shifted for stability.
      double m = 0.0;
      for (int i = 0; i < v.size(); ++i) m = std::max(m, v[i]);
      double denom = std::exp(-m);
      for (int i = 0; i < v.size(); ++i) denom += std::exp(v[i] - m);
      for (int i = 0; i < v.size(); ++i) theta.values[i] = std::exp(v[i] - m) / denom;
      break;
    }
    case ConstraintKind::positive_components:
      for (int i : constraint.positive_indices) theta.values[i] = std::exp(v[i]);
      break;
  }
  return theta;
}

// Jacobian d(theta)/d(v) of from_unconstrained at theta; used for chain-rule
// transforms of scores and information matrices.
inline Matrix unconstrained_jacobian(const Theta& theta) {
  int p = theta.dim();
  Matrix jac = Matrix::Identity(p, p);
  switch (theta.constraint.kind) {
    case ConstraintKind::unconstrained:
      break;
    case ConstraintKind::simplex_interior:
      for (int i = 0; i < p; ++i) {
        for (int j = 0; j < p; ++j) {
          double kron = (i == j) ? 1.0 : 0.0;
          jac(i, j) = theta.values[i] * (kron - theta.values[j]);
        }
      }
      break;
    case ConstraintKind::positive_components:
      for (int i : theta.constraint.positive_indices) jac(i, i) = theta.values[i];
      break;
  }
  return jac;
}

}  // namespace mcem
