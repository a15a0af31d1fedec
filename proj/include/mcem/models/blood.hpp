#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "mcem/model.hpp"
#include "mcem/rng.hpp"
#include "mcem/theta.hpp"
#include "mcem/weighted_sample.hpp"

namespace mcem {

// ABO blood-type benchmark. Observed data are phenotype counts (O, A, B, AB);
// missing data are genotype counts (OO, AO, AA, BO, BB, AB). theta = (p, q),
// the A and B allele frequencies, with r = 1 - p - q implicit.
class BloodModel {
 public:
  using Point = std::array<double, 6>;

  struct Data {
    std::array<double, 4> y{10.0, 16.0, 7.0, 1.0};
    double n() const { return y[0] + y[1] + y[2] + y[3]; }
  };

  BloodModel() = default;
  explicit BloodModel(Data data) : data_(data) {}

  const Data& data() const { return data_; }
  int dim() const { return 2; }

  Theta initial_theta() const {
    Theta theta{Vector(2), Constraint::simplex()};
    theta.values << 1.0 / 3.0, 1.0 / 3.0;
    return theta;
  }

  Theta make_theta(double p, double q) const {
    Theta theta{Vector(2), Constraint::simplex()};
    theta.values << p, q;
    return theta;
  }

  // Allele counts (n_O, n_A, n_B) from genotype counts.
  static Vector allele_counts(const Point& x) {
    Vector counts(3);
    counts << 2.0 * x[0] + x[1] + x[3],  // O
        x[1] + 2.0 * x[2] + x[5],        // A
        x[3] + 2.0 * x[4] + x[5];        // B
    return counts;
  }

  // n_O log r + n_A log p + n_B log q (constants dropped).
  double complete_loglik(const Theta& theta, const Point& x) const {
    auto [p, q, r] = unpack(theta);
    Vector counts = allele_counts(x);
    return counts[0] * std::log(r) + counts[1] * std::log(p) + counts[2] * std::log(q);
  }

  Vector complete_score(const Theta& theta, const Point& x) const {
    auto [p, q, r] = unpack(theta);
    Vector counts = allele_counts(x);
    Vector score(2);
    score << counts[1] / p - counts[0] / r, counts[2] / q - counts[0] / r;
    return score;
  }

  Matrix complete_neg_hessian(const Theta& theta, const Point& x) const {
    auto [p, q, r] = unpack(theta);
    Vector counts = allele_counts(x);
    Matrix info(2, 2);
    double cross = counts[0] / (r * r);
    info << counts[1] / (p * p) + cross, cross, cross, counts[2] / (q * q) + cross;
    return info;
  }

  // log f_m(x | y) up to the theta-free normalization: the genotype counts are
  // multinomial, so the x-dependent part is sum x_i log rho_i - sum log x_i!.
  double conditional_log_density_unnorm(const Theta& theta, const Point& x) const {
    if (!in_support(x)) return -std::numeric_limits<double>::infinity();
    auto [p, q, r] = unpack(theta);
    std::array<double, 6> log_rho = {2.0 * std::log(r), std::log(2.0 * p * r),
                                     2.0 * std::log(p), std::log(2.0 * q * r),
                                     2.0 * std::log(q), std::log(2.0 * p * q)};
    double total = 0.0;
    for (int i = 0; i < 6; ++i) {
      total += x[i] * log_rho[i] - std::lgamma(x[i] + 1.0);
    }
    return total;
  }

  bool in_support(const Point& x) const {
    for (double v : x) {
      if (v < 0.0 || std::floor(v) != v) return false;
    }
    return x[0] == data_.y[0] && x[1] + x[2] == data_.y[1] &&
           x[3] + x[4] == data_.y[2] && x[5] == data_.y[3];
  }

  // X2|Y ~ Bin(y2, 2pr/(p^2+2pr)), X4|Y ~ Bin(y3, 2qr/(q^2+2qr)); the other
  // components are determined by the observed counts.
  std::vector<Point> sample_conditional_direct(const Theta& theta, long m,
                                               RngStream& rng) const {
    auto [alpha1, beta1] = conditional_probs(theta);
    std::vector<Point> draws;
    draws.reserve(m);
    for (long i = 0; i < m; ++i) {
      double x2 = static_cast<double>(rng.binomial(static_cast<long>(data_.y[1]), alpha1));
      double x4 = static_cast<double>(rng.binomial(static_cast<long>(data_.y[2]), beta1));
      draws.push_back(point_from_x2_x4(x2, x4));
    }
    return draws;
  }

  Point point_from_x2_x4(double x2, double x4) const {
    return {data_.y[0], x2, data_.y[1] - x2, x4, data_.y[2] - x4, data_.y[3]};
  }

  static constexpr bool loglik_linear_in_stats = true;

  Vector sufficient_stats(const Point& x) const { return allele_counts(x); }

  // Proportional allocation: the maximizer of nO log r + nA log p + nB log q.
  Theta maximize_given_stats(const Vector& stats) const {
    double total = stats.sum();
    return make_theta(stats[1] / total, stats[2] / total);
  }

  // Conditional expectations of the allele counts; nu_O by conservation.
  Vector expected_stats(const Theta& theta) const {
    auto [p, q, r] = unpack(theta);
    const auto& y = data_.y;
    double nu_a = y[1] * (1.0 + p * p / (p * p + 2.0 * p * r)) + y[3];
    double nu_b = y[2] * (1.0 + q * q / (q * q + 2.0 * q * r)) + y[3];
    double nu_o = 2.0 * data_.n() - nu_a - nu_b;
    Vector nu(3);
    nu << nu_o, nu_a, nu_b;
    return nu;
  }

  double observed_loglik(const Theta& theta) const {
    auto [p, q, r] = unpack(theta);
    const auto& y = data_.y;
    return 2.0 * y[0] * std::log(r) + y[1] * std::log(p * p + 2.0 * p * r) +
           y[2] * std::log(q * q + 2.0 * q * r) + y[3] * std::log(p * q);
  }

  Vector observed_score(const Theta& theta) const {
    auto [p, q, r] = unpack(theta);
    const auto& y = data_.y;
    double py = p * p + 2.0 * p * r;
    double qy = q * q + 2.0 * q * r;
    Vector score(2);
    score << -2.0 * y[0] / r + 2.0 * r * y[1] / py - 2.0 * q * y[2] / qy + y[3] / p,
        -2.0 * y[0] / r - 2.0 * p * y[1] / py + 2.0 * r * y[2] / qy + y[3] / q;
    return score;
  }

  // Analytic observed information (negative Hessian of the observed
  // log-likelihood); verified against central differences in the tests.
  Matrix observed_information(const Theta& theta) const {
    auto [p, q, r] = unpack(theta);
    const auto& y = data_.y;
    double py = p * p + 2.0 * p * r;
    double qy = q * q + 2.0 * q * r;
    double ipp = 2.0 * y[0] / (r * r) + y[1] * (2.0 * py + 4.0 * r * r) / (py * py) +
                 4.0 * q * q * y[2] / (qy * qy) + y[3] / (p * p);
    double ipq = 2.0 * y[0] / (r * r) + 2.0 * p * p * y[1] / (py * py) +
                 2.0 * q * q * y[2] / (qy * qy);
    double iqq = 2.0 * y[0] / (r * r) + 4.0 * p * p * y[1] / (py * py) +
                 y[2] * (2.0 * qy + 4.0 * r * r) / (qy * qy) + y[3] / (q * q);
    Matrix info(2, 2);
    info << ipp, ipq, ipq, iqq;
    return info;
  }

  // Exact conditional moments of the missing data.
  Vector conditional_mean(const Theta& theta) const {
    auto [alpha1, beta1] = conditional_probs(theta);
    const auto& y = data_.y;
    Vector mu(6);
    mu << y[0], y[1] * alpha1, y[1] * (1.0 - alpha1), y[2] * beta1,
        y[2] * (1.0 - beta1), y[3];
    return mu;
  }

  Matrix conditional_covariance(const Theta& theta) const {
    auto [alpha1, beta1] = conditional_probs(theta);
    const auto& y = data_.y;
    Matrix cov = Matrix::Zero(6, 6);
    double va = y[1] * alpha1 * (1.0 - alpha1);
    double vb = y[2] * beta1 * (1.0 - beta1);
    cov(1, 1) = cov(2, 2) = va;
    cov(1, 2) = cov(2, 1) = -va;
    cov(3, 3) = cov(4, 4) = vb;
    cov(3, 4) = cov(4, 3) = -vb;
    return cov;
  }

  // The complete-data score is linear in x: S_c = score_map(theta) * x.
  Matrix score_map(const Theta& theta) const {
    auto [p, q, r] = unpack(theta);
    Matrix map(2, 6);
    map << -2.0 / r, 1.0 / p - 1.0 / r, 2.0 / p, -1.0 / r, 0.0, 1.0 / p,
        -2.0 / r, -1.0 / r, 0.0, 1.0 / q - 1.0 / r, 2.0 / q, 1.0 / q;
    return map;
  }

  // E[-Hessian of l_c | y]: the complete-data neg-Hessian is linear in the
  // allele counts, so plug in their conditional expectations.
  Matrix exact_complete_information(const Theta& theta) const {
    auto [p, q, r] = unpack(theta);
    Vector nu = expected_stats(theta);
    Matrix info(2, 2);
    double cross = nu[0] / (r * r);
    info << nu[1] / (p * p) + cross, cross, cross, nu[2] / (q * q) + cross;
    return info;
  }

  // E[S_c S_c^T | y] = score_map (Sigma_m + mu mu^T) score_map^T.
  Matrix exact_score_outer_expectation(const Theta& theta) const {
    Matrix map = score_map(theta);
    Vector mu = conditional_mean(theta);
    Matrix second_moment = conditional_covariance(theta) + mu * mu.transpose();
    return map * second_moment * map.transpose();
  }

  // -E[Hessian of l_m | y]: Fisher information of the two conditional
  // binomials in theta, via the gradients of their success probabilities.
  Matrix exact_missing_information(const Theta& theta) const {
    auto [p, q, r] = unpack(theta);
    auto [alpha1, beta1] = conditional_probs(theta);
    const auto& y = data_.y;
    // alpha1 = 2r/(p+2r), beta1 = 2r/(q+2r)
    double ap = p + 2.0 * r;
    double bq = q + 2.0 * r;
    Vector grad_alpha(2), grad_beta(2);
    grad_alpha << -2.0 * (p + r) / (ap * ap), -2.0 * p / (ap * ap);
    grad_beta << -2.0 * q / (bq * bq), -2.0 * (q + r) / (bq * bq);
    return y[1] / (alpha1 * (1.0 - alpha1)) * grad_alpha * grad_alpha.transpose() +
           y[2] / (beta1 * (1.0 - beta1)) * grad_beta * grad_beta.transpose();
  }

  // Full conditional support with exact binomial probabilities as weights;
  // 17 x 8 = 136 points for the default data.
  WeightedSample<Point> enumerate_conditional(const Theta& theta) const {
    auto [alpha1, beta1] = conditional_probs(theta);
    const long y2 = static_cast<long>(data_.y[1]);
    const long y3 = static_cast<long>(data_.y[2]);
    WeightedSample<Point> sample;
    sample.sampler_kind = SamplerKind::direct;
    sample.target_theta = theta;
    sample.diagnostics["exact_weights"] = 1.0;
    for (long x2 = 0; x2 <= y2; ++x2) {
      double lp2 = log_binomial_pmf(y2, x2, alpha1);
      for (long x4 = 0; x4 <= y3; ++x4) {
        double lp4 = log_binomial_pmf(y3, x4, beta1);
        sample.draws.push_back(point_from_x2_x4(static_cast<double>(x2),
                                                static_cast<double>(x4)));
        sample.raw_weights.push_back(std::exp(lp2 + lp4));
      }
    }
    double total = 0.0;
    for (double w : sample.raw_weights) total += w;
    sample.weights.resize(sample.raw_weights.size());
    for (std::size_t i = 0; i < sample.weights.size(); ++i) {
      sample.weights[i] = sample.raw_weights[i] / total;
    }
    return sample;
  }

  std::pair<double, double> conditional_probs(const Theta& theta) const {
    auto [p, q, r] = unpack(theta);
    return {2.0 * p * r / (p * p + 2.0 * p * r), 2.0 * q * r / (q * q + 2.0 * q * r)};
  }

 private:
  struct PQR {
    double p, q, r;
  };

  PQR unpack(const Theta& theta) const {
    if (!validate_theta(theta)) {
      throw ConstraintError("BloodModel: theta outside the simplex interior");
    }
    double p = theta.values[0];
    double q = theta.values[1];
    return {p, q, 1.0 - p - q};
  }

  static double log_binomial_pmf(long n, long k, double prob) {
    return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) +
           k * std::log(prob) + (n - k) * std::log1p(-prob);
  }

  Data data_;
};

// Symmetric integer random walk on (x2, x4), reflected at the support
// boundaries {0..y2} x {0..y3}; used by the Metropolis-Hastings sampler.
inline BloodModel::Point blood_random_walk_step(const BloodModel& model,
                                                const BloodModel::Point& x,
                                                long max_step, RngStream& rng) {
  auto reflect = [](long v, long hi) {
    while (v < 0 || v > hi) {
      if (v < 0) v = -v;
      if (v > hi) v = 2 * hi - v;
    }
    return v;
  };
  long y2 = static_cast<long>(model.data().y[1]);
  long y3 = static_cast<long>(model.data().y[2]);
  long x2 = reflect(static_cast<long>(x[1]) + rng.uniform_int(-max_step, max_step), y2);
  long x4 = reflect(static_cast<long>(x[3]) + rng.uniform_int(-max_step, max_step), y3);
  return model.point_from_x2_x4(static_cast<double>(x2), static_cast<double>(x4));
}

}  // namespace mcem
