#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "mcem/em.hpp"
#include "mcem/mcml.hpp"
#include "mcem/models/blood.hpp"
#include "mcem/optim.hpp"
#include "mcem/saem.hpp"

using namespace mcem;

namespace {

template <class M>
SamplerPolicy<M> enumeration_policy() {
  return [](const M& model, const Theta& theta, long, RngStream&) {
    return model.enumerate_conditional(theta);
  };
}

}  // namespace

TEST_CASE("step schedules evaluate and validate") {
  StepSchedule power = StepSchedule::power(0.7);
  REQUIRE_THAT(power.alpha(1), Catch::Matchers::WithinAbs(1.0, 1e-15));
  REQUIRE_THAT(power.alpha(10), Catch::Matchers::WithinAbs(std::pow(10.0, -0.7), 1e-15));

  StepSchedule harmonic = StepSchedule::harmonic(0.5);
  REQUIRE_THAT(harmonic.alpha(4), Catch::Matchers::WithinAbs(0.125, 1e-15));

  REQUIRE_THROWS_AS(StepSchedule::power(0.5), ConfigError);
  REQUIRE_THROWS_AS(StepSchedule::power(1.01), ConfigError);
  REQUIRE_THROWS_AS(StepSchedule::power(0.7, 0.0), ConfigError);
  REQUIRE_THROWS_AS(StepSchedule::harmonic(1.5), ConfigError);
  REQUIRE_THROWS_AS(power.alpha(0), Error);
}

TEST_CASE("the first Delyon step with unit step size is an EM step") {
  BloodModel blood;
  Theta theta0 = blood.make_theta(1.0 / 3.0, 1.0 / 3.0);
  SaemState state = make_saem_state(blood, theta0);
  RngStream rng(1);
  state = saem_delyon_step(blood, std::move(state), 1, StepSchedule::harmonic(),
                           enumeration_policy<BloodModel>(), rng);
  Theta em = em_step(blood, theta0);
  REQUIRE((state.theta.values - em.values).cwiseAbs().maxCoeff() < 1e-12);
  REQUIRE(state.iteration == 1);
}

TEST_CASE("a zero step size leaves the Delyon state fixed") {
  BloodModel blood;
  Theta theta0 = blood.make_theta(0.25, 0.2);
  SaemState state = make_saem_state(blood, theta0);
  state.stats = blood.expected_stats(theta0);
  state.theta = blood.maximize_given_stats(state.stats);
  Theta before = state.theta;
  StepSchedule zero{StepSchedule::Kind::power, 1.0, 0.0};  // inadmissible, test-only
  RngStream rng(2);
  state = saem_delyon_step(blood, std::move(state), 5, zero,
                           direct_sampler_policy<BloodModel>(), rng);
  REQUIRE((state.theta.values - before.values).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("the first Gu-Kong step learns the Louis information exactly") {
  BloodModel blood;
  Theta theta0 = blood.make_theta(0.25, 0.2);
  SaemState state = make_saem_state(blood, theta0);
  RngStream rng(3);
  state = saem_gu_kong_step(blood, std::move(state), 1, StepSchedule::harmonic(),
                            enumeration_policy<BloodModel>(), rng);
  // With unit step and exact weights, Gamma_1 is the full Louis identity,
  // i.e. the observed information at theta_0.
  Matrix expected = blood.observed_information(theta0);
  REQUIRE((state.gamma_matrix - expected).cwiseAbs().maxCoeff() /
              expected.cwiseAbs().maxCoeff() <
          1e-10);
  REQUIRE(state.floor_engagements == 0);
}

TEST_CASE("the MLE is a fixed point of the exact Gu-Kong update") {
  BloodModel blood;
  Theta mle = solve_score_system(blood, blood.initial_theta());
  SaemState state = make_saem_state(blood, mle);
  RngStream rng(4);
  state = saem_gu_kong_step(blood, std::move(state), 1, StepSchedule::harmonic(),
                            enumeration_policy<BloodModel>(), rng);
  REQUIRE((state.theta.values - mle.values).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("eigen floor lifts indefinite matrices and leaves PD ones alone") {
  Matrix pd(2, 2);
  pd << 3.0, 0.5, 0.5, 2.0;
  Matrix copy = pd;
  REQUIRE_FALSE(detail::eigen_floor(copy));
  REQUIRE((copy - pd).cwiseAbs().maxCoeff() == 0.0);

  Matrix indef(2, 2);
  indef << 1.0, 0.0, 0.0, -4.0;
  REQUIRE(detail::eigen_floor(indef));
  Eigen::SelfAdjointEigenSolver<Matrix> eig(indef);
  REQUIRE(eig.eigenvalues().minCoeff() > 0.0);
}

TEST_CASE("both SAEM variants approach the MLE on a 500-draw budget") {
  BloodModel blood;
  Theta start = blood.make_theta(1.0 / 3.0, 1.0 / 3.0);
  Theta mle = solve_score_system(blood, blood.initial_theta());
  StepSchedule schedule = StepSchedule::power(0.7);
  for (SaemVariant variant : {SaemVariant::gu_kong, SaemVariant::delyon}) {
    RngStream rng(11);
    auto trajectory = run_saem(blood, start, variant, 10, 50, schedule,
                               direct_sampler_policy<BloodModel>(), rng);
    REQUIRE(trajectory.records.size() == 50);
    REQUIRE(trajectory.total_mc_draws() == 500);
    REQUIRE((trajectory.records.back().theta.values - mle.values)
                .cwiseAbs()
                .maxCoeff() < 0.02);
  }
}

TEST_CASE("offline averaging is the running mean on the unconstrained scale") {
  BloodModel blood;
  Theta start = blood.make_theta(1.0 / 3.0, 1.0 / 3.0);
  RngStream rng(13);
  auto trajectory = run_saem(blood, start, SaemVariant::delyon, 10, 20,
                             StepSchedule::power(0.7),
                             direct_sampler_policy<BloodModel>(), rng);
  int burn = 5;
  auto averaged = offline_average(trajectory, burn);
  REQUIRE(averaged.records.size() == trajectory.records.size() - burn);
  Vector running = Vector::Zero(2);
  for (std::size_t j = 0; j < averaged.records.size(); ++j) {
    running += (to_unconstrained(trajectory.records[burn + j].theta) - running) /
               static_cast<double>(j + 1);
    Theta expected = from_unconstrained(running, start.constraint);
    REQUIRE((averaged.records[j].theta.values - expected.values).cwiseAbs().maxCoeff() <
            1e-14);
    REQUIRE(averaged.records[j].iteration == trajectory.records[burn + j].iteration);
  }
  REQUIRE_THROWS_AS(offline_average(trajectory, 20), Error);
  REQUIRE_THROWS_AS(offline_average(trajectory, -1), Error);
}

TEST_CASE("offline averaging reduces the cross-seed spread of the final estimate") {
  BloodModel blood;
  Theta start = blood.make_theta(1.0 / 3.0, 1.0 / 3.0);
  std::vector<double> raw, avg;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    RngStream rng(seed);
    auto trajectory = run_saem(blood, start, SaemVariant::delyon, 10, 50,
                               StepSchedule::power(0.7),
                               direct_sampler_policy<BloodModel>(), rng);
    raw.push_back(trajectory.records.back().theta.values[0]);
    avg.push_back(offline_average(trajectory, 25).records.back().theta.values[0]);
  }
  REQUIRE(sample_sd(avg) < sample_sd(raw));
}

TEST_CASE("the MCML surface is exactly zero at its reference") {
  BloodModel blood;
  Theta star = blood.make_theta(1.0 / 3.0, 1.0 / 3.0);
  RngStream rng(17);
  auto surface = mcml_surface(blood, star, 200, rng);
  REQUIRE(surface.eval(star) == 0.0);
  REQUIRE_THROWS_AS(mcml_surface(blood, star, 1, rng), Error);
}

TEST_CASE("the MCML surface gradient matches finite differences") {
  BloodModel blood;
  Theta star = blood.make_theta(1.0 / 3.0, 1.0 / 3.0);
  RngStream rng(19);
  auto surface = mcml_surface(blood, star, 500, rng);
  Theta at = blood.make_theta(0.28, 0.14);
  Vector grad = surface.grad(at);
  const double h = 1e-6;
  for (int j = 0; j < 2; ++j) {
    Theta hi = at, lo = at;
    hi.values[j] += h;
    lo.values[j] -= h;
    double fd = (surface.eval(hi) - surface.eval(lo)) / (2.0 * h);
    REQUIRE_THAT(grad[j], Catch::Matchers::WithinAbs(fd, 1e-6));
  }
}

TEST_CASE("the enumeration-backed MCML surface is the exact ratio surface") {
  BloodModel blood;
  Theta star = blood.make_theta(1.0 / 3.0, 1.0 / 3.0);
  auto surface = mcml_surface(blood, star, blood.enumerate_conditional(star));
  Theta probe = blood.make_theta(0.3, 0.13);
  double exact = blood.observed_loglik(probe) - blood.observed_loglik(star);
  REQUIRE_THAT(surface.eval(probe), Catch::Matchers::WithinAbs(exact, 1e-12));

  Theta mle = solve_score_system(blood, blood.initial_theta());
  Theta fit = mcml_maximize(surface);
  REQUIRE((fit.values - mle.values).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("two Monte Carlo MCML runs bracket the reported estimates") {
  BloodModel blood;
  Theta mle = solve_score_system(blood, blood.initial_theta());
  Theta star = blood.make_theta(1.0 / 3.0, 1.0 / 3.0);
  RngStream rng(23);
  auto first_surface = mcml_surface(blood, star, 1000, rng);
  Theta first = mcml_maximize(first_surface);
  REQUIRE((first.values - mle.values).cwiseAbs().maxCoeff() < 0.01);

  RngStream rng2(24);
  auto second_surface = mcml_surface(blood, first, 1000, rng2);
  Theta second = mcml_maximize(second_surface);
  REQUIRE((second.values - mle.values).cwiseAbs().maxCoeff() < 0.01);
}
