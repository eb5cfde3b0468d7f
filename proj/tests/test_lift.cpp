#include <doctest.h>

#include <cmath>

#include "volterra/error.hpp"
#include "volterra/lift.hpp"

using namespace volterra;
using namespace volterra::lift;
using kernels::KernelSpec;
using resolvents::TimeGrid;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::ConfigInvalid;
}

sim::SimOptions retained() {
  sim::SimOptions o;
  o.retain_history = true;
  return o;
}

std::vector<perturb::PerturbationSpec> orders(std::initializer_list<double> a) {
  std::vector<perturb::PerturbationSpec> v;
  for (double x : a) {
    perturb::PerturbationSpec s;
    s.alpha = x;
    v.push_back(s);
  }
  return v;
}

}  // namespace

TEST_SUITE("lift") {

TEST_CASE("default maturities") {
  const auto g = TimeGrid::make(1.0 / 64, 1.0);
  const auto x = default_x_grid(g);
  REQUIRE(x.size() == 33);
  CHECK(x[0] == 0.0);
  CHECK(x[1] == doctest::Approx(1.0 / 64));
  CHECK(x.back() == 1.0);
  for (std::size_t i = 1; i < x.size(); ++i) CHECK(x[i] > x[i - 1]);
}

TEST_CASE("curve at t = 0 is the initial curve") {
  const auto g = TimeGrid::make(1.0 / 32, 1.0);
  auto m = sim::volterra_cir(KernelSpec::fractional(0.3), 0.3, 0.3, -0.7, 0.3);
  m.g = {KernelSpec::exponential(2.0, 0.3)};
  const auto e = sim::simulate_sve(m, g, 3, 1, retained());
  const auto x = default_x_grid(g, 8);
  const auto s = lift_state(e, 1, 0.0, x);
  for (std::size_t j = 0; j < x.size(); ++j) CHECK(s.at(0, j) == doctest::Approx(0.3 * std::exp(-2.0 * x[j])));
}

TEST_CASE("curve at x = 0 is the state") {
  const auto g = TimeGrid::make(1.0 / 64, 1.0);
  const auto m = sim::volterra_cir(KernelSpec::fractional(0.3), 0.3, 0.3, -0.7, 0.1);
  const auto e = sim::simulate_sve(m, g, 20, 3, retained());
  REQUIRE(e.truncation_events == 0);
  double worst = 0.0;
  for (std::size_t p = 0; p < 20; ++p)
    for (std::size_t k = 0; k <= 64; k += 3) {
      const auto s = lift_state(e, p, g.node(k), {0.0, 0.1});
      worst = std::max(worst, std::abs(s.at(0, 0) - e.x(p, k)));
    }
  CHECK(worst == 0.0);
}

TEST_CASE("shift-invariant kernel gives a flat curve") {
  const auto g = TimeGrid::make(1.0 / 32, 1.0);
  const auto e = sim::simulate_sve(sim::brownian(), g, 4, 9, retained());
  const auto x = default_x_grid(g, 12);
  for (std::size_t p = 0; p < 4; ++p) {
    const auto s = lift_state(e, p, 0.5, x);
    for (std::size_t j = 0; j < x.size(); ++j) CHECK(s.at(0, j) == doctest::Approx(e.x(p, 16)).epsilon(1e-13));
  }
}

TEST_CASE("flow property") {
  const auto g = TimeGrid::make(1.0 / 64, 1.0);
  const auto x = default_x_grid(g, 16);
  for (auto mode : {sim::WeightMode::CellAverage, sim::WeightMode::VarianceExact}) {
    auto m = sim::rough_heston(0.2, 0.3, 0.04, 0.3, -0.7, 0.04);
    m.mode = mode;
    const auto e = sim::simulate_sve(m, g, 5, 2, retained());
    for (std::size_t p = 0; p < 5; ++p)
      for (double t : {0.0, 0.25, 0.5})
        for (double s : {1.0 / 64, 0.125, 0.25}) {
          const auto r = flow_check(e, p, t, s, x);
          CHECK(r.checked == 2 * x.size());
          CHECK(r.residual < 1e-12 * r.scale);
        }
  }
  // no noise
  const auto det = sim::volterra_cir(KernelSpec::gamma(0.3, 1.0), 0.3, 0.3, -0.7, 0.0);
  const auto ed = sim::simulate_sve(det, g, 1, 2, retained());
  CHECK(flow_check(ed, 0, 0.25, 0.5, x).residual < 1e-12);
  CHECK(code_of([&] { flow_check(ed, 0, 0.75, 0.5, x); }) == ErrorCode::InvalidParams);
  CHECK(code_of([&] { lift_state(sim::simulate_sve(det, g, 1, 2), 0, 0.25, x); }) == ErrorCode::MissingHistory);
}

TEST_CASE("rank: exponential kernel collapses to one direction") {
  const auto g = TimeGrid::make(1.0 / 128, 0.5);
  const auto m = sim::exponential_control();
  const auto ch = functional_channels(m.kernel_b[0], orders({0.05, 0.1, 0.15}), g);
  const auto e = sim::simulate_with_perturbation(m, g, 1000, 4, ch);
  RankOptions o;
  o.n_boot = 200;
  const auto r = covariance_rank(e, 0.5, o);
  CHECK(r.rank == 1);
  CHECK(r.eigenvalues[0] == doctest::Approx(3.0).epsilon(1e-9));
  CHECK(r.ci_lo[1] <= o.zero_tol);
  CHECK(r.label == "functional-restricted covariance");
}

TEST_CASE("rank: fractional kernel keeps every direction, rescaling does not matter") {
  const auto g = TimeGrid::make(1.0 / 128, 0.5);
  const auto m = sim::volterra_cir(KernelSpec::fractional(0.3), 0.3, 0.3, -0.7, 0.3);
  auto ch = functional_channels(m.kernel_b[0], orders({0.05, 0.1, 0.15, 0.2}), g);
  const auto e = sim::simulate_with_perturbation(m, g, 1000, 4, ch);
  RankOptions o;
  o.n_boot = 200;
  const auto r = covariance_rank(e, 0.5, o);
  CHECK(r.rank == 4);
  // scaling one functional by 1e3
  auto t = *ch[2].kb.table;
  for (auto& v : t.v) v *= 1e3;
  ch[2] = sim::Perturbation::same(KernelSpec::tabulated(t.t, t.v));
  const auto e2 = sim::simulate_with_perturbation(m, g, 1000, 4, ch);
  const auto r2 = covariance_rank(e2, 0.5, o);
  CHECK(r2.rank == 4);
  CHECK(r2.variances[2] == doctest::Approx(1e6 * r.variances[2]).epsilon(1e-9));
}

TEST_CASE("rank: deterministic model and too few paths") {
  const auto g = TimeGrid::make(1.0 / 64, 0.5);
  const auto m = sim::volterra_cir(KernelSpec::fractional(0.3), 0.3, 0.3, -0.7, 0.0);
  const auto ch = functional_channels(m.kernel_b[0], orders({0.05, 0.1}), g);
  const auto e = sim::simulate_with_perturbation(m, g, 40, 4, ch);
  RankOptions o;
  o.n_boot = 50;
  const auto r = covariance_rank(e, 0.5, o);
  CHECK(r.rank == 0);
  const auto small = sim::simulate_with_perturbation(m, g, 19, 4, ch);
  CHECK(code_of([&] { covariance_rank(small, 0.5, o); }) == ErrorCode::TooFewPaths);
}

}  // TEST_SUITE
