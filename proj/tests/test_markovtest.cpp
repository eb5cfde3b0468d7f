#include <doctest.h>

#include <cmath>

#include "volterra/error.hpp"
#include "volterra/lift.hpp"
#include "volterra/markovtest.hpp"
#include "volterra/rng.hpp"

using namespace volterra;
using namespace volterra::markovtest;
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

std::vector<double> normals(std::uint64_t seed, std::size_t n) {
  std::vector<double> z(n);
  rng::NormalStream(seed, 0, 0).fill(0, z.begin(), n);
  return z;
}

sim::PathEnsemble with_marchaud(const sim::ModelSpec& m, const TimeGrid& g, std::size_t paths, std::uint64_t seed,
                                double alpha) {
  perturb::PerturbationSpec s;
  s.alpha = alpha;
  return sim::simulate_with_perturbation(m, g, paths, seed, lift::functional_channels(m.kernel_b[0], {s}, g));
}

}  // namespace

TEST_SUITE("markovtest") {

TEST_CASE("variance ratio extremes") {
  const auto x = normals(1, 20000), noise = normals(2, 20000);
  CHECK(variance_ratio(x, noise, 64) == doctest::Approx(1.0).epsilon(0.02));
  // a function of x: R falls as the bins refine
  std::vector<double> f(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) f[i] = std::sin(x[i]) + 0.3 * x[i];
  const double r16 = variance_ratio(x, f, 16), r64 = variance_ratio(x, f, 64), r256 = variance_ratio(x, f, 256);
  CHECK(r64 < r16);
  CHECK(r256 < r64);
  CHECK(r256 < 1e-3);
  // strictly monotone relabelling of x leaves the bins unchanged
  std::vector<double> cube(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) cube[i] = x[i] * x[i] * x[i];
  CHECK(variance_ratio(cube, noise, 64) == variance_ratio(x, noise, 64));
  CHECK(variance_ratio(x, std::vector<double>(x.size(), 2.0), 8) == 0.0);
}

TEST_CASE("atoms are not split across bins") {
  std::vector<double> x = normals(3, 6000), z = normals(4, 6000);
  for (std::size_t i = 0; i < 2000; ++i) x[i] = 0.0;
  // within the atom z is pure noise; a split would not change R much, so check the bin count directly
  const auto g = TimeGrid::make(0.25, 0.5);
  sim::PathEnsemble e;
  e.grid = g;
  e.model = sim::brownian();
  e.n_paths = 6000;
  e.n_pert = 1;
  e.X.assign(6000 * 3, 0.0);
  e.Z.assign(6000 * 3, 0.0);
  for (std::size_t p = 0; p < 6000; ++p) {
    e.X[p * 3 + 2] = x[p] < 0.0 && p >= 2000 ? x[p] - 10.0 : x[p];
    e.Z[p * 3 + 2] = z[p];
  }
  MarkovOptions o;
  o.n_bins = 30;
  o.n_boot = 50;
  const auto r = sigma_measurability_test(e, 0.5, o);
  CHECK(r.n_bins < 30);
  CHECK_FALSE(r.warnings.empty());
  CHECK(r.R == doctest::Approx(1.0).epsilon(0.05));
  o.n_bins = 121;
  CHECK(code_of([&] { sigma_measurability_test(e, 0.5, o); }) == ErrorCode::EmptyBin);
}

TEST_CASE("nondegeneracy mass") {
  const auto g = TimeGrid::make(1.0 / 32, 1.0);
  const auto eb = sim::simulate_sve(sim::brownian(), g, 500, 1);
  const auto m1 = gamma_sigma_mass(eb, 1.0);
  CHECK(m1.mass == 1.0);
  CHECK(m1.ci_lo > 0.99);
  auto zero = sim::brownian();
  zero.diffusion[0].sigma0 = 0.0;
  const auto m0 = gamma_sigma_mass(sim::simulate_sve(zero, g, 500, 1), 1.0);
  CHECK(m0.mass == 0.0);
  CHECK(m0.ci_hi < 0.01);
  const auto cir = sim::volterra_cir(KernelSpec::fractional(0.1), 0.05, 0.02, -0.7, 0.5);
  const auto ec = sim::simulate_sve(cir, g, 4000, 3);
  REQUIRE(ec.truncation_events > 0);
  const auto mc = gamma_sigma_mass(ec, 1.0);
  REQUIRE(mc.paley_zygmund);
  CHECK(mc.mass > 0.0);
  CHECK(mc.mass < 1.0);
  CHECK(mc.ci_hi >= *mc.paley_zygmund - 0.02);
}

TEST_CASE("R verdicts: exponential kernel against a rough kernel") {
  const auto g = TimeGrid::make(1.0 / 64, 0.5);
  MarkovOptions o;
  o.n_boot = 100;
  const auto ee = with_marchaud(sim::exponential_control(), g, 12000, 5, 0.05);
  const auto re = sigma_measurability_test(ee, 0.5, o);
  CHECK(re.R < 0.02);
  CHECK(re.R_refined < re.R);
  CHECK(re.verdict == Verdict::MarkovConsistent);
  const auto ef = with_marchaud(sim::volterra_cir(KernelSpec::fractional(0.1), 0.3, 0.3, -0.7, 0.3), g, 12000, 5, 0.05);
  const auto rf = sigma_measurability_test(ef, 0.5, o);
  CHECK(rf.R_ci_lo > 0.1);
  CHECK(rf.verdict == Verdict::PathDependent);
  CHECK(rf.bin_share.size() == 64);
  double s = 0.0;
  for (double v : rf.bin_share) s += v;
  CHECK(s == doctest::Approx(rf.R).epsilon(1e-12));
  // independent noise in place of Z
  auto noisy = ef;
  const auto z = normals(9, noisy.Z.size());
  noisy.Z = z;
  const auto rn = sigma_measurability_test(noisy, 0.5, o);
  CHECK(rn.R == doctest::Approx(1.0).epsilon(0.03));
  CHECK(rn.verdict == Verdict::PathDependent);
}

TEST_CASE("conditional mean: constant kernel") {
  const auto g = TimeGrid::make(1.0 / 32, 1.0);
  const auto m = sim::volterra_cir(KernelSpec::constant(1.0), 0.3, 0.4, 0.0, 0.3);
  const auto tb = resolvents::build_tables(m.kernel_b[0], 0.0, g);
  const auto pi = resolvents::pi_z(tb, 0.5);
  const auto r = conditional_mean_check(m, tb, pi, 0.5, 1.0, 300, 100, 2);
  CHECK(std::abs(r.z) < 3.0);
  sim::SimOptions so;
  so.retain_history = true;
  const auto e = sim::simulate_sve(m, TimeGrid::make(1.0 / 32, 1.0), 300, 2, so);
  double worst = 0.0;
  for (std::size_t p = 0; p < 300; ++p) worst = std::max(worst, std::abs(r.formula[p] - (e.x(p, 16) + 0.4 * 0.5)));
  CHECK(worst < 1e-12);
}

TEST_CASE("conditional mean: exponential kernel is the classical CIR mean") {
  const double x0 = 0.3, b = 0.3, beta = -0.7;
  const auto g = TimeGrid::make(1.0 / 64, 1.0);
  const auto m = sim::exponential_control(1.0, x0, b, beta, 0.3);
  const auto tb = resolvents::build_tables(m.kernel_b[0], beta, g);
  const auto pi = resolvents::pi_z(tb, 0.5);
  sim::SimOptions so;
  so.retain_history = true;
  const auto e = sim::simulate_sve(m, g, 200, 1, so);
  const double kappa = 1.0 - beta, theta = (b + x0) / kappa;
  const auto c = resolvents::cond_exp_coeffs(tb, pi, 0.5, 1.0, b, x0);
  double worst = 0.0;
  std::vector<double> path(33);
  for (std::size_t p = 0; p < 200; ++p) {
    for (std::size_t j = 0; j <= 32; ++j) path[j] = e.x(p, j);
    const double classical = theta + (e.x(p, 32) - theta) * std::exp(-kappa * 0.5);
    worst = std::max(worst, std::abs(resolvents::cond_exp_apply(c, path) - classical));
  }
  CHECK(worst < 2e-3);
  // 20 seeds at the 3 sigma design level: at least 18 with |z| < 3
  int ok = 0;
  const auto gc = TimeGrid::make(1.0 / 32, 1.0);
  const auto tc = resolvents::build_tables(m.kernel_b[0], beta, gc);
  const auto pc = resolvents::pi_z(tc, 0.5);
  for (std::uint64_t s = 1; s <= 20; ++s)
    if (std::abs(conditional_mean_check(m, tc, pc, 0.5, 1.0, 200, 50, s).z) < 3.0) ++ok;
  CHECK(ok >= 18);
}

TEST_CASE("conditional mean: input checks") {
  const auto g = TimeGrid::make(1.0 / 32, 1.0);
  const auto m = sim::exponential_control();
  const auto tb = resolvents::build_tables(m.kernel_b[0], 0.0, g);
  const auto pi = resolvents::pi_z(tb, 0.5);
  CHECK(code_of([&] { conditional_mean_check(m, tb, pi, 0.5, 1.0, 100, 10, 1); }) == ErrorCode::InvalidParams);
  // T - t must match the z of the Pi table
  CHECK(code_of([&] { conditional_mean_check(sim::gaussian_fractional(0.3), tb, pi, 0.25, 1.0, 100, 10, 1); }) ==
        ErrorCode::GridMismatch);
}

}  // TEST_SUITE
