#include <doctest.h>

#include <cmath>

#include "volterra/error.hpp"
#include "volterra/resolvents.hpp"

using namespace volterra;
using namespace volterra::resolvents;
using volterra::kernels::KernelSpec;

TEST_SUITE("resolvents") {

TEST_CASE("grid") {
  auto g = TimeGrid::make(0.25, 2.0);
  CHECK(g.n_steps == 8);
  CHECK(g.index_of(1.5) == 6);
  CHECK_THROWS_AS(g.index_of(0.3), Error);
  CHECK_THROWS_AS(TimeGrid::make(0.3, 1.0), Error);
}

TEST_CASE("constant kernel: atom 1, L0 = 0") {
  auto tb = resolvent_first_kind(KernelSpec::constant(1.0), TimeGrid::make(0.01, 1.0));
  CHECK(tb.atom == 1.0);
  for (std::size_t i = 1; i <= 100; ++i) CHECK(std::abs(tb.L0[i]) < 1e-14);
  CHECK(tb.residual < 1e-14);
}

TEST_CASE("exponential kernel: atom 1, L0 = lambda") {
  auto tb = resolvent_first_kind(KernelSpec::exponential(2.0), TimeGrid::make(1.0 / 256, 1.0));
  CHECK(tb.atom == 1.0);
  for (std::size_t i = 1; i <= 256; ++i) CHECK(tb.L0[i] == doctest::Approx(2.0).epsilon(1e-11));
  CHECK(tb.residual < 1e-12);
}

TEST_CASE("fractional kernel: L0 close to the closed-form resolvent") {
  const double H = 0.3, a = H + 0.5;
  double prev = 0.0;
  for (std::size_t n : {1024u, 2048u}) {
    auto tb = resolvent_first_kind(KernelSpec::fractional(H), TimeGrid::make(1.0 / n, 1.0));
    CHECK(tb.atom == 0.0);
    double err = 0.0;
    for (std::size_t i = n / 4; i <= n; ++i) {
      const double t1 = tb.grid.node(i), t0 = tb.grid.node(i - 1);
      const double exact = (std::pow(t1, 1 - a) - std::pow(t0, 1 - a)) / (tb.grid.dt * std::tgamma(2 - a));
      err = std::max(err, std::abs(tb.L0[i] / exact - 1.0));
    }
    CHECK(err < 2e-3);
    if (prev > 0.0) CHECK(err < 0.6 * prev);
    prev = err;
    // nonnegative and nonincreasing
    for (std::size_t i = 2; i <= n; ++i) {
      CHECK(tb.L0[i] >= 0.0);
      CHECK(tb.L0[i] <= tb.L0[i - 1]);
    }
  }
}

TEST_CASE("fractional residual structure") {
  // the pure power problem is scale invariant: the residual at a fixed index does not
  // depend on dt, while away from 0 it decays when dt is halved
  auto a = resolvent_first_kind(KernelSpec::fractional(0.3), TimeGrid::make(1.0 / 512, 1.0));
  auto b = resolvent_first_kind(KernelSpec::fractional(0.3), TimeGrid::make(1.0 / 1024, 1.0));
  auto ra = midpoint_residuals(a), rb = midpoint_residuals(b);
  CHECK(ra[1] == doctest::Approx(rb[1]).epsilon(1e-9));
  CHECK(a.residual_argmax == 1);
  CHECK(b.residual_tail < a.residual_tail / 1.5);
}

TEST_CASE("E_K") {
  SUBCASE("beta = 0 gives K") {
    auto k = KernelSpec::fractional(0.3);
    auto tb = resolvent_EK(k, 0.0, TimeGrid::make(0.01, 1.0));
    for (std::size_t i = 1; i <= 100; ++i) CHECK(tb.EK[i] == doctest::Approx(kernels::eval(k, tb.grid.node(i))).epsilon(1e-14));
  }
  SUBCASE("constant kernel, beta 0.5") {
    auto tb = resolvent_EK(KernelSpec::constant(1.0), 0.5, TimeGrid::make(1.0 / 512, 1.0));
    for (std::size_t i = 1; i <= 512; ++i) CHECK(tb.EK[i] == doctest::Approx(std::exp(0.5 * tb.grid.node(i))).epsilon(1e-6));
  }
  SUBCASE("exponential kernel, beta 0.3") {
    auto tb = resolvent_EK(KernelSpec::exponential(1.0), 0.3, TimeGrid::make(1.0 / 512, 1.0));
    for (std::size_t i = 1; i <= 512; ++i) CHECK(tb.EK[i] == doctest::Approx(std::exp(-0.7 * tb.grid.node(i))).epsilon(1e-6));
  }
  SUBCASE("fractional kernel, beta -1 gives the Mittag-Leffler kernel") {
    auto tb = resolvent_EK(KernelSpec::fractional(0.3), -1.0, TimeGrid::make(1.0 / 2048, 1.0));
    auto ml = KernelSpec::mittag_leffler(0.3, 1.0);
    for (std::size_t i : {256u, 1024u, 2048u})
      CHECK(tb.EK[i] == doctest::Approx(kernels::eval(ml, tb.grid.node(i))).epsilon(2e-3));
  }
}

TEST_CASE("Pi_z") {
  SUBCASE("constant kernel: Pi = 0") {
    auto tb = build_tables(KernelSpec::constant(1.0), 0.0, TimeGrid::make(0.01, 2.0));
    auto pi = pi_z(tb, 0.5);
    for (double v : pi.Pi) CHECK(std::abs(v) < 1e-14);
    CHECK(pi.degenerate);
  }
  SUBCASE("exponential kernel: dPi = 0, Pi constant") {
    auto tb = build_tables(KernelSpec::exponential(2.0), -0.5, TimeGrid::make(1.0 / 256, 2.0));
    auto pi = pi_z(tb, 0.5);
    CHECK(pi.degenerate);
    for (std::size_t i = 1; i <= pi.n_out; ++i) CHECK(std::abs(pi.dPi[i]) < 1e-12);
    for (double v : pi.Pi) CHECK(v == doctest::Approx(pi.Pi[0]).epsilon(1e-11));
  }
  SUBCASE("fractional kernel, beta 0, z = 1/4") {
    auto tb = build_tables(KernelSpec::fractional(0.3), 0.0, TimeGrid::make(1.0 / 4096, 1.25));
    auto pi = pi_z(tb, 0.25);
    CHECK_FALSE(pi.degenerate);
    CHECK(pi.Pi[0] == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(pi.Pi[1024] == doctest::Approx(-0.16899217214025108121).epsilon(2e-3));
    CHECK(pi.Pi[2048] == doctest::Approx(-0.11152673125470740471).epsilon(2e-3));
    CHECK(pi.Pi[3072] == doctest::Approx(-0.085209350335153864175).epsilon(2e-3));
    for (std::size_t i = 1; i <= pi.n_out; ++i) {
      CHECK(pi.Pi[i] <= 0.0);
      CHECK(pi.dPi[i] >= 0.0);
      CHECK(pi.dPi[i] == doctest::Approx(pi.Pi[i] - pi.Pi[i - 1]).epsilon(1e-9));
    }
    CHECK(pi.route_discrepancy < 1e-12);
  }
}

TEST_CASE("K_z") {
  SUBCASE("beta 0, singular kernel: K_z = K(. + z)") {
    auto k = KernelSpec::fractional(0.3);
    auto tb = build_tables(k, 0.0, TimeGrid::make(1.0 / 1024, 1.25));
    auto pi = pi_z(tb, 0.25);
    auto rep = kz_kernel(tb, pi);
    CHECK(rep.ok);
    CHECK(rep.f == 0.0);
    for (std::size_t i = 1; i <= pi.n_out; ++i)
      CHECK(std::abs(pi.Kz[i] / kernels::eval(k, tb.grid.node(i) + 0.25) - 1.0) < 5e-3);
  }
  SUBCASE("constant kernel: K_z = 0") {
    auto tb = build_tables(KernelSpec::constant(1.0), 0.0, TimeGrid::make(0.01, 1.0));
    auto pi = pi_z(tb, 0.25);
    kz_kernel(tb, pi);
    for (std::size_t i = 1; i <= pi.n_out; ++i) CHECK(std::abs(pi.Kz[i]) < 1e-14);
  }
  SUBCASE("beta -1: sandwich") {
    auto tb = build_tables(KernelSpec::fractional(0.3), -1.0, TimeGrid::make(1.0 / 1024, 1.25));
    auto pi = pi_z(tb, 0.25);
    auto rep = kz_kernel(tb, pi, 1e-2, false);
    CHECK(rep.f > 0.0);
    CHECK(rep.ok);
    CHECK(rep.checked == pi.n_out);
  }
}

TEST_CASE("conditional expectation coefficients") {
  SUBCASE("constant kernel") {
    auto tb = build_tables(KernelSpec::constant(1.0), 0.0, TimeGrid::make(0.1, 1.0));
    auto pi = pi_z(tb, 0.6);
    auto c = cond_exp_coeffs(tb, pi, 0.4, 1.0, 0.3, 0.7);
    CHECK(c.c0 == doctest::Approx(0.3 * 0.6));
    CHECK(std::abs(c.c1_x0) < 1e-14);
    CHECK(c.c2 == doctest::Approx(1.0));
    std::vector<double> x{0.7, 0.1, 0.4, -0.2, 0.9};
    CHECK(cond_exp_apply(c, x) == doctest::Approx(0.18 + 0.9));
  }
  SUBCASE("exponential kernel reproduces the classical mean") {
    const double lam = 1.5, b = 0.3, x0 = 0.2, z = 0.5, xt = 0.45;
    auto tb = build_tables(KernelSpec::exponential(lam), 0.0, TimeGrid::make(1.0 / 512, 1.0));
    auto pi = pi_z(tb, z);
    auto c = cond_exp_coeffs(tb, pi, 0.5, 1.0, b, x0);
    std::vector<double> x(257, 0.1);
    x[256] = xt;
    const double ez = std::exp(-lam * z);
    const double classical = x0 + (xt - x0) * ez + b * (1 - ez) / lam;
    CHECK(cond_exp_apply(c, x) == doctest::Approx(classical).epsilon(1e-9));
  }
  SUBCASE("grid mismatch") {
    auto tb = build_tables(KernelSpec::constant(1.0), 0.0, TimeGrid::make(0.1, 1.0));
    auto pi = pi_z(tb, 0.5);
    CHECK_THROWS_AS(cond_exp_coeffs(tb, pi, 0.45, 0.95, 0.1, 0.1), Error);
  }
}

}
