#include <doctest.h>

#include <cmath>
#include <random>

#include "volterra/error.hpp"
#include "volterra/kernels.hpp"
#include "volterra/quad.hpp"

using namespace volterra;
using namespace volterra::kernels;

namespace {

std::vector<double> log_h(double lo, double hi, int n) {
  std::vector<double> h;
  for (int i = 0; i < n; ++i) h.push_back(hi * std::pow(lo / hi, double(i) / (n - 1)));
  return h;
}

}  // namespace

TEST_SUITE("kernels") {

TEST_CASE("closed form evaluations") {
  CHECK(eval(KernelSpec::fractional(0.5), 0.7) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(eval(KernelSpec::fractional(0.25), 1.0) == doctest::Approx(0.81604893909826298108).epsilon(1e-13));
  CHECK(eval(KernelSpec::exponential(0.5, 2.0), 1.0) == doctest::Approx(2.0 * std::exp(-0.5)).epsilon(1e-15));
  CHECK(eval(KernelSpec::constant(3.0), 0.0) == 3.0);
}

TEST_CASE("singular evaluation and parameter errors") {
  auto k = KernelSpec::fractional(0.3);
  CHECK(is_singular(k));
  CHECK_THROWS_AS(eval(k, 0.0), Error);
  CHECK_THROWS_AS(KernelSpec::fractional(1.5), Error);
  CHECK_THROWS_AS(KernelSpec::fractional(0.0), Error);
  CHECK_THROWS_AS(KernelSpec::parametric(0.0, 0.0, 0.0, 0.0, 0.0, 0.0), Error);
  CHECK_NOTHROW(KernelSpec::parametric(-0.2, 0.0, 0.1, 0.0, 0.0, 0.0));
  try {
    eval(k, 0.0);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EvalAtSingularity);
  }
}

TEST_CASE("Mittag-Leffler function against high precision series") {
  struct Row { double a, x, v; };
  const Row rows[] = {
      {0.6, 0.5, 0.3192230738267606117},  {0.6, 3, 0.031693926561557026534},
      {0.6, 5, 0.01173276740608441217},   {0.6, 20, 0.00069976531797853914304},
      {0.6, 100, 0.000027252369948779680711},
      {0.8, 0.5, 0.45793149810111440571}, {0.8, 3, 0.039915664251597086191},
      {0.8, 5, 0.011828729724994501911},  {0.8, 20, 0.00049582520959208668872},
      {0.8, 100, 0.000017867951949876070427},
      {1.2, 0.5, 0.74734575805529928187}, {1.2, 3, 0.076960994776386077163},
      {1.2, 5, -0.0072653767137860794397}, {1.2, 20, -0.00063554666422443314226},
      {1.2, 100, -0.000021559084843562520657},
      {1.4, 0.5, 0.85910211367840952584}, {1.4, 3, 0.15325620673286599183},
      {1.4, 5, -0.013070748411887328636}, {1.4, 20, 0.0016138951463827683674},
      {1.4, 100, -0.000038404444082962777162},
  };
  for (auto r : rows) {
    INFO("a = " << r.a << " x = " << r.x);
    CHECK(std::abs(mittag_leffler_fn(r.a, r.a, -r.x) - r.v) < 1e-8 * std::abs(r.v) + 1e-14);
  }
  // H = 1/2 collapses to an exponential, lambda = 0 to the fractional kernel
  CHECK(eval(KernelSpec::mittag_leffler(0.5, 2.0), 0.3) == doctest::Approx(std::exp(-0.6)));
  CHECK(eval(KernelSpec::mittag_leffler(0.3, 0.0), 0.3) ==
        doctest::Approx(eval(KernelSpec::fractional(0.3), 0.3)).epsilon(1e-13));
}

TEST_CASE("cell integrals") {
  auto g = KernelSpec::gamma(0.3, 1.0);
  CHECK(integral(g, 0.0, 1.0) == doctest::Approx(0.83658136939022837055).epsilon(1e-10));
  CHECK(integral_sq(g, 0.0, 1.0) == doctest::Approx(0.92357597927589678786).epsilon(1e-10));
  auto p = KernelSpec::parametric(0.3, 0.5, 0.0, 0.1, 0.0, -0.5);
  CHECK(integral(p, 0.0, 1.0) == doctest::Approx(1.1024686778770758655).epsilon(1e-9));
  auto f = KernelSpec::fractional(0.3);
  const double a = 0.8;
  CHECK(integral(f, 0.0, 2.0) == doctest::Approx(std::pow(2.0, a) / std::tgamma(a + 1.0)).epsilon(1e-14));
  // additivity
  CHECK(integral(g, 0.0, 0.3) + integral(g, 0.3, 1.0) == doctest::Approx(integral(g, 0.0, 1.0)).epsilon(1e-12));
}

TEST_CASE("table kernels interpolate linearly and integrate exactly") {
  auto k = KernelSpec::tabulated({1.0, 2.0, 4.0}, {1.0, 0.5, 0.25});
  CHECK(eval(k, 2.0) == 0.5);
  CHECK(eval(k, 3.0) == doctest::Approx(0.375));
  CHECK(eval(k, 0.5) == doctest::Approx(2.0));  // power head t^-1 through the first nodes
  CHECK(integral(k, 1.0, 4.0) == doctest::Approx(0.75 + 0.75));
  CHECK(integral_sq(k, 1.0, 2.0) == doctest::Approx((1.0 + 0.5 + 0.25) / 3.0));
  CHECK_THROWS_AS(eval(k, 5.0), Error);
}

TEST_CASE("positivity of completely monotone kernels") {
  std::vector<KernelSpec> ks{KernelSpec::fractional(0.1), KernelSpec::gamma(0.3, 2.0),
                             KernelSpec::mittag_leffler(0.2, 1.5), KernelSpec::exponential(3.0),
                             KernelSpec::parametric(0.2, 1.0, 0.01, 0.0, 0.0, -1.0)};
  for (const auto& k : ks) {
    CHECK(is_completely_monotone(k));
    for (double t : {1e-6, 1e-3, 0.1, 1.0, 10.0}) CHECK(eval(k, t) > 0.0);
  }
}

TEST_CASE("increment scan exponents") {
  auto h = log_h(1e-6, 1e-2, 25);
  CHECK(l2_increment_scan(KernelSpec::constant(1.0), 1.0, h).gamma_K == doctest::Approx(0.5).epsilon(1e-10));
  CHECK(l2_increment_scan(KernelSpec::exponential(1.0), 1.0, h).gamma_K == doctest::Approx(0.5).epsilon(1e-3));
  for (double H : {0.1, 0.3, 0.45}) {
    auto s = l2_increment_scan(KernelSpec::fractional(H), 1.0, h);
    INFO("H = " << H);
    CHECK(std::abs(s.gamma_K - H) < 0.02);
  }
}

TEST_CASE("Bernstein density reproduces the kernel") {
  auto k = KernelSpec::fractional(0.25);
  for (double t : {0.1, 1.0, 3.0}) {
    const double v = quad::integrate_head([&](double x) { return std::exp(-t * x) * *bernstein_density(k, x); }, 1.0, -0.75) +
                     quad::integrate_to_inf([&](double x) { return std::exp(-t * x) * *bernstein_density(k, x); }, 1.0);
    CHECK(v == doctest::Approx(eval(k, t)).epsilon(1e-9));
  }
  auto m = KernelSpec::mittag_leffler(0.2, 2.0);
  for (double t : {0.1, 1.0}) {
    const double v = quad::integrate(
                         [&](double x) { return std::exp(-t * x) * *bernstein_density(m, x); }, 0.0, 1.0) +
                     quad::integrate_to_inf([&](double x) { return std::exp(-t * x) * *bernstein_density(m, x); }, 1.0);
    CHECK(v == doctest::Approx(eval(m, t)).epsilon(1e-8));
  }
}

TEST_CASE("Bernstein quadrature") {
  auto e = KernelSpec::exp_sum({{1.0, 0.5}, {2.0, 3.0}});
  auto fe = bernstein_quadrature(e, 4, 1.0);
  CHECK(fe.max_rel_error == 0.0);
  CHECK(fe.kernel.bernstein_nodes.size() == 2);

  auto f = KernelSpec::fractional(0.1);
  auto fit = bernstein_quadrature(f, 40, 1.0);
  CHECK(fit.max_rel_error < 1e-3);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(std::log(1e-3), 0.0);
  for (int i = 0; i < 100; ++i) {
    const double t = std::exp(u(rng));
    CHECK(std::abs(eval(fit.kernel, t) / eval(f, t) - 1.0) <= fit.max_rel_error * 1.5 + 1e-12);
  }
  auto g = bernstein_quadrature(KernelSpec::gamma(0.3, 1.0), 40, 1.0);
  CHECK(g.max_rel_error < 1e-3);
  CHECK_THROWS_AS(bernstein_quadrature(KernelSpec::fractional(0.7), 10, 1.0), Error);
}

TEST_CASE("matrix kernels") {
  auto m = MatrixKernelSpec::make(2, {{{0, KernelSpec::fractional(0.1)}},
                                      {{1, KernelSpec::fractional(0.3)}},
                                      {{0, KernelSpec::constant(1.0)}}});
  CHECK(m.diagonal_like);
  auto s = m.partition();
  CHECK(s[0] == std::vector<std::size_t>{0, 2});
  CHECK(s[1] == std::vector<std::size_t>{1});
  auto full = MatrixKernelSpec::make(2, {{{0, KernelSpec::constant(1.0)}, {1, KernelSpec::constant(2.0)}}});
  CHECK_FALSE(full.diagonal_like);
}

}
