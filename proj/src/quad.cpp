#include "volterra/quad.hpp"

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>
#include <numbers>
#include <sstream>

#include "volterra/error.hpp"

namespace volterra::quad {

namespace bq = boost::math::quadrature;

namespace {

void check(const Result& r, const Options& o, const char* where) {
  if (!std::isfinite(r.value)) fail(ErrorCode::QuadratureFailure, std::string(where) + ": non-finite value");
  if (r.error > o.abs_tol && r.error > o.fail_tol * r.l1) {
    std::ostringstream os;
    os << where << ": error estimate " << r.error << " vs L1 " << r.l1;
    fail(ErrorCode::QuadratureFailure, os.str());
  }
}

}  // namespace

Result gk(const Fn& f, double a, double b, const Options& o) {
  Result r;
  if (a == b) return r;
  // boost's error estimate is unreliable on very short intervals, so always work on [0, 1]
  const double w = b - a;
  auto g = [&](double x) { return f(a + w * x) * w; };
  r.value = bq::gauss_kronrod<double, 21>::integrate(g, 0.0, 1.0, o.max_depth, o.rel_tol, &r.error, &r.l1);
  r.l1 = std::abs(r.l1);
  return r;
}

double integrate(const Fn& f, double a, double b, const Options& o) {
  auto r = gk(f, a, b, o);
  check(r, o, "gauss_kronrod");
  return r.value;
}

Result head(const Fn& f, double len, double rho, const Options& o) {
  if (rho <= -1.0) fail(ErrorCode::DivergentIntegral, "head index <= -1");
  if (len <= 0.0) return {};
  if (rho == 0.0) return gk(f, 0.0, len, o);
  // u = len s^q with q = 2/(1+rho): the integrand becomes ~ s, which also tames log factors
  const double q = 2.0 / (1.0 + rho);
  auto g = [&](double s) {
    if (s <= 0.0) return 0.0;
    const double sq = std::pow(s, q);
    return f(len * sq) * len * q * sq / s;
  };
  return gk(g, 0.0, 1.0, o);
}

double integrate_head(const Fn& f, double len, double rho, const Options& o) {
  auto r = head(f, len, rho, o);
  check(r, o, "power head");
  return r.value;
}

double integrate_graded(const Fn& f, double len, double rho, const Options& o, double first) {
  if (len <= 0.0) return 0.0;
  double d = first > 0.0 ? std::min(first, len) : len / 1024.0;
  double s = integrate_head(f, d, rho, o);
  double a = d;
  while (a < len) {
    double b = std::min(len, 4.0 * a);
    s += integrate(f, a, b, o);
    a = b;
  }
  return s;
}

double integrate_to_inf(const Fn& f, double a, const Options& o) {
  bq::exp_sinh<double> es;
  double err = 0.0, l1 = 0.0;
  auto g = [&](double u) { return f(a + u); };
  double v = es.integrate(g, o.rel_tol, &err, &l1);
  Result r{v, err, l1};
  check(r, o, "exp_sinh");
  return v;
}

void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w) {
  x.assign(n, 0.0);
  w.assign(n, 0.0);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = 0.0;
      for (int k = 1; k <= n; ++k) {
        double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p2) / k;
      }
      dp = n * (z * p0 - p1) / (z * z - 1.0);
      double dz = p0 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-16) break;
    }
    x[i] = -z;
    x[n - 1 - i] = z;
    w[i] = w[n - 1 - i] = 2.0 / ((1.0 - z * z) * dp * dp);
  }
}

}  // namespace volterra::quad
