#include "volterra/perturb.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include "volterra/error.hpp"
#include "volterra/linalg.hpp"
#include "volterra/parallel.hpp"
#include "volterra/quad.hpp"

namespace volterra::perturb {

namespace {

constexpr double kLogEps16 = 36.841361487904734;  // -log(1e-16)

double z_max_of(const PerturbationSpec& s) { return s.tail_cut ? *s.tail_cut : kLogEps16 / s.lambda_tilt; }

std::vector<double> grid_nodes(const resolvents::TimeGrid& g) {
  std::vector<double> t(g.n_steps);
  for (std::size_t i = 1; i <= g.n_steps; ++i) t[i - 1] = g.node(i);
  return t;
}

// int_{z0}^{zmax} f over x4 geometric panels
double panels(const quad::Fn& f, double z0, double zmax, const quad::Options& o) {
  double s = 0.0, a = z0;
  while (a < zmax) {
    const double b = std::min(zmax, 4.0 * a);
    s += quad::integrate(f, a, b, o);
    a = b;
  }
  return s;
}

void check_nodes(const std::vector<double>& nodes) {
  if (nodes.empty()) fail(ErrorCode::InvalidParams, "no evaluation nodes");
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (!(nodes[i] > 0.0) || !std::isfinite(nodes[i])) fail(ErrorCode::InvalidParams, "nodes must be positive");
    if (i > 0 && !(nodes[i] > nodes[i - 1])) fail(ErrorCode::InvalidParams, "nodes must increase");
  }
}

void check_marchaud(const KernelSpec& k, const PerturbationSpec& s) {
  kernels::validate(k);
  s.validate();
  const double beta = kernels::growth_index(k);
  if (!(s.alpha > beta && s.alpha < 1.0))
    fail(ErrorCode::InvalidOrder, "Marchaud order must lie in (" + std::to_string(beta) + ", 1)");
  // near 0 the result behaves like t^(rho - alpha); it has to stay square integrable
  const double rho = kernels::leading_index(k);
  if (rho < 0.0 && rho - s.alpha <= -0.5)
    fail(ErrorCode::DivergentIntegral, "perturbed kernel is not square integrable at 0 (rho - alpha <= -1/2)");
}

double check_integral(const KernelSpec& k, const PerturbationSpec& s) {
  kernels::validate(k);
  s.validate();
  if (!(s.alpha > 0.0 && s.alpha < 1.0)) fail(ErrorCode::InvalidOrder, "integration order must lie in (0, 1)");
  auto kinf = kernels::value_at_infinity(k);
  if (!kinf) fail(ErrorCode::NoLimitAtInfinity, "kernel has no limit at infinity");
  return *kinf;
}

template <class F>
PerturbResult tabulate(const std::vector<double>& nodes, std::size_t workers, F value) {
  check_nodes(nodes);
  PerturbResult r;
  r.t = nodes;
  r.value.assign(nodes.size(), 0.0);
  std::vector<double> tails(nodes.size(), 0.0);
  parallel_for(nodes.size(), workers, [&](std::size_t i) {
    const PointValue p = value(nodes[i]);
    r.value[i] = p.value;
    tails[i] = p.tail_bound;
  });
  r.tail_bound = *std::max_element(tails.begin(), tails.end());
  r.kernel = KernelSpec::tabulated(r.t, r.value);
  return r;
}

}  // namespace

const char* to_string(Kind k) {
  switch (k) {
    case Kind::Shift: return "Shift";
    case Kind::Constant: return "Constant";
    case Kind::Derivative: return "Derivative";
    case Kind::MarchaudDerivative: return "MarchaudDerivative";
    case Kind::FractionalIntegral: return "FractionalIntegral";
  }
  return "?";
}

Kind kind_from_string(const std::string& s) {
  for (auto k : {Kind::Shift, Kind::Constant, Kind::Derivative, Kind::MarchaudDerivative, Kind::FractionalIntegral})
    if (s == to_string(k)) return k;
  fail(ErrorCode::InvalidParams, "unknown perturbation kind '" + s + "'");
}

void PerturbationSpec::validate() const {
  if (!std::isfinite(alpha)) fail(ErrorCode::InvalidParams, "alpha must be finite");
  if (!(lambda_tilt > 0.0) || !std::isfinite(lambda_tilt))
    fail(ErrorCode::InvalidParams, "lambda_tilt must be positive (untilted measures are not implemented)");
  if (!(shift_z >= 0.0) || !std::isfinite(shift_z)) fail(ErrorCode::InvalidParams, "shift_z must be >= 0");
  if (tail_cut && !(*tail_cut > 0.0)) fail(ErrorCode::InvalidParams, "tail_cut must be positive");
}

PointValue marchaud_value(const KernelSpec& k, const PerturbationSpec& s, double t) {
  if (!(t > 0.0)) fail(ErrorCode::InvalidParams, "Marchaud derivative needs t > 0");
  const double a = s.alpha, lam = s.lambda_tilt, zmax = z_max_of(s);
  auto f = [&](double z) {
    if (z <= 0.0) return 0.0;
    return kernels::increment(k, t, z) * std::exp(-lam * z - (1.0 + a) * std::log(z));
  };
  quad::Options o;
  const double z0 = std::min(t, zmax);
  PointValue r;
  try {
    // the increment is O(z) so the integrand is O(z^-alpha) at 0
    r.value = quad::integrate_head(f, z0, -a, o);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::QuadratureFailure)
      fail(ErrorCode::DivergentIntegral, std::string("near-zero Marchaud integral: ") + e.what());
    throw;
  }
  r.value += panels(f, z0, zmax, o);
  // |k(t+z) - k(t)| <= |k(t)| + |k(t+Z)| (1+z)^beta beyond Z, and
  // int_Z^inf e^(-lam z) z^(-1-a) (1+z)^beta dz <= (1+Z)^beta e^(-lam Z) Z^(-1-a) / (lam - beta/(1+Z))
  const double beta = kernels::growth_index(k);
  const double denom = std::max(lam - beta / (1.0 + zmax), 0.5 * lam);
  r.tail_bound = (std::abs(kernels::eval(k, t)) + std::abs(kernels::eval(k, t + zmax))) * std::pow(1.0 + zmax, beta) *
                 std::exp(-lam * zmax) * std::pow(zmax, -1.0 - a) / denom;
  return r;
}

PointValue fractional_integral_value(const KernelSpec& k, const PerturbationSpec& s, double t) {
  if (!(t > 0.0)) fail(ErrorCode::InvalidParams, "fractional integral needs t > 0");
  const double kinf = check_integral(k, s);
  const double a = s.alpha, lam = s.lambda_tilt, zmax = z_max_of(s);
  const double lg = std::lgamma(a);
  auto f = [&](double z) {
    if (z <= 0.0) return 0.0;
    return (kernels::eval(k, t + z) - kinf) * std::exp(-lam * z + (a - 1.0) * std::log(z) - lg);
  };
  quad::Options o;
  const double z0 = std::min(t, zmax);
  PointValue r;
  r.value = quad::integrate_head(f, z0, a - 1.0, o) + panels(f, z0, zmax, o);
  const double m = std::max(std::abs(kernels::eval(k, t) - kinf), std::abs(kernels::eval(k, t + zmax) - kinf));
  r.tail_bound = m * std::exp(-lam * zmax + (a - 1.0) * std::log(zmax) - lg) / lam;
  return r;
}

PerturbResult marchaud_on_nodes(const KernelSpec& k, const PerturbationSpec& spec, const std::vector<double>& nodes,
                                std::size_t workers) {
  check_marchaud(k, spec);
  auto r = tabulate(nodes, workers, [&](double t) { return marchaud_value(k, spec, t); });
  r.z_max = z_max_of(spec);
  r.ratio_trace.resize(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const double base = std::pow(nodes[i], -spec.alpha) * kernels::eval(k, nodes[i]);
    r.ratio_trace[i] = base != 0.0 ? r.value[i] / base : std::numeric_limits<double>::quiet_NaN();
  }
  const double rho = kernels::leading_index(k);
  if (std::max(0.0, rho) < spec.alpha) r.c_alpha = C_alpha(rho, spec.alpha);
  return r;
}

PerturbResult marchaud_forward(const KernelSpec& k, const PerturbationSpec& spec, const resolvents::TimeGrid& grid,
                               std::size_t workers) {
  return marchaud_on_nodes(k, spec, grid_nodes(grid), workers);
}

PerturbResult fractional_integral_on_nodes(const KernelSpec& k, const PerturbationSpec& spec,
                                           const std::vector<double>& nodes, std::size_t workers) {
  check_integral(k, spec);
  auto r = tabulate(nodes, workers, [&](double t) { return fractional_integral_value(k, spec, t); });
  r.z_max = z_max_of(spec);
  return r;
}

PerturbResult fractional_integral_perturb(const KernelSpec& k, const PerturbationSpec& spec,
                                          const resolvents::TimeGrid& grid, std::size_t workers) {
  return fractional_integral_on_nodes(k, spec, grid_nodes(grid), workers);
}

double C_alpha(double rho, double alpha, double split) {
  if (!std::isfinite(rho) || !(std::max(0.0, rho) < alpha && alpha < 1.0))
    fail(ErrorCode::OutOfRegion, "C(alpha) needs max{0, rho} < alpha < 1");
  if (!(split > 0.0)) fail(ErrorCode::InvalidParams, "split point must be positive");
  if (rho == 0.0) return 0.0;
  quad::Options o;
  auto near = [&](double u) {
    if (u <= 0.0) return 0.0;
    return std::expm1(rho * std::log1p(u)) * std::pow(u, -1.0 - alpha);
  };
  const double head = quad::integrate_head(near, split, -alpha, o);
  // beyond the split: the -1 part is exact, the rest decays like e^((rho-alpha)s) in u = split e^s
  const double lsplit = std::log(split);
  auto far = [&](double s) {
    const double lu = lsplit + s;  // log u, kept in logs so large s cannot overflow
    return std::exp(rho * (lu + std::log1p(std::exp(-lu))) - alpha * lu);
  };
  const double tail = quad::integrate_to_inf(far, 0.0, o) - std::pow(split, -alpha) / alpha;
  return head + tail;
}

KernelSpec shift_perturb(const KernelSpec& k, double z) {
  if (!(z >= 0.0) || !std::isfinite(z)) fail(ErrorCode::InvalidParams, "shift must be >= 0");
  KernelSpec out = k;
  out.shift += z;
  return out;
}

KernelSpec apply(const KernelSpec& k, const PerturbationSpec& spec, const resolvents::TimeGrid& grid) {
  switch (spec.kind) {
    case Kind::Shift: return shift_perturb(k, spec.shift_z);
    case Kind::Constant: {
      auto kinf = kernels::value_at_infinity(k);
      if (!kinf) fail(ErrorCode::NoLimitAtInfinity, "kernel has no limit at infinity");
      return KernelSpec::constant(*kinf);
    }
    case Kind::Derivative: {
      auto t = grid_nodes(grid);
      std::vector<double> v(t.size());
      for (std::size_t i = 0; i < t.size(); ++i) v[i] = kernels::derivative(k, t[i]);
      return KernelSpec::tabulated(std::move(t), std::move(v));
    }
    case Kind::MarchaudDerivative: return marchaud_forward(k, spec, grid).kernel;
    case Kind::FractionalIntegral: return fractional_integral_perturb(k, spec, grid).kernel;
  }
  return k;
}

double exp_span_project(const KernelSpec& k, const KernelSpec& candidate, double T,
                        const resolvents::TimeGrid& grid) {
  if (!(T > 0.0)) fail(ErrorCode::InvalidParams, "T must be positive");
  std::vector<double> rates;
  if (k.family == kernels::Family::ExpSum) {
    for (const auto& e : k.exp_terms) rates.push_back(e.rate);
  } else if (k.family == kernels::Family::BernsteinQuadrature) {
    for (const auto& e : k.bernstein_nodes) rates.push_back(e.rate);
  } else {
    fail(ErrorCode::InvalidParams, "exp_span_project needs an exponential-sum kernel");
  }
  const std::size_t m = rates.size();
  if (m == 0) fail(ErrorCode::InvalidParams, "empty exponential sum");

  linalg::Matrix A(m);
  std::vector<double> b(m);
  std::function<double(const std::vector<double>&)> residual_sq;
  double norm_sq = 0.0;

  if (candidate.family == kernels::Family::TableDefined) {
    // trapezoid sums on the grid nodes in (0, T]: an interpolated table is not a better
    // description of the candidate than its node values
    std::vector<double> t, w;
    for (std::size_t i = 1; i <= grid.n_steps && grid.node(i) <= T * (1 + 1e-12); ++i) t.push_back(grid.node(i));
    if (t.size() < 2) fail(ErrorCode::InvalidParams, "grid too coarse for T");
    w.assign(t.size(), grid.dt);
    w.front() = w.back() = 0.5 * grid.dt;
    std::vector<double> c(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) c[i] = kernels::eval(candidate, t[i]);
    for (std::size_t a = 0; a < m; ++a) {
      for (std::size_t q = a; q < m; ++q) {
        double s = 0.0;
        for (std::size_t i = 0; i < t.size(); ++i) s += w[i] * std::exp(-(rates[a] + rates[q]) * t[i]);
        A(a, q) = A(q, a) = s;
      }
      double s = 0.0;
      for (std::size_t i = 0; i < t.size(); ++i) s += w[i] * c[i] * std::exp(-rates[a] * t[i]);
      b[a] = s;
    }
    for (std::size_t i = 0; i < t.size(); ++i) norm_sq += w[i] * c[i] * c[i];
    residual_sq = [t, w, c, rates](const std::vector<double>& x) {
      double s = 0.0;
      for (std::size_t i = 0; i < t.size(); ++i) {
        double p = 0.0;
        for (std::size_t j = 0; j < rates.size(); ++j) p += x[j] * std::exp(-rates[j] * t[i]);
        s += w[i] * (c[i] - p) * (c[i] - p);
      }
      return s;
    };
  } else {
    for (std::size_t a = 0; a < m; ++a) {
      for (std::size_t q = a; q < m; ++q) {
        const double r = rates[a] + rates[q];
        A(a, q) = A(q, a) = r == 0.0 ? T : -std::expm1(-r * T) / r;
      }
      b[a] = kernels::integral_product(candidate, KernelSpec::exponential(rates[a]), 0.0, T);
    }
    norm_sq = kernels::integral_sq(candidate, 0.0, T);
    const double rho = kernels::is_singular(candidate) ? 2.0 * kernels::leading_index(candidate) : 0.0;
    residual_sq = [&candidate, rates, T, rho, norm_sq](const std::vector<double>& x) {
      auto f = [&](double t) {
        double p = 0.0;
        for (std::size_t j = 0; j < rates.size(); ++j) p += x[j] * std::exp(-rates[j] * t);
        const double d = kernels::eval(candidate, t) - p;
        return d * d;
      };
      quad::Options o;
      o.abs_tol = 1e-24 * norm_sq;
      return quad::integrate_graded(f, T, std::min(rho, 0.0), o);
    };
  }

  const auto eig = linalg::sym_eigen(A);
  if (!(eig.values.front() > 0.0) || eig.values.back() / eig.values.front() > 1e12)
    fail(ErrorCode::IllConditioned, "exponential Gram matrix condition exceeds 1e12 (rates nearly coincide)");
  std::vector<double> x;
  if (!linalg::cholesky_solve(A, b, x)) fail(ErrorCode::IllConditioned, "exponential Gram matrix not positive definite");
  if (norm_sq <= 0.0) return 0.0;
  return std::sqrt(std::max(0.0, residual_sq(x)) / norm_sq);
}

}  // namespace volterra::perturb
