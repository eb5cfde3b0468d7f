#include "volterra/lift.hpp"

#include <algorithm>
#include <cmath>

#include "volterra/error.hpp"
#include "volterra/linalg.hpp"
#include "volterra/parallel.hpp"
#include "volterra/rng.hpp"

namespace volterra::lift {

std::vector<double> default_x_grid(const resolvents::TimeGrid& grid, std::size_t n) {
  std::vector<double> x{0.0};
  if (n == 0) return x;
  const double lo = grid.dt, hi = grid.horizon();
  if (n == 1 || hi <= lo) {
    x.push_back(lo);
    return x;
  }
  for (std::size_t i = 0; i < n; ++i)
    x.push_back(lo * std::pow(hi / lo, static_cast<double>(i) / static_cast<double>(n - 1)));
  x.back() = hi;
  return x;
}

LiftState lift_state(const PathEnsemble& e, std::size_t path, double t, const std::vector<double>& x_grid) {
  if (!e.retained) fail(ErrorCode::MissingHistory, "the lift needs an ensemble with retained history");
  for (double x : x_grid)
    if (!(x >= 0.0)) fail(ErrorCode::InvalidParams, "maturities must be nonnegative");
  LiftState s;
  s.k = e.grid.index_of(t);
  s.t = e.grid.node(s.k);
  s.x_grid = x_grid;
  s.d = e.d;
  s.curve.reserve(e.d * x_grid.size());
  for (std::size_t i = 0; i < e.d; ++i) {
    const auto c = sim::forward_curve(e, path, s.k, i, x_grid);
    s.curve.insert(s.curve.end(), c.begin(), c.end());
  }
  return s;
}

FlowReport flow_check(const PathEnsemble& e, std::size_t path, double t, double s, const std::vector<double>& x_grid) {
  const std::size_t k = e.grid.index_of(t);
  const std::size_t m = e.grid.index_of(s);
  if (k + m > e.grid.n_steps) fail(ErrorCode::InvalidParams, "t + s exceeds the horizon");
  const auto direct = lift_state(e, path, e.grid.node(k + m), x_grid);
  // shifted curve at t: offsets x + s
  std::vector<double> shifted_x(x_grid.size());
  for (std::size_t j = 0; j < x_grid.size(); ++j) shifted_x[j] = x_grid[j] + e.grid.node(m);
  const auto shifted = lift_state(e, path, e.grid.node(k), shifted_x);
  // increments on (t, t+s]: the curve at t+s of the history after t alone
  FlowReport r;
  const std::size_t nodes = e.nodes(), M = x_grid.size();
  for (std::size_t i = 0; i < e.d; ++i) {
    for (std::size_t j = 0; j < M; ++j) {
      const double tau = e.grid.node(k + m) + x_grid[j];
      double inc_b = 0.0, inc_s = 0.0;
      for (std::size_t c = k; c < k + m; ++c) {
        // the same weights the forward curve uses at grid and off-grid offsets
        const auto w = sim::forward_curve_weight(e, i, tau, c);
        const std::size_t at = (path * nodes + c) * e.d + i;
        inc_b += w.b * e.drift[at];
        inc_s += w.s * e.diff[at] * e.dM[at];
      }
      const double a = direct.at(i, j);
      const double b = shifted.at(i, j) + inc_b + inc_s;
      r.residual = std::max(r.residual, std::abs(a - b));
      r.scale = std::max(r.scale, std::abs(a));
      ++r.checked;
    }
  }
  return r;
}

std::vector<sim::Perturbation> functional_channels(const kernels::KernelSpec& k,
                                                   const std::vector<perturb::PerturbationSpec>& specs,
                                                   const resolvents::TimeGrid& grid, std::size_t coordinate,
                                                   std::size_t workers) {
  std::vector<sim::Perturbation> out;
  for (const auto& s : specs) {
    kernels::KernelSpec kt;
    if (s.kind == perturb::Kind::MarchaudDerivative)
      kt = perturb::marchaud_forward(k, s, grid, workers).kernel;
    else if (s.kind == perturb::Kind::FractionalIntegral)
      kt = perturb::fractional_integral_perturb(k, s, grid, workers).kernel;
    else
      kt = perturb::apply(k, s, grid);
    out.push_back(sim::Perturbation::same(kt, coordinate));
  }
  return out;
}

namespace {

// descending eigenvalues of the correlation matrix of columns z[p*N + q] over the sampled rows
std::vector<double> corr_spectrum(const std::vector<double>& z, std::size_t N, const std::vector<std::size_t>& rows) {
  const double n = static_cast<double>(rows.size());
  std::vector<double> mean(N, 0.0);
  for (auto p : rows)
    for (std::size_t q = 0; q < N; ++q) mean[q] += z[p * N + q];
  for (auto& v : mean) v /= n;
  linalg::Matrix c(N);
  for (auto p : rows)
    for (std::size_t a = 0; a < N; ++a) {
      const double da = z[p * N + a] - mean[a];
      for (std::size_t b = a; b < N; ++b) c(a, b) += da * (z[p * N + b] - mean[b]);
    }
  // a column whose spread is rounding noise around its mean counts as constant
  std::vector<double> sd(N);
  for (std::size_t a = 0; a < N; ++a)
    sd[a] = c(a, a) > 1e-24 * n * mean[a] * mean[a] && c(a, a) > 0.0 ? std::sqrt(c(a, a)) : 0.0;
  linalg::Matrix r(N);
  for (std::size_t a = 0; a < N; ++a)
    for (std::size_t b = a; b < N; ++b) {
      const double v = sd[a] > 0.0 && sd[b] > 0.0 ? c(a, b) / (sd[a] * sd[b]) : 0.0;
      r(a, b) = r(b, a) = v;
    }
  auto ev = linalg::sym_eigen(r).values;
  std::reverse(ev.begin(), ev.end());
  return ev;
}

double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const std::size_t i = static_cast<std::size_t>(std::floor(pos));
  const std::size_t j = std::min(i + 1, v.size() - 1);
  return v[i] + (pos - static_cast<double>(i)) * (v[j] - v[i]);
}

}  // namespace

RankReport covariance_rank(const PathEnsemble& e, double t, const RankOptions& opt) {
  const std::size_t N = e.n_pert;
  if (N == 0) fail(ErrorCode::InvalidParams, "ensemble has no Z columns");
  if (e.n_paths < 10 * N)
    fail(ErrorCode::TooFewPaths, "covariance rank needs at least " + std::to_string(10 * N) + " paths, got " +
                                     std::to_string(e.n_paths));
  if (opt.n_boot < 10) fail(ErrorCode::InvalidParams, "n_boot must be at least 10");
  if (!(opt.level > 0.0 && opt.level < 1.0)) fail(ErrorCode::InvalidParams, "level must lie in (0, 1)");
  const std::size_t k = e.grid.index_of(t);
  const std::size_t P = e.n_paths;
  std::vector<double> z(P * N);
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t q = 0; q < N; ++q) z[p * N + q] = e.z(p, k, q);

  RankReport r;
  r.t = e.grid.node(k);
  r.n_paths = P;
  r.n_functionals = N;
  r.n_boot = opt.n_boot;
  r.level = opt.level;
  std::vector<std::size_t> all(P);
  for (std::size_t p = 0; p < P; ++p) all[p] = p;
  r.eigenvalues = corr_spectrum(z, N, all);
  r.variances.assign(N, 0.0);
  for (std::size_t q = 0; q < N; ++q) {
    double m = 0.0, s = 0.0;
    for (std::size_t p = 0; p < P; ++p) m += z[p * N + q];
    m /= static_cast<double>(P);
    for (std::size_t p = 0; p < P; ++p) s += std::pow(z[p * N + q] - m, 2);
    r.variances[q] = s / static_cast<double>(P - 1);
  }

  std::vector<std::vector<double>> boot(opt.n_boot);
  parallel_for(opt.n_boot, opt.workers, [&](std::size_t b) {
    std::vector<std::size_t> rows(P);
    for (std::size_t i = 0; i < P; ++i) {
      const double u = rng::uniform(opt.seed, b, static_cast<std::uint32_t>(i), 0x4c494654u);
      rows[i] = std::min(P - 1, static_cast<std::size_t>(u * static_cast<double>(P)));
    }
    boot[b] = corr_spectrum(z, N, rows);
  });
  const double lo_q = 0.5 * (1.0 - opt.level), hi_q = 1.0 - lo_q;
  for (std::size_t i = 0; i < N; ++i) {
    std::vector<double> col(opt.n_boot);
    for (std::size_t b = 0; b < opt.n_boot; ++b) col[b] = boot[b][i];
    r.ci_lo.push_back(percentile(col, lo_q));
    r.ci_hi.push_back(percentile(col, hi_q));
    if (r.ci_lo.back() > opt.zero_tol) ++r.rank;
  }
  return r;
}

}  // namespace volterra::lift
