#include "volterra/resolvents.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "volterra/error.hpp"

namespace volterra::resolvents {

TimeGrid TimeGrid::make(double dt, double horizon) {
  if (!(dt > 0.0) || !(horizon > 0.0)) fail(ErrorCode::InvalidParams, "grid needs dt > 0 and horizon > 0");
  const double r = horizon / dt;
  const double n = std::round(r);
  if (n < 1.0 || std::abs(r - n) > 1e-9 * std::max(1.0, r))
    fail(ErrorCode::InvalidParams, "horizon must be an integer multiple of dt");
  return TimeGrid{dt, static_cast<std::size_t>(n)};
}

std::size_t TimeGrid::index_of(double t) const {
  const double r = t / dt;
  const double n = std::round(r);
  if (n < 0.0 || std::abs(r - n) > 1e-9 * std::max(1.0, r) || n > static_cast<double>(n_steps)) {
    std::ostringstream os;
    os << "time " << t << " is not a node of the grid (dt = " << dt << ", n = " << n_steps << ")";
    fail(ErrorCode::GridMismatch, os.str());
  }
  return static_cast<std::size_t>(n);
}

CellWeights cell_weights(const KernelSpec& k, double dt, std::size_t n, bool with_half) {
  CellWeights cw;
  cw.dt = dt;
  cw.w.assign(n + 1, 0.0);
  if (with_half) {
    cw.half.assign(2 * n + 1, 0.0);
    for (std::size_t j = 1; j <= 2 * n; ++j)
      cw.half[j] = kernels::integral(k, 0.5 * dt * (j - 1), 0.5 * dt * j);
    for (std::size_t m = 1; m <= n; ++m) cw.w[m] = cw.half[2 * m - 1] + cw.half[2 * m];
  } else {
    for (std::size_t m = 1; m <= n; ++m) cw.w[m] = kernels::integral(k, dt * (m - 1), dt * m);
  }
  return cw;
}

std::vector<double> cell_sq_means(const KernelSpec& k, double dt, std::size_t n) {
  std::vector<double> out(n + 1, 0.0);
  for (std::size_t m = 1; m <= n; ++m) out[m] = kernels::integral_sq(k, dt * (m - 1), dt * m) / dt;
  return out;
}

namespace {

double atom_of(const KernelSpec& k) {
  auto k0 = kernels::value_at_zero(k);
  if (!k0) return 0.0;
  if (!(*k0 > 0.0)) fail(ErrorCode::SingularSystem, "kernel must be positive at 0");
  return 1.0 / *k0;
}

}  // namespace

std::vector<double> midpoint_residuals(const ResolventTables& tb) {
  const std::size_t n = tb.grid.n_steps;
  const double dt = tb.grid.dt;
  auto cw = cell_weights(tb.kernel, dt, n, true);
  std::vector<double> r(n + 1, 0.0);
  for (std::size_t i = 1; i <= n; ++i) {
    const double tau = (i - 0.5) * dt;
    double s = tb.atom > 0.0 ? tb.atom * kernels::eval(tb.kernel, tau) : 0.0;
    for (std::size_t j = 1; j < i; ++j) s += tb.L0[j] * (cw.half[2 * (i - j)] + cw.half[2 * (i - j) + 1]);
    s += tb.L0[i] * cw.half[1];
    r[i] = s - 1.0;
  }
  return r;
}

ResolventTables resolvent_first_kind(const KernelSpec& k, const TimeGrid& grid) {
  if (!kernels::is_completely_monotone(k))
    fail(ErrorCode::NotCompletelyMonotone, "resolvent of the first kind needs a completely monotone kernel");
  ResolventTables tb;
  tb.grid = grid;
  tb.kernel = k;
  const std::size_t n = grid.n_steps;
  const double dt = grid.dt;
  tb.w = cell_weights(k, dt, n).w;
  tb.atom = atom_of(k);
  if (!(tb.w[1] > 0.0)) fail(ErrorCode::SingularSystem, "leading kernel cell integral vanishes");

  // collocation of atom K + sum_j l_j int_cell K(t_i - s) ds = 1 at the nodes
  tb.L0.assign(n + 1, 0.0);
  tb.L0[0] = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t i = 1; i <= n; ++i) {
    double s = 1.0;
    if (tb.atom > 0.0) s -= tb.atom * kernels::eval(k, grid.node(i));
    for (std::size_t j = 1; j < i; ++j) s -= tb.L0[j] * tb.w[i - j + 1];
    tb.L0[i] = s / tb.w[1];
  }
  tb.has_L = true;

  auto r = midpoint_residuals(tb);
  tb.tail_from = grid.horizon() / 64.0;
  for (std::size_t i = 1; i <= n; ++i) {
    const double a = std::abs(r[i]);
    if (a > tb.residual) {
      tb.residual = a;
      tb.residual_argmax = i;
    }
    if ((i - 0.5) * dt >= tb.tail_from) tb.residual_tail = std::max(tb.residual_tail, a);
  }
  return tb;
}

ResolventTables resolvent_EK(const KernelSpec& k, double beta, const TimeGrid& grid) {
  if (!std::isfinite(beta)) fail(ErrorCode::InvalidParams, "beta must be finite");
  ResolventTables tb;
  tb.grid = grid;
  tb.kernel = k;
  tb.beta = beta;
  const std::size_t n = grid.n_steps;
  const double dt = grid.dt;
  tb.w = cell_weights(k, dt, n).w;
  tb.EK.assign(n + 1, 0.0);
  tb.EK_cell.assign(n + 1, 0.0);
  tb.KE.assign(n + 1, 0.0);
  auto k0 = kernels::value_at_zero(k);
  tb.EK[0] = k0 ? *k0 : std::numeric_limits<double>::infinity();
  const double denom = 1.0 - 0.5 * beta * tb.w[1];
  if (denom == 0.0) fail(ErrorCode::SingularSystem, "E_K recursion is singular for this dt");
  // cell averages with the trapezoid rule for the cell mean of K*E_K
  for (std::size_t i = 1; i <= n; ++i) {
    double s = 0.0;
    for (std::size_t j = 1; j < i; ++j) s += tb.EK_cell[j] * tb.w[i - j + 1];
    const double kbar = tb.w[i] / dt;
    const double e = beta == 0.0 ? kbar : (kbar + 0.5 * beta * (tb.KE[i - 1] + s)) / denom;
    tb.EK_cell[i] = e;
    tb.KE[i] = s + e * tb.w[1];
    tb.EK[i] = kernels::eval(k, grid.node(i)) + beta * tb.KE[i];
  }
  tb.has_E = true;
  return tb;
}

ResolventTables build_tables(const KernelSpec& k, double beta, const TimeGrid& grid) {
  auto tb = resolvent_first_kind(k, grid);
  auto e = resolvent_EK(k, beta, grid);
  tb.beta = beta;
  tb.EK = std::move(e.EK);
  tb.EK_cell = std::move(e.EK_cell);
  tb.KE = std::move(e.KE);
  tb.has_E = true;
  return tb;
}

PiTable pi_z(const ResolventTables& tb, double z, double tolerance) {
  if (!tb.has_L || !tb.has_E) fail(ErrorCode::InvalidParams, "pi_z needs L0 and E_K tables");
  const std::size_t p = tb.grid.index_of(z);
  const std::size_t n = tb.grid.n_steps;
  if (p == 0 || p >= n) fail(ErrorCode::GridMismatch, "z must be a positive node below the horizon");
  const double dt = tb.grid.dt;
  PiTable pi;
  pi.z = z;
  pi.p = p;
  pi.n_out = n - p;
  const std::size_t no = pi.n_out;
  const auto& l = tb.L0;
  const auto& e = tb.EK_cell;

  // integral route: Pi_z(t) = -int_0^z E_K(r) L0(t+z-r) dr
  pi.Pi.assign(no + 1, 0.0);
  for (std::size_t i = 0; i <= no; ++i) {
    double s = 0.0;
    for (std::size_t m = 1; m <= p; ++m) s += e[m] * l[i + p - m + 1];
    pi.Pi[i] = -s * dt;
  }
  // differentiated form with finite differences of L0
  pi.dPi.assign(no + 1, 0.0);
  double scale = 0.0;
  for (std::size_t i = 1; i <= no; ++i) {
    double s = 0.0;
    for (std::size_t m = 1; m <= p; ++m) s += e[m] * (l[i + p - m + 1] - l[i + p - m]);
    pi.dPi[i] = -s * dt;
    scale = std::max(scale, std::abs(pi.Pi[i]));
  }
  // convolution route: (Delta_z E_K * L)(t) - Delta_z (E_K * L)(t)
  auto conv = [&](std::size_t shift, std::size_t upto) {
    double s = 0.0;
    for (std::size_t j = 1; j <= upto; ++j) s += l[j] * e[upto + shift - j + 1];
    return s * dt;
  };
  double disc = 0.0;
  for (std::size_t i = 0; i <= no; ++i) {
    const double atom_part = tb.atom * tb.EK[i + p];
    const double shifted = (tb.atom > 0.0 ? atom_part : 0.0) + conv(p, i);
    const double full = (tb.atom > 0.0 ? atom_part : 0.0) + conv(0, i + p);
    disc = std::max(disc, std::abs((shifted - full) - pi.Pi[i]));
  }
  pi.route_discrepancy = disc;
  const double tol = tolerance >= 0.0 ? tolerance : std::max(10.0 * tb.residual_tail, 1e-10);
  if (disc > tol * std::max(1.0, scale)) {
    std::ostringstream os;
    os << "Pi_z routes disagree by " << disc << " (tolerance " << tol << ")";
    fail(ErrorCode::InconsistentRoutes, os.str());
  }
  double mass_scale = 0.0, mass_max = 0.0;
  for (std::size_t i = 1; i <= no; ++i) {
    mass_max = std::max(mass_max, std::abs(pi.dPi[i]));
    mass_scale = std::max(mass_scale, std::abs(pi.Pi[i]));
  }
  pi.degenerate = mass_max <= 1e-10 * std::max(mass_scale, 1e-300) || mass_max == 0.0;
  return pi;
}

KzReport kz_kernel(const ResolventTables& tb, PiTable& pi, double slack, bool throw_on_violation) {
  const std::size_t no = pi.n_out;
  const double dt = tb.grid.dt;
  pi.Kz.assign(no + 1, 0.0);
  pi.Kz[0] = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t i = 1; i <= no; ++i) {
    double s = 0.0;
    for (std::size_t j = 1; j <= i; ++j) s += pi.dPi[j] * tb.w[i - j + 1];
    pi.Kz[i] = s / dt;
  }
  pi.has_Kz = true;

  KzReport rep;
  const double Kz_at_z = kernels::eval(tb.kernel, pi.z);
  double sup = 0.0;
  for (std::size_t i = 1; i <= pi.p; ++i) sup = std::max(sup, std::abs(tb.KE[i]));
  rep.f = std::abs(tb.beta) * sup / Kz_at_z;
  rep.min_ratio = std::numeric_limits<double>::infinity();
  rep.max_ratio = -std::numeric_limits<double>::infinity();
  if (pi.degenerate) {
    rep.min_ratio = rep.max_ratio = 0.0;
    return rep;
  }
  for (std::size_t i = 1; i <= no; ++i) {
    const double t = tb.grid.node(i);
    const double D = kernels::eval(tb.kernel, t + pi.z) - Kz_at_z * tb.atom * kernels::eval(tb.kernel, t);
    if (!(D > 1e-300)) continue;
    const double r = pi.Kz[i] / D;
    rep.min_ratio = std::min(rep.min_ratio, r);
    rep.max_ratio = std::max(rep.max_ratio, r);
    rep.max_violation = std::max({rep.max_violation, (1.0 - rep.f) - r, r - (1.0 + rep.f)});
    ++rep.checked;
  }
  rep.ok = rep.max_violation <= slack;
  if (!rep.ok && throw_on_violation) {
    std::ostringstream os;
    os << "K_z sandwich violated by " << rep.max_violation << " (f = " << rep.f << ", ratio in ["
       << rep.min_ratio << ", " << rep.max_ratio << "])";
    fail(ErrorCode::BoundViolation, os.str());
  }
  return rep;
}

CondExpCoeffs cond_exp_coeffs(const ResolventTables& tb, const PiTable& pi, double t, double T,
                              double b, double x0) {
  if (!(t >= 0.0 && t < T)) fail(ErrorCode::InvalidParams, "need 0 <= t < T");
  const std::size_t k = tb.grid.index_of(t);
  const std::size_t N = tb.grid.index_of(T);
  CondExpCoeffs c;
  c.k = k;
  c.p = N - k;
  if (c.p != pi.p) fail(ErrorCode::GridMismatch, "T - t does not match the z of the Pi table");
  if (k > pi.n_out) fail(ErrorCode::GridMismatch, "Pi table does not cover t");
  const double dt = tb.grid.dt;
  double ie = 0.0;
  for (std::size_t m = 1; m <= c.p; ++m) ie += tb.EK_cell[m] * dt;
  c.c0 = b * ie;
  c.c1_x0 = -pi.Pi[k] * x0;
  // right limit of the shifted E_K at 0 under the atom
  c.c2 = tb.atom > 0.0 ? tb.atom * tb.EK[c.p] : 0.0;
  c.masses.assign(k + 1, 0.0);
  for (std::size_t j = 1; j <= k; ++j) c.masses[j] = pi.dPi[j];
  return c;
}

double cond_exp_apply(const CondExpCoeffs& c, std::span<const double> x) {
  if (x.size() < c.k + 1) fail(ErrorCode::InvalidParams, "path shorter than t");
  double v = c.c0 + c.c1_x0 + c.c2 * x[c.k];
  for (std::size_t j = 1; j <= c.k; ++j) v += c.masses[j] * 0.5 * (x[c.k - j] + x[c.k - j + 1]);
  return v;
}

}  // namespace volterra::resolvents
