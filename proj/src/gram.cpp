#include "volterra/gram.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "volterra/error.hpp"
#include "volterra/parallel.hpp"

namespace volterra::gram {

linalg::Matrix gram_matrix(const MatrixKernelSpec& m, double h) {
  if (!(h > 0.0) || !std::isfinite(h)) fail(ErrorCode::InvalidParams, "h must be positive");
  if (m.N == 0) fail(ErrorCode::InvalidParams, "empty kernel system");
  linalg::Matrix g(m.N);
  for (std::size_t a = 0; a < m.N; ++a) {
    for (std::size_t b = a; b < m.N; ++b) {
      double s = 0.0;
      for (const auto& [col, ka] : m.rows[a]) {
        const KernelSpec* kb = m.at(b, col);
        if (!kb) continue;
        s += (a == b) ? kernels::integral_sq(ka, 0.0, h) : kernels::integral_product(ka, *kb, 0.0, h);
      }
      g(a, b) = s;
      g(b, a) = s;
    }
  }
  return g;
}

std::vector<double> default_h_list(int n, double lo, double hi) {
  if (n < 2 || !(lo > 0.0) || !(hi > lo)) fail(ErrorCode::InvalidParams, "bad h range");
  std::vector<double> h(n);
  const double a = std::log(hi), b = std::log(lo);
  for (int i = 0; i < n; ++i) h[i] = std::exp(a + (b - a) * i / (n - 1));
  return h;
}

namespace {

bool log_modulated(const KernelSpec& k) {
  return k.family == kernels::Family::ParametricClass && k.log_exponent != 0.0;
}

void check_h_list(const std::vector<double>& h) {
  if (h.size() < 3) fail(ErrorCode::InvalidParams, "need at least 3 h values");
  double lo = h.front(), hi = h.front();
  for (double v : h) {
    if (!(v > 0.0) || !std::isfinite(v)) fail(ErrorCode::InvalidParams, "h values must be positive");
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi / lo < 1e3 * (1.0 - 1e-9)) fail(ErrorCode::InvalidParams, "h_list must span at least 3 decades");
}

linalg::LineFit fit_window(const std::vector<double>& h, const std::vector<double>& y,
                           const FitWindow& w, std::size_t* used = nullptr) {
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < h.size(); ++i) {
    if (h[i] < w.lo * (1 - 1e-12) || h[i] > w.hi * (1 + 1e-12)) continue;
    if (!(y[i] > 0.0)) continue;
    lx.push_back(std::log(h[i]));
    ly.push_back(std::log(y[i]));
  }
  if (used) *used = lx.size();
  if (lx.size() < 3) fail(ErrorCode::InvalidParams, "fewer than 3 points inside the fit window");
  return linalg::fit_line(lx, ly);
}

MatrixKernelSpec sub_system(const MatrixKernelSpec& m, const std::vector<std::size_t>& rows) {
  std::vector<std::vector<std::pair<std::size_t, KernelSpec>>> r;
  for (auto i : rows) r.push_back(m.rows[i]);
  return MatrixKernelSpec::make(m.d, std::move(r));
}

}  // namespace

GramScanReport nondegeneracy_scan(const MatrixKernelSpec& m, const std::vector<double>& h_list,
                                  const FitWindow& window, std::size_t workers) {
  check_h_list(h_list);
  GramScanReport rep;
  rep.h_values = h_list;
  std::sort(rep.h_values.begin(), rep.h_values.end(), std::greater<>());
  const std::size_t n = rep.h_values.size();
  rep.lambda_min.assign(n, 0.0);
  rep.lambda_max.assign(n, 0.0);
  rep.corrected.assign(n, 0.0);

  // rows carrying a log modifier feed the correction column
  std::vector<const KernelSpec*> modulated;
  for (const auto& row : m.rows)
    for (const auto& e : row)
      if (log_modulated(e.second)) modulated.push_back(&e.second);
  rep.has_correction = !modulated.empty();

  parallel_for(n, workers, [&](std::size_t i) {
    const double h = rep.h_values[i];
    const auto eig = linalg::sym_eigen(gram_matrix(m, h));
    rep.lambda_min[i] = eig.values.front();
    rep.lambda_max[i] = eig.values.back();
    double l = 1.0;
    if (rep.has_correction) {
      l = std::numeric_limits<double>::infinity();
      for (auto* k : modulated) l = std::min(l, std::abs(kernels::slowly_varying_factor(*k, h)));
    }
    rep.corrected[i] = rep.lambda_min[i] / (l * l);
  });

  if (rep.lambda_min.front() < 1e-14 * rep.lambda_max.front())
    fail(ErrorCode::DegenerateSystem, "kernel rows are linearly dependent (lambda_min / lambda_max = " +
                                          std::to_string(rep.lambda_min.front() / rep.lambda_max.front()) + ")");

  const auto fit = fit_window(rep.h_values, rep.lambda_min, window, &rep.n_fit);
  rep.gamma_star = 0.5 * fit.slope;
  rep.intercept = fit.intercept;
  rep.fit_r2 = fit.r2;
  rep.gamma_star_corrected =
      rep.has_correction ? 0.5 * fit_window(rep.h_values, rep.corrected, window).slope : rep.gamma_star;

  if (m.diagonal_like) {
    const auto parts = m.partition();
    for (std::size_t c = 0; c < parts.size(); ++c) {
      if (parts[c].empty()) continue;
      BlockReport b;
      b.coordinate = c;
      b.rows = parts[c];
      const auto sub = sub_system(m, parts[c]);
      b.lambda_min.resize(n);
      for (std::size_t i = 0; i < n; ++i)
        b.lambda_min[i] = linalg::sym_eigen(gram_matrix(sub, rep.h_values[i])).values.front();
      const auto f = fit_window(rep.h_values, b.lambda_min, window);
      b.gamma_star = 0.5 * f.slope;
      b.r2 = f.r2;
      rep.blocks.push_back(std::move(b));
    }
  }
  return rep;
}

KernelSpec kz_as_kernel(const resolvents::PiTable& pi, const resolvents::TimeGrid& grid) {
  if (!pi.has_Kz) fail(ErrorCode::InvalidParams, "Pi table carries no K_z values");
  if (pi.n_out < 2) fail(ErrorCode::InvalidParams, "K_z table too short");
  std::vector<double> t(pi.n_out), v(pi.n_out);
  for (std::size_t i = 1; i <= pi.n_out; ++i) {
    t[i - 1] = grid.node(i);
    v[i - 1] = pi.Kz[i];
  }
  return KernelSpec::tabulated(std::move(t), std::move(v));
}

MzReport affine_Mz_scan(const KernelSpec& k, const resolvents::PiTable& pi,
                        const resolvents::TimeGrid& grid, const std::vector<double>& h_list,
                        std::optional<double> gamma, const FitWindow& window) {
  check_h_list(h_list);
  const double h_max = *std::max_element(h_list.begin(), h_list.end());
  if (h_max > grid.node(pi.n_out) * (1 + 1e-12))
    fail(ErrorCode::InvalidParams, "K_z table does not cover the largest h");
  // below t_1 the table continues as the power law through its first two nodes; K_z is
  // bounded near 0 for z > 0 so this only matters for very fine h
  const auto kz = kz_as_kernel(pi, grid);
  MzReport rep;
  rep.scan = nondegeneracy_scan(MatrixKernelSpec::column({k, kz}), h_list, window);
  rep.gamma = gamma;
  if (gamma) {
    if (!(*gamma >= 0.0)) fail(ErrorCode::InvalidParams, "gamma must be nonnegative");
    rep.bound = std::min(*gamma, 0.5) + 0.5 * *gamma;
    rep.condition_holds = rep.scan.gamma_star < rep.bound;
  }
  return rep;
}

namespace {

void require_nonneg(std::optional<double> v, const char* name) {
  if (v && (!std::isfinite(*v) || *v < 0.0))
    fail(ErrorCode::InvalidParams, std::string(name) + " must be finite and nonnegative");
}

BalanceCheck make_check(std::string name, double lhs, double rhs) {
  BalanceCheck c;
  c.name = std::move(name);
  c.lhs = lhs;
  c.rhs = rhs;
  c.margin = rhs - lhs;
  c.pass = lhs < rhs;
  return c;
}

}  // namespace

BalanceReport balance_check(const BalanceParams& p) {
  require_nonneg(p.gamma_b, "gamma_b");
  require_nonneg(p.gamma_sigma, "gamma_sigma");
  require_nonneg(p.gamma_K, "gamma_K");
  require_nonneg(p.H_b, "H_b");
  require_nonneg(p.H_sigma, "H_sigma");
  require_nonneg(p.gamma, "gamma");
  require_nonneg(p.chi_b, "chi_b");
  if (!(p.chi_sigma > 0.0) || !std::isfinite(p.chi_sigma))
    fail(ErrorCode::InvalidParams, "chi_sigma must be positive");
  for (double g : p.gamma_star)
    if (!std::isfinite(g) || g < 0.0) fail(ErrorCode::InvalidParams, "gamma_star must be finite and nonnegative");

  BalanceReport rep;
  if (!p.gamma_star.empty() && p.gamma_b && p.gamma_sigma && p.gamma_K) {
    const double rhs = std::min(*p.gamma_b + 0.5 + p.chi_b * *p.gamma_K, *p.gamma_sigma + p.chi_sigma * *p.gamma_K);
    if (p.diagonal) {
      for (std::size_t i = 0; i < p.gamma_star.size(); ++i)
        rep.checks.push_back(make_check("increment-balance[" + std::to_string(i) + "]", p.gamma_star[i], rhs));
    } else {
      const double g = *std::max_element(p.gamma_star.begin(), p.gamma_star.end());
      rep.checks.push_back(make_check("increment-balance", g, rhs));
    }
  }
  if (p.H_b && p.H_sigma) {
    const double hb = *p.H_b, hs = *p.H_sigma;
    const double chi = hs < hb ? p.chi_sigma : std::min(p.chi_sigma, 0.5 * (1.0 + p.chi_b));
    rep.checks.push_back(make_check("hurst-balance", std::max(hb, hs), 0.5 + chi * std::min(hb, hs)));
  }
  if (p.gamma && !p.gamma_star.empty()) {
    const double g = *std::max_element(p.gamma_star.begin(), p.gamma_star.end());
    rep.checks.push_back(make_check("affine-square-root", g, std::min(*p.gamma, 0.5) + 0.5 * *p.gamma));
  }
  for (const auto& c : rep.checks) rep.pass = rep.pass && c.pass;
  if (rep.checks.empty()) fail(ErrorCode::InvalidParams, "no balance inequality has all of its parameters");
  return rep;
}

}  // namespace volterra::gram
