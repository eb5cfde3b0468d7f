// acceptance runner: one PASS/FAIL line per criterion, exit status = number of failures
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <functional>
#include <string>
#include <vector>

#include "volterra/error.hpp"
#include "volterra/gram.hpp"
#include "volterra/kernels.hpp"
#include "volterra/lift.hpp"
#include "volterra/markovtest.hpp"
#include "volterra/perturb.hpp"
#include "volterra/resolvents.hpp"
#include "volterra/sim.hpp"

using namespace volterra;
using kernels::KernelSpec;
using kernels::MatrixKernelSpec;
using resolvents::TimeGrid;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... a) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, a...);
  return buf;
}

perturb::PerturbationSpec marchaud(double alpha) {
  perturb::PerturbationSpec s;
  s.alpha = alpha;
  return s;
}

std::vector<perturb::PerturbationSpec> marchaud_orders(std::initializer_list<double> a) {
  std::vector<perturb::PerturbationSpec> v;
  for (double x : a) v.push_back(marchaud(x));
  return v;
}

// canonical fractional CIR used throughout
sim::ModelSpec frac_cir(double H, double sigma = 0.3) {
  return sim::volterra_cir(KernelSpec::fractional(H), 0.3, 0.3, -0.7, sigma);
}

Outcome gram_singular() {
  const auto m = MatrixKernelSpec::column({KernelSpec::fractional(0.1), KernelSpec::fractional(0.3)});
  const auto r = gram::nondegeneracy_scan(m, gram::default_h_list());
  const bool ok = r.gamma_star >= 0.27 && r.gamma_star <= 0.33;
  return {ok, fmt("gamma* = %.5f (want [0.27, 0.33]), r2 = %.6f, %zu points", r.gamma_star, r.fit_r2, r.n_fit)};
}

Outcome gram_regular() {
  const auto m = MatrixKernelSpec::column({KernelSpec::exponential(1.0), KernelSpec::exponential(2.0)});
  const auto r = gram::nondegeneracy_scan(m, gram::default_h_list());
  const double slope = 2.0 * r.gamma_star;
  const bool ok = slope >= 1.9 && slope <= 2.1;
  return {ok, fmt("slope of lambda_min = %.5f (want [1.9, 2.1]); exact leading order is h^3", slope)};
}

Outcome marchaud_stability() {
  const double rho = -0.25, alpha = 0.1, t = 1e-5;
  const double c1 = perturb::C_alpha(rho, alpha, 1.0);
  const double c2 = perturb::C_alpha(rho, alpha, 2.0);
  const double closed = std::tgamma(-alpha) * std::tgamma(alpha - rho) / std::tgamma(-rho);
  const auto k = KernelSpec::fractional(0.25);
  const double v = perturb::marchaud_value(k, marchaud(alpha), t).value;
  const double ratio = v / (std::pow(t, -alpha) * kernels::eval(k, t));
  const double rel = std::abs(ratio - c1) / std::abs(c1);
  const bool pinned = std::abs(c1 - c2) < 1e-8;
  return {pinned && rel < 0.02,
          fmt("C = %.12f (splits agree to %.1e, closed form %.12f); ratio at t=1e-5 = %.6f, rel dev %.4f (want < 0.02)",
              c1, std::abs(c1 - c2), closed, ratio, rel)};
}

Outcome exponential_eigenrelation() {
  const double alpha = 0.3, lambda = 1.0;
  std::vector<double> nodes;
  for (int i = 0; i <= 400; ++i) nodes.push_back(0.01 + (2.0 - 0.01) * i / 400.0);
  const auto r = perturb::marchaud_on_nodes(KernelSpec::exponential(lambda), marchaud(alpha), nodes);
  const double c = std::tgamma(-alpha) * (std::pow(1.0 + lambda, alpha) - 1.0);
  double worst = 0.0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const double want = c * std::exp(-lambda * nodes[i]);
    worst = std::max(worst, std::abs(r.value[i] - want) / std::abs(want));
  }
  return {worst < 1e-6, fmt("sup relative deviation %.3e on [0.01, 2] (want < 1e-6)", worst)};
}

// (K*L)(t_i) - 1 at the grid nodes from the cell integrals
double node_residual(const resolvents::ResolventTables& tb) {
  double worst = 0.0;
  const std::size_t n = tb.grid.n_steps;
  for (std::size_t i = 1; i <= n; ++i) {
    double s = tb.atom == 0.0 ? 0.0 : tb.atom * kernels::eval(tb.kernel, tb.grid.node(i));
    for (std::size_t m = 1; m <= i; ++m) s += tb.L0[m] * tb.w[i - m + 1];
    worst = std::max(worst, std::abs(s - 1.0));
  }
  return worst;
}

Outcome resolvent_identity() {
  const auto k = KernelSpec::fractional(0.3);
  const auto a = resolvents::resolvent_first_kind(k, TimeGrid::make(std::ldexp(1.0, -12), 1.0));
  const auto b = resolvents::resolvent_first_kind(k, TimeGrid::make(std::ldexp(1.0, -13), 1.0));
  const double ratio = a.residual / b.residual;
  const bool ok = a.residual < 1e-3 && ratio >= 1.5;
  return {ok, fmt("midpoint sup residual %.4e at dt=2^-12, %.4e at 2^-13, ratio %.3f (want < 1e-3 and >= 1.5); "
                  "tail residual %.3e -> %.3e; node residual %.1e",
                  a.residual, b.residual, ratio, a.residual_tail, b.residual_tail, node_residual(a))};
}

Outcome kz_exactness() {
  const auto k = KernelSpec::fractional(0.3);
  const auto grid = TimeGrid::make(std::ldexp(1.0, -10), 1.25);
  const double z = 0.25;
  auto tb0 = resolvents::build_tables(k, 0.0, grid);
  auto pi0 = resolvents::pi_z(tb0, z);
  resolvents::kz_kernel(tb0, pi0, 1e-2, false);
  double worst = 0.0;
  for (std::size_t i = 1; i <= pi0.n_out; ++i)
    worst = std::max(worst, std::abs(pi0.Kz[i] / kernels::eval(k, grid.node(i) + z) - 1.0));
  auto tb1 = resolvents::build_tables(k, -1.0, grid);
  auto pi1 = resolvents::pi_z(tb1, z);
  const auto rep = resolvents::kz_kernel(tb1, pi1, 1e-2, false);
  const bool ok = worst < 5e-3 && rep.ok && rep.checked == pi1.n_out;
  return {ok, fmt("beta=0 max rel |K_z - K(.+z)| = %.3e on %zu nodes (want < 5e-3); beta=-1 sandwich f = %.4f, "
                  "ratio range [%.4f, %.4f], violation %.2e, %s",
                  worst, pi0.n_out, rep.f, rep.min_ratio, rep.max_ratio, rep.max_violation, rep.ok ? "holds" : "broken")};
}

Outcome conditional_mean() {
  const auto grid = TimeGrid::make(std::ldexp(1.0, -9), 1.0);
  const auto m = frac_cir(0.3);
  const auto tb = resolvents::build_tables(m.kernel_b[0], -0.7, grid);
  const auto pi = resolvents::pi_z(tb, 0.5);
  const auto r = markovtest::conditional_mean_check(m, tb, pi, 0.5, 1.0, 2000, 200, 1);
  double worst_bin = 0.0;
  for (double v : r.bin_z) worst_bin = std::max(worst_bin, std::abs(v));
  return {std::abs(r.z) < 3.0, fmt("mean(nested - formula) = %.3e, se %.3e, z = %.3f (want |z| < 3); worst bin |z| %.2f",
                                   r.mean_diff, r.se_diff, r.z, worst_bin)};
}

Outcome markov_dichotomy() {
  const auto grid = TimeGrid::make(std::ldexp(1.0, -8), 0.5);
  auto run = [&](const sim::ModelSpec& m, std::uint64_t seed) {
    const auto ch = lift::functional_channels(m.kernel_b[0], {marchaud(0.05)}, grid);
    const auto e = sim::simulate_with_perturbation(m, grid, 100000, seed, ch);
    markovtest::MarkovOptions o;
    o.n_bins = 64;
    return markovtest::sigma_measurability_test(e, 0.5, o);
  };
  const auto a = run(sim::exponential_control(), 20261016);
  const auto b = run(frac_cir(0.1), 20261017);
  const bool ok_a = a.R < 0.02 && a.verdict == markovtest::Verdict::MarkovConsistent;
  const bool ok_b = b.R_ci_lo > 0.0 && b.verdict == markovtest::Verdict::PathDependent;
  return {ok_a && ok_b, fmt("exponential R = %.5f [%.5f, %.5f] %s; fractional H=0.1 R = %.5f [%.5f, %.5f] %s",
                            a.R, a.R_ci_lo, a.R_ci_hi, markovtest::to_string(a.verdict), b.R, b.R_ci_lo, b.R_ci_hi,
                            markovtest::to_string(b.verdict))};
}

Outcome lift_consistency() {
  const auto grid = TimeGrid::make(1.0 / 128, 1.0);
  const auto xg = lift::default_x_grid(grid);
  sim::SimOptions o;
  o.retain_history = true;
  // models that never hit the square-root boundary, so stored states are the raw sums
  const std::vector<sim::ModelSpec> models{sim::gaussian_fractional(0.3), frac_cir(0.3, 0.1),
                                           sim::exponential_control(1.0, 0.3, 0.3, -0.7, 0.1)};
  double gap = 0.0, flow = 0.0;
  std::size_t cases = 0, trunc = 0;
  bool ok = true;
  std::uint64_t seed = 100;
  for (const auto& m : models) {
    const auto e = sim::simulate_sve(m, grid, 20, ++seed, o);
    trunc += e.truncation_events;
    for (std::size_t p = 0; p < 20; ++p)
      for (std::size_t k = 0; k <= grid.n_steps; k += 8) {
        const auto st = lift::lift_state(e, p, grid.node(k), xg);
        gap = std::max(gap, std::abs(st.at(0, 0) - e.x(p, k)));
        for (double s : {1.0 / 128, 0.125, 0.25}) {
          if (grid.node(k) + s > grid.horizon() + 1e-12) continue;
          const auto fr = lift::flow_check(e, p, grid.node(k), s, xg);
          ok = ok && fr.residual < 1e-12 * fr.scale;
          flow = std::max(flow, fr.residual / fr.scale);
          ++cases;
        }
      }
  }
  ok = ok && gap == 0.0 && trunc == 0;
  return {ok, fmt("max |X_t(0) - X_t| = %.1e (want 0); max flow residual / scale = %.2e over %zu (path, t, s) "
                  "(want < 1e-12); truncations %zu",
                  gap, flow, cases, trunc)};
}

Outcome rank_dichotomy() {
  const auto grid = TimeGrid::make(1.0 / 128, 0.5);
  auto run = [&](const sim::ModelSpec& m, std::initializer_list<double> orders) {
    const auto ch = lift::functional_channels(m.kernel_b[0], marchaud_orders(orders), grid);
    const auto e = sim::simulate_with_perturbation(m, grid, 2000, 42, ch);
    return lift::covariance_rank(e, 0.5);
  };
  const auto a = run(sim::exponential_control(), {0.05, 0.1, 0.15});
  const auto b = run(frac_cir(0.3), {0.05, 0.1, 0.15, 0.2});
  const double tol = lift::RankOptions{}.zero_tol;
  const bool ok_a = a.rank == 1 && a.ci_lo[1] <= tol;
  bool ok_b = b.rank == 4;
  for (double lo : b.ci_lo) ok_b = ok_b && lo > tol;
  return {ok_a && ok_b, fmt("exponential N=3 rank %zu (lambda2 = %.1e, CI [%.1e, %.1e]); fractional N=4 rank %zu "
                            "(lambda4 = %.3e, CI [%.3e, %.3e])",
                            a.rank, a.eigenvalues[1], a.ci_lo[1], a.ci_hi[1], b.rank, b.eigenvalues[3], b.ci_lo[3],
                            b.ci_hi[3])};
}

Outcome mc_sanity() {
  const std::size_t P = 100000;
  // Gaussian fractional variance, variance-exact weights
  auto gm = sim::gaussian_fractional(0.1);
  gm.mode = sim::WeightMode::VarianceExact;
  const auto g1 = TimeGrid::make(std::ldexp(1.0, -7), 1.0);
  const auto e1 = sim::simulate_sve(gm, g1, P, 31);
  const std::size_t n1 = g1.n_steps;
  double s = 0.0, s2 = 0.0;
  for (std::size_t p = 0; p < P; ++p) {
    const double x = e1.x(p, n1) - e1.x(p, 0);
    s += x;
    s2 += x * x;
  }
  const double mean = s / P, var = s2 / P - mean * mean;
  double s4 = 0.0;
  for (std::size_t p = 0; p < P; ++p) {
    const double c = e1.x(p, n1) - e1.x(p, 0) - mean;
    s4 += (c * c - var) * (c * c - var);
  }
  const double var_se = std::sqrt(s4 / P) / std::sqrt(static_cast<double>(P));
  const double var_exact = kernels::integral_sq(gm.kernel_sigma[0], 0.0, 1.0);
  const double zv = (var - var_exact) / var_se;

  // CIR mean against m(t) = x0 + (b + beta x0) int_0^t E_K
  const auto cm = frac_cir(0.3);
  const auto g2 = TimeGrid::make(std::ldexp(1.0, -9), 1.0);
  const auto e2 = sim::simulate_sve(cm, g2, P, 32);
  const auto tb = resolvents::resolvent_EK(cm.kernel_b[0], -0.7, g2);
  double ie = 0.0;
  for (std::size_t i = 1; i <= g2.n_steps; ++i) ie += tb.EK_cell[i] * g2.dt;
  const double m_t = 0.3 + (0.3 - 0.7 * 0.3) * ie;
  double a = 0.0, a2 = 0.0;
  for (std::size_t p = 0; p < P; ++p) {
    const double x = e2.x(p, g2.n_steps);
    a += x;
    a2 += x * x;
  }
  const double mc = a / P, mc_se = std::sqrt((a2 / P - mc * mc) / P);
  const double zm = (mc - m_t) / mc_se;
  return {std::abs(zv) < 3.0 && std::abs(zm) < 3.0,
          fmt("Gaussian H=0.1 Var X_1 = %.5f vs %.5f (z %.2f); CIR H=0.3 E X_1 = %.6f vs m(1) = %.6f (z %.2f)", var,
              var_exact, zv, mc, m_t, zm)};
}

Outcome balance() {
  gram::BalanceParams a;
  a.H_b = 0.3;
  a.H_sigma = 0.3;
  const auto ra = gram::balance_check(a);

  gram::BalanceParams b;
  b.gamma_star = {1.0};
  b.gamma = 0.5;
  const auto rb = gram::balance_check(b);

  gram::BalanceParams c;
  c.H_b = 0.1;
  c.H_sigma = 0.6;
  const auto rc = gram::balance_check(c);
  gram::BalanceParams c2 = c;
  c2.H_b = 0.6;
  c2.H_sigma = 0.1;
  const auto rc2 = gram::balance_check(c2);

  const bool ok = ra.pass && !rb.pass && !rc.pass && !rc2.pass;
  return {ok, fmt("H_b=H_s=0.3 %s (margin %+.3f); gamma*=1, gamma=1/2 %s (margin %+.3f); |H_b-H_s|=1/2 %s/%s "
                  "(margins %+.3f, %+.3f)",
                  ra.pass ? "pass" : "fail", ra.checks[0].margin, rb.pass ? "pass" : "fail", rb.checks[0].margin,
                  rc.pass ? "pass" : "fail", rc2.pass ? "pass" : "fail", rc.checks[0].margin, rc2.checks[0].margin)};
}

struct Criterion {
  int id;
  const char* name;
  double limit_s;
  std::function<Outcome()> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> list{
      {1, "Gram exponent, singular pair", 5, gram_singular},
      {2, "Gram exponent, regular pair", 5, gram_regular},
      {3, "Marchaud stability constant", 1, marchaud_stability},
      {4, "exponential eigenrelation", 1, exponential_eigenrelation},
      {5, "resolvent identity", 10, resolvent_identity},
      {6, "K_z exactness and sandwich", 10, kz_exactness},
      {7, "conditional-mean formula", 300, conditional_mean},
      {8, "Markov dichotomy", 600, markov_dichotomy},
      {9, "lift consistency", 30, lift_consistency},
      {10, "covariance rank dichotomy", 300, rank_dichotomy},
      {11, "Monte Carlo sanity", 120, mc_sanity},
      {12, "balance checker", 1, balance},
  };
  int failures = 0;
  for (const auto& c : list) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const Error& e) {
      o = {false, std::string("error ") + e.what()};
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs < c.limit_s;
    const bool pass = o.pass && in_time;
    failures += pass ? 0 : 1;
    std::printf("%s  criterion %2d  %-30s %8.2fs (limit %gs%s)  %s\n", pass ? "PASS" : "FAIL", c.id, c.name, secs,
                c.limit_s, in_time ? "" : ", exceeded", o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria failed\n", failures, list.size());
  return failures == 0 ? 0 : 1;
}
