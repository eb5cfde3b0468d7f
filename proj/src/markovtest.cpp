#include "volterra/markovtest.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <boost/math/distributions/normal.hpp>

#include "volterra/error.hpp"
#include "volterra/parallel.hpp"
#include "volterra/rng.hpp"

namespace volterra::markovtest {

const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::MarkovConsistent: return "MarkovConsistent";
    case Verdict::PathDependent: return "PathDependent";
    case Verdict::Inconclusive: return "Inconclusive";
  }
  return "?";
}

namespace {

double normal_quantile(double level) {
  return boost::math::quantile(boost::math::normal_distribution<double>(), 0.5 + 0.5 * level);
}

std::vector<std::size_t> sorted_order(const std::vector<double>& x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  return idx;
}

// equal-count bins over the sorted values xs with multiplicities cnt; a bin only closes where
// the value changes, so atoms are never split. returns the bin id of every sorted position.
std::vector<std::size_t> bin_ids(const std::vector<double>& xs, const std::vector<double>& cnt, std::size_t B,
                                 std::size_t& n_bins_out) {
  const double total = std::accumulate(cnt.begin(), cnt.end(), 0.0);
  std::vector<std::size_t> id(xs.size());
  std::size_t bin = 0, next = 1;
  double cum = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    id[i] = bin;
    cum += cnt[i];
    const double target = total * static_cast<double>(next) / static_cast<double>(B);
    if (next < B && cum >= target - 1e-9 && i + 1 < xs.size() && xs[i + 1] != xs[i]) {
      ++bin;
      while (next < B && cum >= total * static_cast<double>(next) / static_cast<double>(B) - 1e-9) ++next;
    }
  }
  n_bins_out = xs.empty() ? 0 : bin + 1;
  return id;
}

struct Ratio {
  double R = 0.0;
  std::size_t bins = 0;
  std::vector<double> share, center;
};

// R with multiplicities; zs is z in sorted-x order, centered
Ratio ratio_weighted(const std::vector<double>& xs, const std::vector<double>& zs, const std::vector<double>& cnt,
                     std::size_t B, bool details) {
  Ratio r;
  const auto id = bin_ids(xs, cnt, B, r.bins);
  std::vector<double> n(r.bins, 0.0), s(r.bins, 0.0);
  double N = 0.0, S = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    n[id[i]] += cnt[i];
    s[id[i]] += cnt[i] * zs[i];
    N += cnt[i];
    S += cnt[i] * zs[i];
  }
  const double mean = S / N;
  double tot = 0.0;
  std::vector<double> within(r.bins, 0.0);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (cnt[i] == 0.0) continue;
    const double m = s[id[i]] / n[id[i]];
    within[id[i]] += cnt[i] * (zs[i] - m) * (zs[i] - m);
    tot += cnt[i] * (zs[i] - mean) * (zs[i] - mean);
  }
  const double w = std::accumulate(within.begin(), within.end(), 0.0);
  r.R = tot > 0.0 ? std::clamp(w / tot, 0.0, 1.0) : 0.0;
  if (details) {
    r.share.resize(r.bins);
    r.center.assign(r.bins, 0.0);
    for (std::size_t b = 0; b < r.bins; ++b) r.share[b] = tot > 0.0 ? within[b] / tot : 0.0;
    // median of each bin (unit multiplicities)
    std::size_t start = 0;
    for (std::size_t i = 1; i <= xs.size(); ++i)
      if (i == xs.size() || id[i] != id[start]) {
        r.center[id[start]] = xs[start + (i - 1 - start) / 2];
        start = i;
      }
  }
  return r;
}

struct Sorted {
  std::vector<double> xs, zs;
};

Sorted sort_pair(const std::vector<double>& x, const std::vector<double>& z) {
  const auto ord = sorted_order(x);
  Sorted s;
  s.xs.resize(x.size());
  s.zs.resize(x.size());
  double mz = 0.0;
  for (double v : z) mz += v;
  mz /= static_cast<double>(z.size());
  for (std::size_t i = 0; i < ord.size(); ++i) {
    s.xs[i] = x[ord[i]];
    s.zs[i] = z[ord[i]] - mz;
  }
  return s;
}

double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const std::size_t i = static_cast<std::size_t>(std::floor(pos));
  const std::size_t j = std::min(i + 1, v.size() - 1);
  return v[i] + (pos - static_cast<double>(i)) * (v[j] - v[i]);
}

}  // namespace

double variance_ratio(const std::vector<double>& x, const std::vector<double>& z, std::size_t n_bins) {
  if (x.size() != z.size() || x.empty()) fail(ErrorCode::InvalidParams, "x and z must be nonempty and equal length");
  if (n_bins == 0) fail(ErrorCode::InvalidParams, "n_bins must be positive");
  const auto s = sort_pair(x, z);
  return ratio_weighted(s.xs, s.zs, std::vector<double>(x.size(), 1.0), n_bins, false).R;
}

GammaMass gamma_sigma_mass(const PathEnsemble& e, double t, double level, double threshold) {
  if (!(level > 0.0 && level < 1.0)) fail(ErrorCode::InvalidParams, "level must lie in (0, 1)");
  const std::size_t k = e.grid.index_of(t), d = e.d;
  const auto& m = e.model;
  double chol_det2 = 1.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double l = m.noise_chol.empty() ? 1.0 : m.noise_chol[i * d + i];
    chol_det2 *= l * l;
  }
  GammaMass g;
  g.n = e.n_paths;
  std::vector<double> x(d);
  double s1 = 0.0, s2 = 0.0;
  for (std::size_t p = 0; p < e.n_paths; ++p) {
    for (std::size_t i = 0; i < d; ++i) x[i] = e.x(p, k, i);
    double det = chol_det2;
    for (std::size_t i = 0; i < d; ++i) {
      const double s = m.diffusion_coef(i, x.data());
      det *= s * s;
    }
    if (std::abs(det) > threshold) ++g.hits;
    s1 += x[0];
    s2 += x[0] * x[0];
  }
  const double n = static_cast<double>(g.n), ph = static_cast<double>(g.hits) / n;
  const double z = normal_quantile(level), z2 = z * z;
  const double centre = (ph + z2 / (2 * n)) / (1 + z2 / n);
  const double half = z / (1 + z2 / n) * std::sqrt(ph * (1 - ph) / n + z2 / (4 * n * n));
  g.mass = ph;
  g.ci_lo = std::max(0.0, centre - half);
  g.ci_hi = std::min(1.0, centre + half);
  if (m.square_root(0) && s2 > 0.0) g.paley_zygmund = (s1 / n) * (s1 / n) / (s2 / n);
  return g;
}

MarkovTestReport sigma_measurability_test(const PathEnsemble& e, double t, const MarkovOptions& opt) {
  if (opt.z_column >= e.n_pert) fail(ErrorCode::InvalidParams, "ensemble has no such Z column");
  if (opt.coordinate >= e.d) fail(ErrorCode::InvalidParams, "coordinate out of range");
  if (opt.n_bins < 2) fail(ErrorCode::InvalidParams, "need at least 2 bins");
  if (opt.n_boot < 10) fail(ErrorCode::InvalidParams, "n_boot must be at least 10");
  if (!(opt.level > 0.0 && opt.level < 1.0)) fail(ErrorCode::InvalidParams, "level must lie in (0, 1)");
  if (e.n_paths < 50 * opt.n_bins)
    fail(ErrorCode::EmptyBin, std::to_string(e.n_paths) + " paths give fewer than 50 per bin at " +
                                  std::to_string(opt.n_bins) + " bins");
  const std::size_t k = e.grid.index_of(t), P = e.n_paths;
  std::vector<double> x(P), z(P);
  for (std::size_t p = 0; p < P; ++p) {
    x[p] = e.x(p, k, opt.coordinate);
    z[p] = e.z(p, k, opt.z_column);
  }
  const auto s = sort_pair(x, z);
  const std::vector<double> ones(P, 1.0);

  MarkovTestReport r;
  r.t = e.grid.node(k);
  r.n_paths = P;
  r.n_boot = opt.n_boot;
  r.level = opt.level;
  r.eps_markov = opt.eps_markov;
  const auto main = ratio_weighted(s.xs, s.zs, ones, opt.n_bins, true);
  r.R = main.R;
  r.n_bins = main.bins;
  r.bin_center = main.center;
  r.bin_share = main.share;
  if (main.bins < opt.n_bins)
    r.warnings.push_back("atoms in X_t merged " + std::to_string(opt.n_bins) + " bins into " +
                         std::to_string(main.bins));
  r.refinement_available = P >= 50 * 2 * opt.n_bins;
  r.R_refined = r.refinement_available ? ratio_weighted(s.xs, s.zs, ones, 2 * opt.n_bins, false).R
                                       : std::numeric_limits<double>::quiet_NaN();
  if (!r.refinement_available) r.warnings.push_back("too few paths to double the bins; refinement skipped");

  // bootstrap over paths: multiplicities on the sorted sample
  std::vector<double> boot(opt.n_boot);
  parallel_for(opt.n_boot, opt.workers, [&](std::size_t b) {
    std::vector<double> cnt(P, 0.0);
    for (std::size_t i = 0; i < P; ++i) {
      const double u = rng::uniform(opt.seed, b, static_cast<std::uint32_t>(i), 0x4d41524bu);
      cnt[std::min(P - 1, static_cast<std::size_t>(u * static_cast<double>(P)))] += 1.0;
    }
    boot[b] = ratio_weighted(s.xs, s.zs, cnt, opt.n_bins, false).R;
  });
  const double lo = 0.5 * (1.0 - opt.level);
  r.R_ci_lo = percentile(boot, lo);
  r.R_ci_hi = percentile(boot, 1.0 - lo);
  r.gamma = gamma_sigma_mass(e, t, opt.level);

  const bool refined_down = r.refinement_available && r.R_refined < r.R;
  const bool stable = r.refinement_available && std::abs(r.R_refined - r.R) <= opt.stability * r.R;
  if (r.R < opt.eps_markov && refined_down)
    r.verdict = Verdict::MarkovConsistent;
  else if (r.R_ci_lo > 0.0 && r.gamma.mass > 0.0 && stable)
    r.verdict = Verdict::PathDependent;
  else
    r.verdict = Verdict::Inconclusive;
  return r;
}

CondMeanReport conditional_mean_check(const sim::ModelSpec& model, const resolvents::ResolventTables& tables,
                                      const resolvents::PiTable& pi, double t, double T, std::size_t n_outer,
                                      std::size_t n_inner, std::uint64_t seed, const CondMeanOptions& opt) {
  model.validate();
  if (model.d != 1) fail(ErrorCode::InvalidParams, "the conditional-mean formula needs a scalar model");
  if (model.g[0].family != kernels::Family::Constant)
    fail(ErrorCode::InvalidParams, "the conditional-mean formula needs a constant initial value");
  if (!tables.has_E || !tables.has_L) fail(ErrorCode::InvalidParams, "tables need both L and E_K");
  if (std::abs(tables.beta - model.beta[0]) > 1e-15 * (1.0 + std::abs(model.beta[0])))
    fail(ErrorCode::InvalidParams, "tables were built for a different beta");
  if (n_outer < 2 * opt.n_bins) fail(ErrorCode::TooFewPaths, "need at least two outer paths per bin");
  const auto& g = tables.grid;
  const double x0 = kernels::eval(model.g[0], 0.0);
  const auto c = resolvents::cond_exp_coeffs(tables, pi, t, T, model.b[0], x0);

  sim::SimOptions so;
  so.retain_history = true;
  so.workers = opt.workers;
  const std::size_t N = g.index_of(T);
  const auto sub = resolvents::TimeGrid{g.dt, N};
  const auto e = sim::simulate_sve(model, sub, n_outer, seed, so);
  const auto br = sim::branch_paths(e, t, T, n_inner, seed, 0, opt.workers);

  CondMeanReport r;
  r.t = t;
  r.T = T;
  r.n_outer = n_outer;
  r.n_inner = n_inner;
  r.formula.resize(n_outer);
  r.nested = br.mean;
  r.nested_se = br.stderr_;
  std::vector<double> d(n_outer), xt(n_outer), path(c.k + 1);
  for (std::size_t p = 0; p < n_outer; ++p) {
    for (std::size_t j = 0; j <= c.k; ++j) path[j] = e.x(p, j);
    r.formula[p] = resolvents::cond_exp_apply(c, path);
    d[p] = r.nested[p] - r.formula[p];
    xt[p] = e.x(p, c.k);
  }
  auto mean_se = [](const std::vector<double>& v, double& mean, double& se) {
    const double n = static_cast<double>(v.size());
    mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    se = std::sqrt(ss / (n - 1.0) / n);
  };
  mean_se(d, r.mean_diff, r.se_diff);
  r.z = r.se_diff > 0.0 ? r.mean_diff / r.se_diff : 0.0;

  const auto ord = sorted_order(xt);
  for (std::size_t b = 0; b < opt.n_bins; ++b) {
    const std::size_t lo = b * n_outer / opt.n_bins, hi = (b + 1) * n_outer / opt.n_bins;
    std::vector<double> db;
    for (std::size_t i = lo; i < hi; ++i) db.push_back(d[ord[i]]);
    double m, se;
    mean_se(db, m, se);
    r.bin_center.push_back(xt[ord[lo + (hi - lo) / 2]]);
    r.bin_z.push_back(se > 0.0 ? m / se : 0.0);
  }
  return r;
}

}  // namespace volterra::markovtest
