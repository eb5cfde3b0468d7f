#include "volterra/sim.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <fstream>

#include "volterra/error.hpp"
#include "volterra/parallel.hpp"
#include "volterra/rng.hpp"

namespace volterra::sim {

namespace {

// sum_j w[j] u[j], j < n, in four lanes; the forward curve repeats this exact order
inline double dot4(const double* w, const double* u, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    s0 += w[j] * u[j];
    s1 += w[j + 1] * u[j + 1];
    s2 += w[j + 2] * u[j + 2];
    s3 += w[j + 3] * u[j + 3];
  }
  for (; j < n; ++j) s0 += w[j] * u[j];
  return (s0 + s1) + (s2 + s3);
}

// sum_{j<n} w[n-j] u[j] with w stored reversed (rw[i] = w[N-i]) so the loop is contiguous
inline double conv(const double* rw, std::size_t N, const double* u, std::size_t n) {
  return dot4(rw + (N - n), u, n);
}

std::vector<double> reversed(const std::vector<double>& w) {
  // w[1..N] -> rw[0..N-1] with rw[i] = w[N - i]; w[0] is unused
  const std::size_t N = w.size() - 1;
  std::vector<double> rw(N + 1, 0.0);
  for (std::size_t i = 0; i < N; ++i) rw[i] = w[N - i];
  return rw;
}

// geometric representation W_m = sum c q^(m-1) when the kernel is an exponential sum
struct Geometric {
  std::vector<double> c, q;
};

std::optional<Geometric> geometric_drift(const KernelSpec& k, double dt) {
  auto ex = kernels::exp_terms(k);
  if (!ex) return std::nullopt;
  Geometric g;
  for (const auto& e : *ex) {
    g.q.push_back(std::exp(-e.rate * dt));
    g.c.push_back(e.rate == 0.0 ? e.weight * dt : e.weight * (-std::expm1(-e.rate * dt)) / e.rate);
  }
  return g;
}

std::optional<Geometric> geometric_diffusion(const KernelSpec& k, double dt, WeightMode mode) {
  if (mode == WeightMode::CellAverage) {
    auto g = geometric_drift(k, dt);
    if (g)
      for (auto& c : g->c) c /= dt;
    return g;
  }
  auto ex = kernels::exp_terms(k);
  if (!ex || ex->size() != 1) return std::nullopt;
  const auto e = ex->front();
  Geometric g;
  g.q.push_back(std::exp(-e.rate * dt));
  const double m2 = e.rate == 0.0 ? 1.0 : (-std::expm1(-2.0 * e.rate * dt)) / (2.0 * e.rate * dt);
  g.c.push_back(std::copysign(std::abs(e.weight) * std::sqrt(m2), e.weight));
  return g;
}

struct Channel {
  std::vector<double> rw;             // reversed weights
  std::optional<Geometric> geo;       // fast path when set
};

struct Setup {
  std::size_t d = 1, N = 0, P = 0;
  std::vector<Channel> xb, xs;        // per coordinate
  std::vector<Channel> zb, zs;        // per perturbation
  std::vector<double> g;              // [node][coordinate]
  std::vector<double> L;              // d x d
};

void check_causal_table(const KernelSpec& k, const TimeGrid& grid) {
  if (k.family == kernels::Family::TableDefined && k.table->t.back() < grid.horizon() * (1 - 1e-12))
    fail(ErrorCode::InvalidParams, "perturbation table does not cover the horizon");
}

}  // namespace

const char* to_string(WeightMode m) { return m == WeightMode::CellAverage ? "cell-average" : "variance-exact"; }

WeightMode weight_mode_from_string(const std::string& s) {
  if (s == "cell-average") return WeightMode::CellAverage;
  if (s == "variance-exact") return WeightMode::VarianceExact;
  fail(ErrorCode::InvalidParams, "unknown weight mode '" + s + "'");
}

const char* to_string(DiffusionKind k) {
  switch (k) {
    case DiffusionKind::Constant: return "constant";
    case DiffusionKind::Affine: return "affine";
    case DiffusionKind::SquareRoot: return "square-root";
  }
  return "?";
}

DiffusionKind diffusion_kind_from_string(const std::string& s) {
  for (auto k : {DiffusionKind::Constant, DiffusionKind::Affine, DiffusionKind::SquareRoot})
    if (s == to_string(k)) return k;
  fail(ErrorCode::InvalidParams, "unknown diffusion kind '" + s + "'");
}

void ModelSpec::validate() const {
  if (d == 0) fail(ErrorCode::InvalidParams, "model dimension must be positive");
  auto need = [&](std::size_t n, std::size_t want, const char* what) {
    if (n != want) fail(ErrorCode::InvalidParams, std::string(what) + " has the wrong size");
  };
  need(kernel_b.size(), d, "kernel_b");
  need(kernel_sigma.size(), d, "kernel_sigma");
  need(b.size(), d, "b");
  need(beta.size(), d * d, "beta");
  need(diffusion.size(), d, "diffusion");
  need(g.size(), d, "g");
  if (!noise_chol.empty()) {
    need(noise_chol.size(), d * d, "noise_chol");
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = i + 1; j < d; ++j)
        if (noise_chol[i * d + j] != 0.0) fail(ErrorCode::InvalidParams, "noise_chol must be lower triangular");
  }
  for (const auto& k : kernel_b) kernels::validate(k);
  for (const auto& k : kernel_sigma) kernels::validate(k);
  for (const auto& k : g) kernels::validate(k);
  for (double v : b)
    if (!std::isfinite(v)) fail(ErrorCode::InvalidParams, "b must be finite");
  for (double v : beta)
    if (!std::isfinite(v)) fail(ErrorCode::InvalidParams, "beta must be finite");
  for (const auto& t : diffusion) {
    if (t.source >= d) fail(ErrorCode::InvalidParams, "diffusion source out of range");
    if (!std::isfinite(t.sigma0) || !std::isfinite(t.sigma1)) fail(ErrorCode::InvalidParams, "sigma must be finite");
    if (t.kind == DiffusionKind::SquareRoot && t.sigma0 < 0.0)
      fail(ErrorCode::InvalidParams, "square-root diffusion needs sigma >= 0");
  }
  if (!(blowup_bound > 0.0)) fail(ErrorCode::InvalidParams, "blowup_bound must be positive");
  for (std::size_t i = 0; i < d; ++i) {
    if (!square_root(i)) continue;
    if (kernels::eval(g[i], 0.0) < 0.0) fail(ErrorCode::InvalidParams, "square-root model needs x0 >= 0");
    if (b[i] < 0.0) fail(ErrorCode::InvalidParams, "square-root model needs b >= 0");
    for (std::size_t j = 0; j < d; ++j)
      if (j != i && beta[i * d + j] < 0.0)
        fail(ErrorCode::InvalidParams, "square-root model needs nonnegative off-diagonal beta");
  }
}

bool ModelSpec::square_root(std::size_t i) const {
  return diffusion[i].kind == DiffusionKind::SquareRoot && diffusion[i].source == i;
}

double ModelSpec::drift(std::size_t i, const double* x) const {
  double s = b[i];
  for (std::size_t j = 0; j < d; ++j) s += beta[i * d + j] * x[j];
  return s;
}

double ModelSpec::diffusion_coef(std::size_t i, const double* x) const {
  const auto& t = diffusion[i];
  const double v = x[t.source];
  switch (t.kind) {
    case DiffusionKind::Constant: return t.sigma0;
    case DiffusionKind::Affine: return t.sigma0 + t.sigma1 * v;
    case DiffusionKind::SquareRoot: return t.sigma0 * std::sqrt(std::max(v, 0.0));
  }
  return 0.0;
}

ModelSpec volterra_cir(const KernelSpec& k, double x0, double b, double beta, double sigma) {
  ModelSpec m;
  m.name = "volterra-cir";
  m.d = 1;
  m.kernel_b = {k};
  m.kernel_sigma = {k};
  m.b = {b};
  m.beta = {beta};
  m.diffusion = {DiffusionTerm{DiffusionKind::SquareRoot, sigma, 0.0, 0}};
  m.g = {KernelSpec::constant(x0)};
  m.validate();
  return m;
}

ModelSpec rough_heston(double H, double lambda, double theta, double nu, double rho, double v0, double y0, double r) {
  if (!(std::abs(rho) <= 1.0)) fail(ErrorCode::InvalidParams, "correlation must lie in [-1, 1]");
  ModelSpec m;
  m.name = "rough-heston";
  m.d = 2;
  // coordinate 0: variance V, coordinate 1: log-price Y with an ordinary (constant) kernel
  m.kernel_b = {KernelSpec::fractional(H), KernelSpec::constant(1.0)};
  m.kernel_sigma = m.kernel_b;
  m.b = {lambda * theta, r};
  m.beta = {-lambda, 0.0, -0.5, 0.0};
  m.diffusion = {DiffusionTerm{DiffusionKind::SquareRoot, nu, 0.0, 0},
                 DiffusionTerm{DiffusionKind::SquareRoot, 1.0, 0.0, 0}};
  m.noise_chol = {1.0, 0.0, rho, std::sqrt(1.0 - rho * rho)};
  m.g = {KernelSpec::constant(v0), KernelSpec::constant(y0)};
  m.validate();
  return m;
}

ModelSpec gaussian_fractional(double H, double sigma) {
  ModelSpec m;
  m.name = "gaussian-fractional";
  m.kernel_b = {KernelSpec::fractional(H)};
  m.kernel_sigma = m.kernel_b;
  m.b = {0.0};
  m.beta = {0.0};
  m.diffusion = {DiffusionTerm{DiffusionKind::Constant, sigma, 0.0, 0}};
  m.g = {KernelSpec::constant(0.0)};
  m.mode = WeightMode::VarianceExact;
  m.validate();
  return m;
}

ModelSpec exponential_control(double rate, double x0, double b, double beta, double sigma) {
  auto m = volterra_cir(KernelSpec::exponential(rate), x0, b, beta, sigma);
  m.name = "exponential-control";
  return m;
}

ModelSpec brownian() {
  ModelSpec m;
  m.name = "brownian";
  m.kernel_b = {KernelSpec::constant(1.0)};
  m.kernel_sigma = m.kernel_b;
  m.b = {0.0};
  m.beta = {0.0};
  m.diffusion = {DiffusionTerm{DiffusionKind::Constant, 1.0, 0.0, 0}};
  m.g = {KernelSpec::constant(0.0)};
  m.validate();
  return m;
}

std::vector<double> drift_weights(const KernelSpec& k, const TimeGrid& grid) {
  std::vector<double> w(grid.n_steps + 1, 0.0);
  for (std::size_t m = 1; m <= grid.n_steps; ++m) w[m] = kernels::integral(k, grid.node(m - 1), grid.node(m));
  return w;
}

std::vector<double> diffusion_weights(const KernelSpec& k, const TimeGrid& grid, WeightMode mode) {
  std::vector<double> w(grid.n_steps + 1, 0.0);
  for (std::size_t m = 1; m <= grid.n_steps; ++m) {
    const double a = grid.node(m - 1), b = grid.node(m);
    if (mode == WeightMode::CellAverage) {
      w[m] = kernels::integral(k, a, b) / grid.dt;
    } else {
      const double mean = kernels::integral(k, a, b);
      w[m] = std::copysign(std::sqrt(kernels::integral_sq(k, a, b) / grid.dt), mean);
    }
  }
  return w;
}

namespace {

Setup make_setup(const ModelSpec& model, const TimeGrid& grid, const std::vector<Perturbation>& perts,
                 bool fast, std::vector<double>& wb_out, std::vector<double>& ws_out) {
  model.validate();
  Setup s;
  s.d = model.d;
  s.N = grid.n_steps;
  s.P = perts.size();
  if (s.N == 0) fail(ErrorCode::InvalidParams, "grid has no steps");
  wb_out.assign(s.d * (s.N + 1), 0.0);
  ws_out.assign(s.d * (s.N + 1), 0.0);
  for (std::size_t i = 0; i < s.d; ++i) {
    auto wb = drift_weights(model.kernel_b[i], grid);
    auto ws = diffusion_weights(model.kernel_sigma[i], grid, model.mode);
    std::copy(wb.begin(), wb.end(), wb_out.begin() + i * (s.N + 1));
    std::copy(ws.begin(), ws.end(), ws_out.begin() + i * (s.N + 1));
    Channel cb{reversed(wb), fast ? geometric_drift(model.kernel_b[i], grid.dt) : std::nullopt};
    Channel cs{reversed(ws), fast ? geometric_diffusion(model.kernel_sigma[i], grid.dt, model.mode) : std::nullopt};
    s.xb.push_back(std::move(cb));
    s.xs.push_back(std::move(cs));
  }
  for (const auto& p : perts) {
    if (p.coordinate >= s.d) fail(ErrorCode::InvalidParams, "perturbation coordinate out of range");
    check_causal_table(p.kb, grid);
    check_causal_table(p.ks, grid);
    s.zb.push_back(Channel{reversed(drift_weights(p.kb, grid)), std::nullopt});
    s.zs.push_back(Channel{reversed(diffusion_weights(p.ks, grid, model.mode)), std::nullopt});
  }
  s.g.resize((s.N + 1) * s.d);
  for (std::size_t n = 0; n <= s.N; ++n)
    for (std::size_t i = 0; i < s.d; ++i) s.g[n * s.d + i] = kernels::eval(model.g[i], grid.node(n));
  s.L.assign(s.d * s.d, 0.0);
  for (std::size_t i = 0; i < s.d; ++i) s.L[i * s.d + i] = 1.0;
  if (!model.noise_chol.empty()) s.L = model.noise_chol;
  return s;
}

// geometric-state convolution: S_t <- q S_t + u
struct GeoState {
  std::vector<double> S;
  void reset(std::size_t n) { S.assign(n, 0.0); }
};

}  // namespace

PathEnsemble simulate_with_perturbation(const ModelSpec& model, const TimeGrid& grid, std::size_t n_paths,
                                        std::uint64_t seed, const std::vector<Perturbation>& perturbations,
                                        const SimOptions& opt) {
  if (n_paths == 0) fail(ErrorCode::InvalidParams, "n_paths must be positive");
  PathEnsemble e;
  e.grid = grid;
  e.model = model;
  e.perturbations = perturbations;
  e.n_paths = n_paths;
  e.d = model.d;
  e.n_pert = perturbations.size();
  e.seed = seed;
  e.retained = opt.retain_history;
  // the lift and branching reuse the direct weights, so retained runs take the direct route
  const bool fast = opt.fast_exponential && !opt.retain_history;
  const Setup s = make_setup(model, grid, perturbations, fast, e.w_b, e.w_s);
  const std::size_t d = s.d, N = s.N, P = s.P, nodes = N + 1;
  e.X.assign(n_paths * nodes * d, 0.0);
  e.Z.assign(n_paths * nodes * P, 0.0);
  if (e.retained) {
    e.dM.assign(n_paths * nodes * d, 0.0);
    e.drift.assign(n_paths * nodes * d, 0.0);
    e.diff.assign(n_paths * nodes * d, 0.0);
  }
  const double sdt = std::sqrt(grid.dt);
  std::atomic<std::size_t> truncations{0};
  std::atomic<bool> blown{false};

  parallel_for(n_paths, opt.workers, [&](std::size_t p) {
    const rng::NormalStream ns(seed, p, 0);
    std::vector<double> ub(d * N), us(d * N);  // [coordinate][step]
    std::vector<double> x(d), dB(d), dM(d);
    std::vector<GeoState> gb(d), gs(d);
    for (std::size_t i = 0; i < d; ++i) {
      if (s.xb[i].geo) gb[i].reset(s.xb[i].geo->q.size());
      if (s.xs[i].geo) gs[i].reset(s.xs[i].geo->q.size());
    }
    std::size_t local_trunc = 0;
    const std::uint32_t blocks_per_step = static_cast<std::uint32_t>((d + 1) / 2);
    for (std::size_t n = 0; n <= N; ++n) {
      for (std::size_t i = 0; i < d; ++i) {
        double v = s.g[n * d + i];
        if (s.xb[i].geo) {
          for (std::size_t t = 0; t < gb[i].S.size(); ++t) v += s.xb[i].geo->c[t] * gb[i].S[t];
        } else {
          v += conv(s.xb[i].rw.data(), N, ub.data() + i * N, n);
        }
        if (s.xs[i].geo) {
          for (std::size_t t = 0; t < gs[i].S.size(); ++t) v += s.xs[i].geo->c[t] * gs[i].S[t];
        } else {
          v += conv(s.xs[i].rw.data(), N, us.data() + i * N, n);
        }
        if (!std::isfinite(v) || std::abs(v) > model.blowup_bound) blown = true;
        if (model.square_root(i) && v < 0.0) {
          ++local_trunc;
          v = 0.0;
        }
        x[i] = v;
        e.X[(p * nodes + n) * d + i] = v;
      }
      if (blown) return;
      for (std::size_t q = 0; q < P; ++q) {
        const std::size_t c = perturbations[q].coordinate;
        e.Z[(p * nodes + n) * P + q] =
            conv(s.zb[q].rw.data(), N, ub.data() + c * N, n) + conv(s.zs[q].rw.data(), N, us.data() + c * N, n);
      }
      if (n == N) break;
      ns.fill(static_cast<std::uint32_t>(n) * blocks_per_step, dB.begin(), d);
      for (std::size_t i = 0; i < d; ++i) {
        double m = 0.0;
        for (std::size_t j = 0; j <= i; ++j) m += s.L[i * d + j] * dB[j];
        dM[i] = m * sdt;
      }
      for (std::size_t i = 0; i < d; ++i) {
        const double bi = model.drift(i, x.data());
        const double si = model.diffusion_coef(i, x.data());
        ub[i * N + n] = bi;
        us[i * N + n] = si * dM[i];
        if (s.xb[i].geo) {
          auto& S = gb[i].S;
          for (std::size_t t = 0; t < S.size(); ++t) S[t] = s.xb[i].geo->q[t] * S[t] + bi;
        }
        if (s.xs[i].geo) {
          auto& S = gs[i].S;
          for (std::size_t t = 0; t < S.size(); ++t) S[t] = s.xs[i].geo->q[t] * S[t] + si * dM[i];
        }
        if (e.retained) {
          const std::size_t at = (p * nodes + n) * d + i;
          e.dM[at] = dM[i];
          e.drift[at] = bi;
          e.diff[at] = si;
        }
      }
    }
    truncations += local_trunc;
  });
  if (blown)
    fail(ErrorCode::NumericalBlowup, "path exceeded the blow-up bound " + std::to_string(model.blowup_bound) +
                                         " (dt too coarse for the parameters?)");
  e.truncation_events = truncations;
  return e;
}

PathEnsemble simulate_sve(const ModelSpec& model, const TimeGrid& grid, std::size_t n_paths, std::uint64_t seed,
                          const SimOptions& opt) {
  return simulate_with_perturbation(model, grid, n_paths, seed, {}, opt);
}

CellWeight forward_curve_weight(const PathEnsemble& e, std::size_t i, double tau, std::size_t j) {
  const auto& g = e.grid;
  const double lo = tau - g.node(j + 1), hi = tau - g.node(j);
  const double m = lo / g.dt;
  const double mr = std::round(m);
  const std::size_t N = g.n_steps;
  if (std::abs(m - mr) < 1e-9 && mr >= 0.0 && mr + 1 <= static_cast<double>(N)) {
    const std::size_t idx = static_cast<std::size_t>(mr) + 1;
    return {e.w_b[i * (N + 1) + idx], e.w_s[i * (N + 1) + idx]};
  }
  if (lo < -1e-12 * g.dt) fail(ErrorCode::InvalidParams, "forward curve evaluated before the cell ends");
  const double a = std::max(lo, 0.0);
  CellWeight w;
  w.b = kernels::integral(e.model.kernel_b[i], a, hi);
  const auto& ks = e.model.kernel_sigma[i];
  if (e.model.mode == WeightMode::CellAverage) {
    w.s = kernels::integral(ks, a, hi) / g.dt;
  } else {
    w.s = std::copysign(std::sqrt(kernels::integral_sq(ks, a, hi) / g.dt), kernels::integral(ks, a, hi));
  }
  return w;
}

std::vector<double> forward_curve(const PathEnsemble& e, std::size_t path, std::size_t k, std::size_t coordinate,
                                  const std::vector<double>& offsets) {
  if (!e.retained) fail(ErrorCode::MissingHistory, "ensemble was simulated without history retention");
  if (path >= e.n_paths || k > e.grid.n_steps || coordinate >= e.d)
    fail(ErrorCode::InvalidParams, "forward curve index out of range");
  const std::size_t nodes = e.nodes(), d = e.d;
  std::vector<double> ub(k), us(k), cb(k), cs(k);
  for (std::size_t j = 0; j < k; ++j) {
    const std::size_t at = (path * nodes + j) * d + coordinate;
    ub[j] = e.drift[at];
    us[j] = e.diff[at] * e.dM[at];
  }
  std::vector<double> out(offsets.size());
  for (std::size_t o = 0; o < offsets.size(); ++o) {
    const double tau = e.grid.node(k) + offsets[o];
    for (std::size_t j = 0; j < k; ++j) {
      const auto w = forward_curve_weight(e, coordinate, tau, j);
      cb[j] = w.b;
      cs[j] = w.s;
    }
    // same association as the simulation: g, then drift, then noise
    double v = kernels::eval(e.model.g[coordinate], tau);
    v += dot4(cb.data(), ub.data(), k);
    v += dot4(cs.data(), us.data(), k);
    out[o] = v;
  }
  return out;
}

BranchResult branch_paths(const PathEnsemble& e, double t, double T, std::size_t n_inner, std::uint64_t seed,
                          std::size_t coordinate, std::size_t workers) {
  if (!e.retained) fail(ErrorCode::MissingHistory, "branching needs an ensemble with retained history");
  if (n_inner < 2) fail(ErrorCode::InvalidParams, "n_inner must be at least 2");
  if (coordinate >= e.d) fail(ErrorCode::InvalidParams, "coordinate out of range");
  const std::size_t k = e.grid.index_of(t), Nt = e.grid.index_of(T);
  if (!(k < Nt)) fail(ErrorCode::InvalidParams, "branching needs t < T");
  const std::size_t d = e.d, N = e.grid.n_steps, nodes = N + 1, L = Nt - k;
  const auto& model = e.model;
  std::vector<std::vector<double>> rwb(d), rws(d);
  for (std::size_t i = 0; i < d; ++i) {
    std::vector<double> wb(e.w_b.begin() + i * nodes, e.w_b.begin() + (i + 1) * nodes);
    std::vector<double> ws(e.w_s.begin() + i * nodes, e.w_s.begin() + (i + 1) * nodes);
    rwb[i] = reversed(wb);
    rws[i] = reversed(ws);
  }
  std::vector<double> L_chol(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) L_chol[i * d + i] = 1.0;
  if (!model.noise_chol.empty()) L_chol = model.noise_chol;
  const double sdt = std::sqrt(e.grid.dt);

  BranchResult r;
  r.k = k;
  r.N = Nt;
  r.x_t.resize(e.n_paths);
  r.mean.resize(e.n_paths);
  r.stderr_.resize(e.n_paths);
  parallel_for(e.n_paths, workers, [&](std::size_t p) {
    // history part of X at t_k + m dt for m = 0..L: the grid-offset forward curve
    std::vector<std::vector<double>> F(d, std::vector<double>(L + 1));
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t m = 0; m <= L; ++m) {
        const std::size_t n = k + m;
        double v = kernels::eval(model.g[i], e.grid.node(n));
        double sb = 0.0, ss = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
          const std::size_t at = (p * nodes + j) * d + i;
          sb += e.w_b[i * nodes + (n - j)] * e.drift[at];
          ss += e.w_s[i * nodes + (n - j)] * e.diff[at] * e.dM[at];
        }
        F[i][m] = v + sb + ss;
      }
    }
    const std::uint32_t blocks_per_step = static_cast<std::uint32_t>((d + 1) / 2);
    std::vector<double> ub(d * L), us(d * L), x(d), dB(d);
    double sum = 0.0, sum2 = 0.0;
    for (std::size_t q = 0; q < n_inner; ++q) {
      const rng::NormalStream ns(seed, p, static_cast<std::uint32_t>(1 + q));
      for (std::size_t i = 0; i < d; ++i) x[i] = e.x(p, k, i);
      for (std::size_t m = 0; m <= L; ++m) {
        if (m > 0) {
          for (std::size_t i = 0; i < d; ++i) {
            // local steps m' < m sit at global cells k + m'; weight index m - m'
            double v = F[i][m] + conv(rwb[i].data() + (N - L), L, ub.data() + i * L, m) +
                       conv(rws[i].data() + (N - L), L, us.data() + i * L, m);
            if (model.square_root(i) && v < 0.0) v = 0.0;
            x[i] = v;
          }
        }
        if (m == L) break;
        ns.fill(static_cast<std::uint32_t>(k + m) * blocks_per_step, dB.begin(), d);
        for (std::size_t i = 0; i < d; ++i) {
          double dm = 0.0;
          for (std::size_t j = 0; j <= i; ++j) dm += L_chol[i * d + j] * dB[j];
          ub[i * L + m] = model.drift(i, x.data());
          us[i * L + m] = model.diffusion_coef(i, x.data()) * dm * sdt;
        }
      }
      sum += x[coordinate];
      sum2 += x[coordinate] * x[coordinate];
    }
    const double n = static_cast<double>(n_inner);
    const double mean = sum / n;
    const double var = std::max(0.0, (sum2 - n * mean * mean) / (n - 1.0));
    r.x_t[p] = e.x(p, k, coordinate);
    r.mean[p] = mean;
    r.stderr_[p] = std::sqrt(var / n);
  });
  return r;
}

void write_binary(const PathEnsemble& e, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::InvalidParams, "cannot open " + path + " for writing");
  auto put64 = [&](std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    f.write(reinterpret_cast<const char*>(b), 8);
  };
  auto putd = [&](double v) {
    std::uint64_t u;
    std::memcpy(&u, &v, 8);
    put64(u);
  };
  put64(e.d);
  put64(e.n_pert);
  put64(e.grid.n_steps);
  put64(e.n_paths);
  for (double v : e.X) putd(v);
  for (double v : e.Z) putd(v);
}

EnsembleDump read_binary(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::InvalidParams, "cannot open " + path);
  auto get64 = [&]() {
    unsigned char b[8];
    if (!f.read(reinterpret_cast<char*>(b), 8)) fail(ErrorCode::InvalidParams, "truncated ensemble file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  };
  auto getd = [&]() {
    const std::uint64_t u = get64();
    double v;
    std::memcpy(&v, &u, 8);
    return v;
  };
  EnsembleDump r;
  r.d = get64();
  r.n_pert = get64();
  r.n_steps = get64();
  r.n_paths = get64();
  const std::uint64_t nodes = r.n_steps + 1;
  r.X.resize(r.n_paths * nodes * r.d);
  r.Z.resize(r.n_paths * nodes * r.n_pert);
  for (auto& v : r.X) v = getd();
  for (auto& v : r.Z) v = getd();
  return r;
}

}  // namespace volterra::sim
