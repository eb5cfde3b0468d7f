#include "cli.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "config.hpp"
#include "volterra/error.hpp"
#include "volterra/gram.hpp"
#include "volterra/lift.hpp"
#include "volterra/markovtest.hpp"
#include "volterra/parallel.hpp"

namespace volterra::cli {

namespace fs = std::filesystem;
using kernels::KernelSpec;

namespace {

constexpr int kOk = 0, kConfig = 2, kNumerical = 3, kVerdict = 4;

struct Context {
  json cfg;
  fs::path out_dir;
  bool csv = true, json_out = true;
  std::size_t workers = 0;
  std::ostream* out = nullptr;
  int exit_code = kOk;
};

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// CSV with a header row, LF endings and 17 significant digits
class Csv {
 public:
  Csv(const fs::path& p, const std::vector<std::string>& header) : f_(p, std::ios::binary) {
    if (!f_) throw ConfigError("", "cannot write " + p.string());
    row_strings(header);
  }
  void row(const std::vector<double>& v) {
    std::vector<std::string> s;
    s.reserve(v.size());
    for (double x : v) s.push_back(num(x));
    row_strings(s);
  }
  void row_strings(const std::vector<std::string>& s) {
    for (std::size_t i = 0; i < s.size(); ++i) f_ << (i ? "," : "") << s[i];
    f_ << '\n';
  }

 private:
  std::ofstream f_;
};

void write_json(const fs::path& p, const json& j) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw ConfigError("", "cannot write " + p.string());
  f << j.dump(2) << '\n';
}

// non-finite values become null; finite doubles are written in shortest round-trip form
json jnum(double v) {
  if (!std::isfinite(v)) return nullptr;
  return v;
}

json jnums(const std::vector<double>& v) {
  json a = json::array();
  for (double x : v) a.push_back(jnum(x));
  return a;
}

json jopt(const std::optional<double>& v) { return v ? jnum(*v) : json(nullptr); }

bool is_input_error(ErrorCode c) {
  switch (c) {
    case ErrorCode::InvalidParams:
    case ErrorCode::ConfigInvalid:
    case ErrorCode::GridMismatch:
    case ErrorCode::InvalidOrder:
    case ErrorCode::OutOfRegion:
    case ErrorCode::TooFewPaths:
    case ErrorCode::EmptyBin:
    case ErrorCode::MissingHistory:
    case ErrorCode::EvalAtSingularity:
    case ErrorCode::NotCompletelyMonotone:
    case ErrorCode::NoLimitAtInfinity:
      return true;
    default:
      return false;
  }
}

void error_json(std::ostream& err, const std::string& code, int exit, const std::string& msg,
                const std::optional<std::string>& pointer) {
  json e = {{"code", code}, {"exit", exit}, {"message", msg}};
  if (pointer) e["pointer"] = *pointer;
  err << json{{"error", e}}.dump() << '\n';
}

std::uint64_t require_seed(Context& c) {
  Node root(c.cfg, "");
  const auto mc = root.object("mc");
  if (!mc.has("seed")) mc.error("seed", "a seed is mandatory (set mc.seed or pass --seed)");
  return mc.integer("seed");
}

std::vector<KernelSpec> kernel_array(const Node& root) {
  std::vector<KernelSpec> ks;
  if (root.has("kernels")) {
    const auto a = root.at("kernels");
    for (std::size_t i = 0; i < a.size(); ++i) ks.push_back(parse_kernel(a.at(i)));
  } else {
    ks.push_back(parse_kernel(root.at("kernel")));
  }
  if (ks.empty()) root.error("kernels", "needs at least one kernel");
  return ks;
}

std::vector<perturb::PerturbationSpec> perturbation_list(const Node& root) {
  std::vector<perturb::PerturbationSpec> v;
  if (!root.has("perturbations")) return v;
  const auto a = root.at("perturbations");
  for (std::size_t i = 0; i < a.size(); ++i) v.push_back(parse_perturbation(a.at(i)));
  return v;
}

std::vector<sim::Perturbation> channels(const sim::ModelSpec& m, const std::vector<perturb::PerturbationSpec>& specs,
                                        const resolvents::TimeGrid& g, std::size_t workers, const Node& root) {
  std::vector<sim::Perturbation> out;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (specs[i].coordinate >= m.d)
      root.at("perturbations").at(i).error("coordinate", "coordinate out of range for the model");
    const auto c = lift::functional_channels(m.kernel_b[specs[i].coordinate], {specs[i]}, g, specs[i].coordinate, workers);
    out.push_back(c.front());
  }
  return out;
}

json perturbation_json(const perturb::PerturbationSpec& s) {
  return {{"kind", perturb::to_string(s.kind)}, {"alpha", jnum(s.alpha)}, {"lambda_tilt", jnum(s.lambda_tilt)},
          {"shift_z", jnum(s.shift_z)}, {"coordinate", s.coordinate}};
}

// ---------------------------------------------------------------- subcommands

void kernel_info(Context& c) {
  Node root(c.cfg, "");
  const auto ks = kernel_array(root);
  const auto info = root.object("info");
  const auto ts = info.numbers("t", {1e-4, 1e-3, 1e-2, 0.1, 0.5, 1.0, 2.0});
  for (std::size_t i = 0; i < ts.size(); ++i)
    if (!(ts[i] > 0.0)) info.at("t").error(std::to_string(i), "evaluation times must be positive");
  const bool scan = info.boolean("increment_scan", true);
  const double T = info.number("T", 1.0);
  const std::size_t n_bern = info.integer("bernstein_nodes", 0);
  json report = json::array();
  std::unique_ptr<Csv> csv;
  if (c.csv) csv = std::make_unique<Csv>(c.out_dir / "kernel_values.csv", std::vector<std::string>{"kernel", "t", "value"});
  for (std::size_t i = 0; i < ks.size(); ++i) {
    const auto& k = ks[i];
    json r = {{"spec", kernel_to_json(k)},
              {"singular", kernels::is_singular(k)},
              {"leading_index", jnum(kernels::leading_index(k))},
              {"completely_monotone", kernels::is_completely_monotone(k)},
              {"value_at_zero", jopt(kernels::value_at_zero(k))},
              {"value_at_infinity", jopt(kernels::value_at_infinity(k))}};
    json vals = json::array();
    for (double t : ts) {
      const double v = kernels::eval(k, t);
      vals.push_back({{"t", jnum(t)}, {"value", jnum(v)}});
      if (csv) csv->row({static_cast<double>(i), t, v});
    }
    r["values"] = vals;
    if (scan) {
      const auto s = kernels::l2_increment_scan(k, T, gram::default_h_list());
      r["increment_scan"] = {{"gamma_K", jnum(s.gamma_K)}, {"r2", jnum(s.r2)}, {"T", jnum(T)}, {"label", "estimated"}};
    }
    if (n_bern > 0) {
      const auto b = kernels::bernstein_quadrature(k, static_cast<int>(n_bern), T);
      r["bernstein"] = {{"nodes", kernel_to_json(b.kernel)["nodes"]}, {"max_rel_error", jnum(b.max_rel_error)}};
    }
    report.push_back(r);
  }
  if (c.json_out) write_json(c.out_dir / "kernel_info.json", {{"kernels", report}});
  *c.out << json{{"kernels", ks.size()}}.dump() << '\n';
}

void gram_scan(Context& c) {
  Node root(c.cfg, "");
  const auto ks = kernel_array(root);
  const auto g = root.object("gram");
  const bool diagonal = g.boolean("diagonal", false);
  const double lo = g.number("h_lo", 1e-6), hi = g.number("h_hi", 1e-2);
  const auto n = g.integer("n_h", 25);
  if (!(lo > 0.0 && hi > lo)) g.error("h_lo", "need 0 < h_lo < h_hi");
  const auto m = diagonal ? kernels::MatrixKernelSpec::diagonal(ks) : kernels::MatrixKernelSpec::column(ks);
  const auto r = gram::nondegeneracy_scan(m, gram::default_h_list(static_cast<int>(n), lo, hi), {lo, hi}, c.workers);
  json blocks = json::array();
  for (const auto& b : r.blocks)
    blocks.push_back({{"coordinate", b.coordinate}, {"rows", b.rows}, {"gamma_star", jnum(b.gamma_star)}, {"r2", jnum(b.r2)}});
  json j = {{"gamma_star", jnum(r.gamma_star)},
            {"intercept", jnum(r.intercept)},
            {"fit_r2", jnum(r.fit_r2)},
            {"n_fit", r.n_fit},
            {"has_correction", r.has_correction},
            {"gamma_star_corrected", r.has_correction ? jnum(r.gamma_star_corrected) : json(nullptr)},
            {"blocks", blocks},
            {"label", r.label}};
  if (c.json_out) write_json(c.out_dir / "gram_scan.json", j);
  if (c.csv) {
    Csv csv(c.out_dir / "gram_scan.csv", {"h", "lambda_min", "lambda_max", "corrected"});
    for (std::size_t i = 0; i < r.h_values.size(); ++i)
      csv.row({r.h_values[i], r.lambda_min[i], r.lambda_max[i], r.has_correction ? r.corrected[i] : r.lambda_min[i]});
  }
  *c.out << json{{"gamma_star", jnum(r.gamma_star)}, {"label", r.label}}.dump() << '\n';
  if (g.has("expect_gamma_star")) {
    const auto e = g.numbers("expect_gamma_star");
    if (e.size() != 2) g.error("expect_gamma_star", "expected [lo, hi]");
    if (!(r.gamma_star >= e[0] && r.gamma_star <= e[1])) c.exit_code = kVerdict;
  }
}

void resolvent(Context& c) {
  Node root(c.cfg, "");
  const auto k = parse_kernel(root.at("kernel"));
  const auto grid = parse_grid(root.object("grid"));
  const auto rs = root.object("resolvent");
  const double beta = rs.number("beta", 0.0);
  const auto z = rs.optional_number("z");
  const auto tb = resolvents::build_tables(k, beta, grid);
  json j = {{"atom", jnum(tb.atom)},
            {"beta", jnum(beta)},
            {"residual", jnum(tb.residual)},
            {"residual_tail", jnum(tb.residual_tail)},
            {"tail_from", jnum(tb.tail_from)},
            {"dt", jnum(grid.dt)},
            {"n_steps", grid.n_steps}};
  std::optional<resolvents::PiTable> pi;
  if (z) {
    pi = resolvents::pi_z(tb, *z);
    const auto kr = resolvents::kz_kernel(tb, *pi, rs.number("slack", 1e-2), false);
    j["pi"] = {{"z", jnum(pi->z)},
               {"route_discrepancy", jnum(pi->route_discrepancy)},
               {"degenerate", pi->degenerate},
               {"kz_sandwich", {{"f", jnum(kr.f)},
                                {"min_ratio", jnum(kr.min_ratio)},
                                {"max_ratio", jnum(kr.max_ratio)},
                                {"max_violation", jnum(kr.max_violation)},
                                {"checked", kr.checked},
                                {"ok", kr.ok}}}};
  }
  if (c.json_out) write_json(c.out_dir / "resolvent.json", j);
  if (c.csv) {
    std::vector<std::string> h{"t", "L0_cell", "EK", "KE"};
    if (pi) h.insert(h.end(), {"Pi", "dPi", "Kz"});
    Csv csv(c.out_dir / "resolvent.csv", h);
    for (std::size_t i = 1; i <= grid.n_steps; ++i) {
      std::vector<double> row{grid.node(i), tb.L0[i], tb.EK[i], tb.KE[i]};
      if (pi) {
        const bool in = i <= pi->n_out;
        row.insert(row.end(), {in ? pi->Pi[i] : NAN, in ? pi->dPi[i] : NAN, in && pi->has_Kz ? pi->Kz[i] : NAN});
      }
      csv.row(row);
    }
  }
  *c.out << json{{"residual", jnum(tb.residual)}, {"atom", jnum(tb.atom)}}.dump() << '\n';
}

void perturb_cmd(Context& c) {
  Node root(c.cfg, "");
  const auto k = parse_kernel(root.at("kernel"));
  const auto grid = parse_grid(root.object("grid"));
  const auto specs = perturbation_list(root);
  if (specs.empty()) root.error("perturbations", "needs at least one perturbation");
  json list = json::array();
  std::vector<std::vector<double>> cols;
  for (const auto& s : specs) {
    json r = perturbation_json(s);
    std::vector<double> col;
    if (s.kind == perturb::Kind::MarchaudDerivative || s.kind == perturb::Kind::FractionalIntegral) {
      const auto p = s.kind == perturb::Kind::MarchaudDerivative ? perturb::marchaud_forward(k, s, grid, c.workers)
                                                                  : perturb::fractional_integral_perturb(k, s, grid, c.workers);
      col = p.value;
      r["tail_bound"] = jnum(p.tail_bound);
      r["z_max"] = jnum(p.z_max);
      r["c_alpha"] = jopt(p.c_alpha);
    } else {
      const auto kt = perturb::apply(k, s, grid);
      for (std::size_t i = 1; i <= grid.n_steps; ++i) col.push_back(kernels::eval(kt, grid.node(i)));
      if (kt.family != kernels::Family::TableDefined) r["kernel"] = kernel_to_json(kt);
    }
    list.push_back(r);
    cols.push_back(std::move(col));
  }
  if (c.json_out) write_json(c.out_dir / "perturb.json", {{"kernel", kernel_to_json(k)}, {"perturbations", list}});
  if (c.csv) {
    std::vector<std::string> h{"t"};
    for (std::size_t q = 0; q < specs.size(); ++q) h.push_back("p" + std::to_string(q));
    Csv csv(c.out_dir / "perturb.csv", h);
    for (std::size_t i = 0; i < grid.n_steps; ++i) {
      std::vector<double> row{grid.node(i + 1)};
      for (const auto& col : cols) row.push_back(col[i]);
      csv.row(row);
    }
  }
  *c.out << json{{"perturbations", specs.size()}}.dump() << '\n';
}

struct SimSetup {
  sim::ModelSpec model;
  resolvents::TimeGrid grid;
  std::size_t paths = 0;
  std::uint64_t seed = 0;
  bool retain = false;
  std::vector<perturb::PerturbationSpec> specs;
};

SimSetup sim_setup(Context& c) {
  Node root(c.cfg, "");
  SimSetup s;
  s.seed = require_seed(c);
  s.model = parse_model(root.at("model"));
  s.grid = parse_grid(root.object("grid"));
  const auto mc = root.object("mc");
  s.paths = mc.integer("paths", 10000);
  if (s.paths == 0) mc.error("paths", "needs at least one path");
  s.retain = mc.boolean("retain_history", false);
  s.specs = perturbation_list(root);
  return s;
}

void simulate(Context& c, bool dump) {
  auto s = sim_setup(c);
  Node root(c.cfg, "");
  dump = root.object("mc").boolean("dump", dump);
  sim::SimOptions o;
  o.retain_history = s.retain;
  o.workers = c.workers;
  const auto ch = channels(s.model, s.specs, s.grid, c.workers, root);
  const auto e = sim::simulate_with_perturbation(s.model, s.grid, s.paths, s.seed, ch, o);
  const std::size_t d = e.d, Q = e.n_pert;
  auto stats = [&](auto get) {
    double m = 0.0, q = 0.0;
    for (std::size_t p = 0; p < e.n_paths; ++p) m += get(p);
    m /= static_cast<double>(e.n_paths);
    for (std::size_t p = 0; p < e.n_paths; ++p) q += (get(p) - m) * (get(p) - m);
    const double sd = e.n_paths > 1 ? std::sqrt(q / static_cast<double>(e.n_paths - 1)) : 0.0;
    return std::pair{m, sd};
  };
  json final_moments = json::array();
  if (c.csv) {
    std::vector<std::string> h{"t"};
    for (std::size_t i = 0; i < d; ++i) h.insert(h.end(), {"mean_x" + std::to_string(i), "sd_x" + std::to_string(i)});
    for (std::size_t q = 0; q < Q; ++q) h.insert(h.end(), {"mean_z" + std::to_string(q), "sd_z" + std::to_string(q)});
    Csv csv(c.out_dir / "paths_summary.csv", h);
    for (std::size_t n = 0; n <= s.grid.n_steps; ++n) {
      std::vector<double> row{s.grid.node(n)};
      for (std::size_t i = 0; i < d; ++i) {
        const auto [m, sd] = stats([&](std::size_t p) { return e.x(p, n, i); });
        row.insert(row.end(), {m, sd});
      }
      for (std::size_t q = 0; q < Q; ++q) {
        const auto [m, sd] = stats([&](std::size_t p) { return e.z(p, n, q); });
        row.insert(row.end(), {m, sd});
      }
      csv.row(row);
    }
  }
  for (std::size_t i = 0; i < d; ++i) {
    const auto [m, sd] = stats([&](std::size_t p) { return e.x(p, s.grid.n_steps, i); });
    final_moments.push_back({{"coordinate", i},
                             {"mean", jnum(m)},
                             {"sd", jnum(sd)},
                             {"stderr", jnum(sd / std::sqrt(static_cast<double>(e.n_paths)))}});
  }
  json j = {{"model", s.model.name},
            {"mode", sim::to_string(s.model.mode)},
            {"n_paths", e.n_paths},
            {"n_steps", s.grid.n_steps},
            {"dt", jnum(s.grid.dt)},
            {"seed", s.seed},
            {"truncation_events", e.truncation_events},
            {"n_perturbations", Q},
            {"final", final_moments}};
  if (dump) {
    sim::write_binary(e, (c.out_dir / "ensemble.bin").string());
    j["dump"] = "ensemble.bin";
    j["dump_layout"] = "little-endian u64 {d, n_pert, n_steps, n_paths}, then X and Z as row-major doubles";
  }
  if (c.json_out) write_json(c.out_dir / "simulate.json", j);
  *c.out << json{{"n_paths", e.n_paths}, {"truncation_events", e.truncation_events}}.dump() << '\n';
}

void lift_cmd(Context& c) {
  auto s = sim_setup(c);
  Node root(c.cfg, "");
  const auto lc = root.object("lift");
  std::vector<double> paths_d = lc.numbers("paths", {0.0});
  std::vector<double> times = lc.numbers("times", {s.grid.horizon() / 2});
  const auto flow_s = lc.numbers("flow_s", {s.grid.dt, 4 * s.grid.dt});
  const auto x_points = lc.integer("x_points", 32);
  const auto x = lc.has("x") ? lc.numbers("x") : lift::default_x_grid(s.grid, x_points);
  sim::SimOptions o;
  o.retain_history = true;
  o.workers = c.workers;
  const auto ch = channels(s.model, s.specs, s.grid, c.workers, root);
  const auto e = sim::simulate_with_perturbation(s.model, s.grid, s.paths, s.seed, ch, o);
  std::unique_ptr<Csv> csv;
  if (c.csv)
    csv = std::make_unique<Csv>(c.out_dir / "lift_curves.csv", std::vector<std::string>{"path", "t", "coordinate", "x", "value"});
  json flows = json::array();
  double state_gap = 0.0;
  for (std::size_t pi = 0; pi < paths_d.size(); ++pi) {
    const double pd = paths_d[pi];
    if (!(pd >= 0.0 && pd < static_cast<double>(e.n_paths) && pd == std::floor(pd)))
      lc.at("paths").error(std::to_string(pi), "path index out of range");
    const auto p = static_cast<std::size_t>(pd);
    for (std::size_t ti = 0; ti < times.size(); ++ti) {
      const double t = times[ti];
      try {
        s.grid.index_of(t);
      } catch (const Error& err) {
        lc.at("times").error(std::to_string(ti), err.what());
      }
      const auto st = lift::lift_state(e, p, t, x);
      for (std::size_t i = 0; i < st.d; ++i)
        for (std::size_t j = 0; j < x.size(); ++j)
          if (csv) csv->row({static_cast<double>(p), st.t, static_cast<double>(i), x[j], st.at(i, j)});
      for (double sv : flow_s) {
        if (t + sv > s.grid.horizon() + 1e-12) continue;
        const auto f = lift::flow_check(e, p, t, sv, x);
        flows.push_back({{"path", p}, {"t", jnum(t)}, {"s", jnum(sv)}, {"residual", jnum(f.residual)}, {"scale", jnum(f.scale)}});
      }
    }
    for (std::size_t n = 0; n <= s.grid.n_steps; ++n) {
      const auto st = lift::lift_state(e, p, s.grid.node(n), {0.0});
      for (std::size_t i = 0; i < e.d; ++i) {
        const double raw = st.at(i, 0), xs = e.x(p, n, i);
        // truncated square-root states differ from the raw sum by design
        if (!(s.model.square_root(i) && xs == 0.0)) state_gap = std::max(state_gap, std::abs(raw - xs));
      }
    }
  }
  json j = {{"mode", sim::to_string(s.model.mode)},
            {"x", jnums(x)},
            {"flow", flows},
            {"max_state_gap", jnum(state_gap)},
            {"truncation_events", e.truncation_events}};
  if (!ch.empty()) {
    lift::RankOptions ro;
    ro.n_boot = lc.integer("boot", 500);
    ro.level = lc.number("level", 0.95);
    ro.seed = s.seed;
    ro.zero_tol = lc.number("zero_tol", ro.zero_tol);
    ro.workers = c.workers;
    const double rt = lc.number("rank_t", times.front());
    const auto r = lift::covariance_rank(e, rt, ro);
    json fs_ = json::array();
    for (const auto& sp : s.specs) fs_.push_back(perturbation_json(sp));
    j["covariance"] = {{"t", jnum(r.t)},
                       {"functionals", fs_},
                       {"eigenvalues", jnums(r.eigenvalues)},
                       {"ci_lo", jnums(r.ci_lo)},
                       {"ci_hi", jnums(r.ci_hi)},
                       {"variances", jnums(r.variances)},
                       {"rank", r.rank},
                       {"n_boot", r.n_boot},
                       {"level", jnum(r.level)},
                       {"zero_tol", jnum(ro.zero_tol)},
                       {"label", r.label}};
  }
  if (c.json_out) write_json(c.out_dir / "lift.json", j);
  *c.out << json{{"max_state_gap", jnum(state_gap)}, {"flow_checks", flows.size()}}.dump() << '\n';
}

void markov_test(Context& c) {
  auto s = sim_setup(c);
  Node root(c.cfg, "");
  const auto tc = root.object("test");
  const double t = tc.number("t", s.grid.horizon());
  json j = {{"t", jnum(t)}, {"label", "calibrated heuristic"}};
  bool gate_failed = false;
  json summary;
  if (!s.specs.empty()) {
    markovtest::MarkovOptions o;
    o.n_bins = tc.integer("bins", 64);
    o.n_boot = tc.integer("boot", 500);
    o.level = tc.number("level", 0.95);
    o.eps_markov = tc.number("eps_markov", 0.02);
    o.stability = tc.number("stability", 0.25);
    o.z_column = tc.integer("z_column", 0);
    o.coordinate = tc.integer("coordinate", 0);
    o.seed = s.seed;
    o.workers = c.workers;
    if (o.z_column >= s.specs.size()) tc.error("z_column", "no such perturbation");
    sim::SimOptions so;
    so.workers = c.workers;
    const auto ch = channels(s.model, s.specs, s.grid, c.workers, root);
    const auto e = sim::simulate_with_perturbation(s.model, s.grid, s.paths, s.seed, ch, so);
    const auto r = markovtest::sigma_measurability_test(e, t, o);
    j.update({{"n_paths", r.n_paths},
              {"n_bins", r.n_bins},
              {"n_boot", r.n_boot},
              {"R", jnum(r.R)},
              {"R_ci", {jnum(r.R_ci_lo), jnum(r.R_ci_hi)}},
              {"R_refined", jnum(r.R_refined)},
              {"level", jnum(r.level)},
              {"eps_markov", jnum(r.eps_markov)},
              {"gamma_mass",
               {{"mass", jnum(r.gamma.mass)},
                {"ci", {jnum(r.gamma.ci_lo), jnum(r.gamma.ci_hi)}},
                {"paley_zygmund", jopt(r.gamma.paley_zygmund)}}},
              {"truncation_events", e.truncation_events},
              {"perturbation", perturbation_json(s.specs[o.z_column])},
              {"warnings", r.warnings},
              {"verdict", markovtest::to_string(r.verdict)}});
    summary["verdict"] = markovtest::to_string(r.verdict);
    summary["R"] = jnum(r.R);
    if (c.csv) {
      Csv csv(c.out_dir / "markov_bins.csv", {"bin_center", "bin_variance_share"});
      for (std::size_t b = 0; b < r.bin_center.size(); ++b) csv.row({r.bin_center[b], r.bin_share[b]});
    }
    if (tc.has("expect") && tc.string("expect") != markovtest::to_string(r.verdict)) gate_failed = true;
  }
  if (tc.has("conditional_mean")) {
    const auto cm = tc.object("conditional_mean");
    const double T = cm.number("T");
    const double dt = cm.number("dt", s.grid.dt);
    const auto outer = cm.integer("outer", 2000), inner = cm.integer("inner", 200);
    const double max_z = cm.number("max_abs_z", 3.0);
    resolvents::TimeGrid g;
    try {
      g = resolvents::TimeGrid::make(dt, T);
    } catch (const Error& err) {
      cm.error("T", err.what());
    }
    if (s.model.d != 1) root.at("model").error("", "the conditional-mean check needs a scalar model");
    const auto tb = resolvents::build_tables(s.model.kernel_b[0], s.model.beta[0], g);
    const auto pi = resolvents::pi_z(tb, T - t);
    markovtest::CondMeanOptions co;
    co.n_bins = cm.integer("bins", 10);
    co.workers = c.workers;
    const auto r = markovtest::conditional_mean_check(s.model, tb, pi, t, T, outer, inner, s.seed, co);
    j["conditional_mean"] = {{"T", jnum(T)},
                             {"dt", jnum(dt)},
                             {"n_outer", r.n_outer},
                             {"n_inner", r.n_inner},
                             {"mean_diff", jnum(r.mean_diff)},
                             {"se_diff", jnum(r.se_diff)},
                             {"z", jnum(r.z)},
                             {"bin_center", jnums(r.bin_center)},
                             {"bin_z", jnums(r.bin_z)}};
    summary["z"] = jnum(r.z);
    if (!(std::abs(r.z) < max_z)) gate_failed = true;
  }
  if (s.specs.empty() && !tc.has("conditional_mean"))
    root.error("perturbations", "markov-test needs a perturbation (Z column) or test.conditional_mean");
  if (c.json_out) write_json(c.out_dir / "markov_test.json", j);
  *c.out << summary.dump() << '\n';
  if (gate_failed) c.exit_code = kVerdict;
}

}  // namespace

int run(int argc, const char* const* argv, std::istream& in, std::ostream& out, std::ostream& err) {
  CLI::App app{"Stochastic Volterra toolkit: kernels, resolvents, Gram scans, perturbations, simulation, lifts and "
               "Markov tests"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path, out_dir = "volterra_out", format = "both", preset_name;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers, paths;
  std::optional<double> dt, horizon;
  bool retain = false, dump = false;
  app.add_option("--config", config_path, "JSON config file ('-' or absent: read stdin)");
  auto* out_opt = app.add_option("--out", out_dir, "output directory");
  app.add_option("--seed", seed, "seed, overrides mc.seed");
  app.add_option("--workers", workers, "worker threads (default: VOLTERRA_WORKERS, then all cores)");
  app.add_option("--format", format, "csv, json or both")->check(CLI::IsMember({"csv", "json", "both"}));
  const std::vector<std::string> names{"kernel-info", "gram-scan", "resolvent", "perturb",
                                       "simulate",    "lift",      "markov-test", "preset"};
  std::map<std::string, CLI::App*> subs;
  for (const auto& n : names) subs[n] = app.add_subcommand(n);
  subs["simulate"]->add_option("--paths", paths, "number of paths");
  subs["simulate"]->add_option("--dt", dt, "time step");
  subs["simulate"]->add_option("--horizon", horizon, "horizon");
  subs["simulate"]->add_flag("--retain-history", retain, "keep noise and coefficient samples");
  subs["simulate"]->add_flag("--dump", dump, "write ensemble.bin");
  subs["preset"]->add_option("name", preset_name, "volterra-cir, rough-heston, gaussian-fractional, exponential-control")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kOk;
    }
    error_json(err, "UsageError", kConfig, e.what(), std::nullopt);
    return kConfig;
  }
  std::string sub;
  for (const auto& [n, a] : subs)
    if (a->parsed()) sub = n;

  Context c;
  c.out = &out;
  c.csv = format != "json";
  c.json_out = format != "csv";
  try {
    if (sub == "preset") {
      json p = preset_config(preset_name);
      out << p.dump(2) << '\n';
      if (out_opt->count() > 0) {
        fs::create_directories(out_dir);
        write_json(fs::path(out_dir) / "config.json", p);
      }
      return kOk;
    }
    std::string text;
    if (config_path.empty() || config_path == "-") {
      std::stringstream ss;
      ss << in.rdbuf();
      text = ss.str();
    } else {
      std::ifstream f(config_path);
      if (!f) throw ConfigError("", "cannot open config " + config_path);
      std::stringstream ss;
      ss << f.rdbuf();
      text = ss.str();
    }
    try {
      c.cfg = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ConfigError("", std::string("config is not valid JSON: ") + e.what());
    }
    if (!c.cfg.is_object()) throw ConfigError("", "config must be a JSON object");
    Node root(c.cfg, "");
    if (seed) root.object("mc").raw()["seed"] = *seed;
    if (paths) root.object("mc").raw()["paths"] = *paths;
    if (retain) root.object("mc").raw()["retain_history"] = true;
    if (dt) root.object("grid").raw()["dt"] = *dt;
    if (horizon) root.object("grid").raw()["horizon"] = *horizon;
    if (workers) c.cfg["workers"] = *workers;
    c.workers = resolve_workers(root.integer("workers", resolve_workers(0)));
    c.out_dir = out_dir;
    fs::create_directories(c.out_dir);

    if (sub == "kernel-info") kernel_info(c);
    else if (sub == "gram-scan") gram_scan(c);
    else if (sub == "resolvent") resolvent(c);
    else if (sub == "perturb") perturb_cmd(c);
    else if (sub == "simulate") simulate(c, dump);
    else if (sub == "lift") lift_cmd(c);
    else if (sub == "markov-test") markov_test(c);
    // parsing fills defaults into the document, so this is the complete run description
    write_json(c.out_dir / "config.resolved.json", c.cfg);
    return c.exit_code;
  } catch (const ConfigError& e) {
    error_json(err, "ConfigInvalid", kConfig, e.what(), e.pointer);
    return kConfig;
  } catch (const Error& e) {
    const int code = is_input_error(e.code()) ? kConfig : kNumerical;
    if (!c.out_dir.empty()) {
      std::error_code ec;
      std::ofstream f(c.out_dir / "config.resolved.json", std::ios::binary);
      if (f) f << c.cfg.dump(2) << '\n';
    }
    error_json(err, to_string(e.code()), code, e.what(), std::nullopt);
    return code;
  } catch (const std::exception& e) {
    error_json(err, "InternalError", kNumerical, e.what(), std::nullopt);
    return kNumerical;
  }
}

}  // namespace volterra::cli
