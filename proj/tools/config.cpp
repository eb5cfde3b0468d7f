#include "config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "volterra/error.hpp"

namespace volterra::cli {

using kernels::Family;
using kernels::KernelSpec;

namespace {

std::string join(const std::string& ptr, const std::string& key) { return ptr + "/" + key; }

}  // namespace

void Node::error(const std::string& key, const std::string& msg) const {
  throw ConfigError(key.empty() ? ptr_ : join(ptr_, key), msg);
}

Node Node::at(const std::string& key) const {
  if (!j_->is_object()) throw ConfigError(ptr_, "expected an object");
  if (!j_->contains(key)) error(key, "required field is missing");
  return Node((*j_)[key], join(ptr_, key));
}

Node Node::at(std::size_t i) const {
  if (!j_->is_array() || i >= j_->size()) throw ConfigError(ptr_, "expected an array with element " + std::to_string(i));
  return Node((*j_)[i], join(ptr_, std::to_string(i)));
}

Node Node::object(const std::string& key) const {
  if (!j_->is_object()) throw ConfigError(ptr_, "expected an object");
  if (!j_->contains(key)) (*j_)[key] = json::object();
  if (!(*j_)[key].is_object()) error(key, "expected an object");
  return Node((*j_)[key], join(ptr_, key));
}

std::size_t Node::size() const {
  if (!j_->is_array()) throw ConfigError(ptr_, "expected an array");
  return j_->size();
}

double Node::number(const std::string& key) const {
  const auto n = at(key);
  if (!n.raw().is_number()) error(key, "expected a number");
  const double v = n.raw().get<double>();
  if (!std::isfinite(v)) error(key, "must be finite");
  return v;
}

double Node::number(const std::string& key, double def) const {
  if (!has(key)) (*j_)[key] = def;
  return number(key);
}

std::optional<double> Node::optional_number(const std::string& key) const {
  if (!has(key) || (*j_)[key].is_null()) return std::nullopt;
  return number(key);
}

std::uint64_t Node::integer(const std::string& key) const {
  const auto n = at(key);
  if (n.raw().is_number_unsigned()) return n.raw().get<std::uint64_t>();
  if (n.raw().is_number_integer() && n.raw().get<std::int64_t>() >= 0)
    return static_cast<std::uint64_t>(n.raw().get<std::int64_t>());
  if (n.raw().is_number_float()) {
    const double v = n.raw().get<double>();
    if (v >= 0.0 && v == std::floor(v) && v < 1.8e19) return static_cast<std::uint64_t>(v);
  }
  error(key, "expected a nonnegative integer");
}

std::uint64_t Node::integer(const std::string& key, std::uint64_t def) const {
  if (!has(key)) (*j_)[key] = def;
  return integer(key);
}

bool Node::boolean(const std::string& key, bool def) const {
  if (!has(key)) (*j_)[key] = def;
  const auto& v = (*j_)[key];
  if (!v.is_boolean()) error(key, "expected true or false");
  return v.get<bool>();
}

std::string Node::string(const std::string& key) const {
  const auto n = at(key);
  if (!n.raw().is_string()) error(key, "expected a string");
  return n.raw().get<std::string>();
}

std::string Node::string(const std::string& key, const std::string& def) const {
  if (!has(key)) (*j_)[key] = def;
  return string(key);
}

std::vector<double> Node::numbers(const std::string& key) const {
  const auto n = at(key);
  if (!n.raw().is_array()) error(key, "expected an array of numbers");
  std::vector<double> v;
  for (std::size_t i = 0; i < n.raw().size(); ++i) {
    if (!n.raw()[i].is_number()) n.error(std::to_string(i), "expected a number");
    v.push_back(n.raw()[i].get<double>());
  }
  return v;
}

std::vector<double> Node::numbers(const std::string& key, const std::vector<double>& def) const {
  if (!has(key)) (*j_)[key] = def;
  return numbers(key);
}

namespace {

std::vector<kernels::ExpTerm> parse_terms(const Node& n, const std::string& key) {
  const auto a = n.at(key);
  std::vector<kernels::ExpTerm> out;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto e = a.at(i);
    if (e.raw().is_array()) {
      if (e.raw().size() != 2 || !e.raw()[0].is_number() || !e.raw()[1].is_number())
        throw ConfigError(e.pointer(), "expected [weight, rate]");
      out.push_back({e.raw()[0].get<double>(), e.raw()[1].get<double>()});
    } else {
      out.push_back({e.number("weight"), e.number("rate")});
    }
    if (out.back().rate < 0.0) throw ConfigError(e.pointer(), "rates must be nonnegative");
  }
  if (out.empty()) n.error(key, "needs at least one term");
  return out;
}

void check_hurst(const Node& n, double H, double lo = 0.0, double hi = 1.0) {
  if (!(H > lo && H < hi))
    n.error("H", "H = " + std::to_string(H) + " is outside (" + std::to_string(lo) + ", " + std::to_string(hi) + ")");
}

kernels::Table read_table_csv(const Node& n, const std::string& path) {
  std::ifstream f(path);
  if (!f) n.error("csv", "cannot open " + path);
  kernels::Table t;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream s(line);
    double a, b;
    if (!(s >> a >> b)) {
      if (t.t.empty()) continue;  // header row
      n.error("csv", "malformed row '" + line + "' in " + path);
    }
    t.t.push_back(a);
    t.v.push_back(b);
  }
  return t;
}

}  // namespace

KernelSpec parse_kernel(const Node& n) {
  if (!n.raw().is_object()) throw ConfigError(n.pointer(), "a kernel is an object with a 'family' field");
  const std::string fam = n.string("family");
  KernelSpec k;
  try {
    if (fam == "fractional") {
      const double H = n.number("H");
      check_hurst(n, H);
      k = KernelSpec::fractional(H, n.number("c", 1.0));
    } else if (fam == "gamma") {
      const double H = n.number("H");
      check_hurst(n, H, 0.0, 1.5);
      const double lam = n.number("lambda");
      if (lam < 0.0) n.error("lambda", "damping must be nonnegative");
      k = KernelSpec::gamma(H, lam, n.number("c", 1.0));
    } else if (fam == "mittag-leffler") {
      const double H = n.number("H");
      check_hurst(n, H);
      const double lam = n.number("lambda");
      if (lam < 0.0) n.error("lambda", "damping must be nonnegative");
      k = KernelSpec::mittag_leffler(H, lam, n.number("c", 1.0));
    } else if (fam == "exp-sum") {
      k = KernelSpec::exp_sum(parse_terms(n, "terms"));
    } else if (fam == "exponential") {
      const double r = n.number("rate");
      if (r < 0.0) n.error("rate", "rate must be nonnegative");
      k = KernelSpec::exponential(r, n.number("c", 1.0));
    } else if (fam == "parametric") {
      const double H = n.number("H");
      check_hurst(n, H);
      k = KernelSpec::parametric(H, n.number("lambda", 0.0), n.number("eps0", 0.0), n.number("eps1", 0.0),
                                 n.number("eps2", 0.0), n.number("alpha_log", 0.0), n.number("c", 1.0));
    } else if (fam == "bernstein") {
      k = KernelSpec::bernstein(parse_terms(n, "nodes"));
    } else if (fam == "constant") {
      k = KernelSpec::constant(n.number("c"));
    } else if (fam == "table") {
      kernels::Table t;
      if (n.has("csv")) {
        t = read_table_csv(n, n.string("csv"));
      } else {
        t.t = n.numbers("t");
        t.v = n.numbers("v");
      }
      k = KernelSpec::tabulated(t.t, t.v);
    } else {
      n.error("family", "unknown family '" + fam +
                            "' (fractional, gamma, mittag-leffler, exp-sum, exponential, parametric, bernstein, "
                            "constant, table)");
    }
    if (n.has("c") && n.number("c") == 0.0) n.error("c", "scale must be nonzero");
    if (n.has("shift")) {
      const double s = n.number("shift");
      if (s < 0.0) n.error("shift", "shift must be nonnegative");
      k.shift = s;
    }
    kernels::validate(k);
  } catch (const Error& e) {
    throw ConfigError(n.pointer(), e.what());
  }
  return k;
}

json kernel_to_json(const KernelSpec& k) {
  json j;
  auto terms = [](const std::vector<kernels::ExpTerm>& v) {
    json a = json::array();
    for (const auto& e : v) a.push_back({e.weight, e.rate});
    return a;
  };
  switch (k.family) {
    case Family::Fractional: j = {{"family", "fractional"}, {"H", k.hurst}, {"c", k.scale}}; break;
    case Family::Gamma: j = {{"family", "gamma"}, {"H", k.hurst}, {"lambda", k.damping}, {"c", k.scale}}; break;
    case Family::MittagLeffler:
      j = {{"family", "mittag-leffler"}, {"H", k.hurst}, {"lambda", k.damping}, {"c", k.scale}};
      break;
    case Family::ExpSum: j = {{"family", "exp-sum"}, {"terms", terms(k.exp_terms)}}; break;
    case Family::ParametricClass:
      j = {{"family", "parametric"}, {"H", k.hurst},       {"lambda", k.damping},        {"eps0", k.eps0},
           {"eps1", k.eps1},         {"eps2", k.eps2},     {"alpha_log", k.log_exponent}, {"c", k.scale}};
      break;
    case Family::BernsteinQuadrature: j = {{"family", "bernstein"}, {"nodes", terms(k.bernstein_nodes)}}; break;
    case Family::Constant: j = {{"family", "constant"}, {"c", k.scale}}; break;
    case Family::TableDefined: j = {{"family", "table"}, {"t", k.table->t}, {"v", k.table->v}}; break;
  }
  if (k.shift != 0.0) j["shift"] = k.shift;
  return j;
}

resolvents::TimeGrid parse_grid(const Node& n) {
  const double dt = n.number("dt"), horizon = n.number("horizon");
  if (!(dt > 0.0)) n.error("dt", "dt must be positive");
  if (!(horizon > 0.0)) n.error("horizon", "horizon must be positive");
  try {
    return resolvents::TimeGrid::make(dt, horizon);
  } catch (const Error& e) {
    n.error("horizon", e.what());
  }
}

namespace {

std::vector<KernelSpec> kernel_list(const Node& n, const std::string& key, std::size_t d) {
  const auto a = n.at(key);
  std::vector<KernelSpec> out;
  for (std::size_t i = 0; i < a.size(); ++i) out.push_back(parse_kernel(a.at(i)));
  if (out.size() != d) n.error(key, "needs " + std::to_string(d) + " kernels");
  return out;
}

void check_cir_signs(const Node& n, double x0, double b) {
  if (x0 < 0.0) n.error("x0", "square-root models need x0 >= 0");
  if (b < 0.0) n.error("b", "square-root models need b >= 0");
}

}  // namespace

sim::ModelSpec parse_model(const Node& n) {
  if (!n.raw().is_object()) throw ConfigError(n.pointer(), "model must be an object");
  sim::ModelSpec m;
  try {
    if (n.has("preset")) {
      const std::string p = n.string("preset");
      if (p == "volterra-cir") {
        const double x0 = n.number("x0"), b = n.number("b");
        check_cir_signs(n, x0, b);
        const double sigma = n.number("sigma");
        if (sigma < 0.0) n.error("sigma", "sigma must be nonnegative");
        m = sim::volterra_cir(parse_kernel(n.at("kernel")), x0, b, n.number("beta"), sigma);
      } else if (p == "rough-heston") {
        const double H = n.number("H");
        check_hurst(n, H, 0.0, 0.5 + 1e-12);
        const double rho = n.number("rho");
        if (std::abs(rho) > 1.0) n.error("rho", "correlation must lie in [-1, 1]");
        const double v0 = n.number("v0");
        if (v0 < 0.0) n.error("v0", "v0 must be nonnegative");
        const double lam = n.number("lambda"), theta = n.number("theta");
        if (lam * theta < 0.0) n.error("theta", "lambda theta must be nonnegative");
        m = sim::rough_heston(H, lam, theta, n.number("nu"), rho, v0, n.number("y0", 0.0), n.number("r", 0.0));
      } else if (p == "gaussian-fractional") {
        const double H = n.number("H");
        check_hurst(n, H);
        m = sim::gaussian_fractional(H, n.number("sigma", 1.0));
      } else if (p == "exponential-control") {
        const double x0 = n.number("x0", 0.3), b = n.number("b", 0.3);
        check_cir_signs(n, x0, b);
        m = sim::exponential_control(n.number("rate", 1.0), x0, b, n.number("beta", -0.7), n.number("sigma", 0.3));
      } else if (p == "brownian") {
        m = sim::brownian();
      } else {
        n.error("preset", "unknown model preset '" + p + "'");
      }
      if (n.has("mode")) m.mode = sim::weight_mode_from_string(n.string("mode"));
    } else {
      const std::size_t d = n.integer("d", 1);
      if (d == 0) n.error("d", "dimension must be positive");
      m.name = n.string("name", "custom");
      m.d = d;
      m.kernel_b = kernel_list(n, "kernel_b", d);
      m.kernel_sigma = n.has("kernel_sigma") ? kernel_list(n, "kernel_sigma", d) : m.kernel_b;
      m.b = n.numbers("b");
      if (m.b.size() != d) n.error("b", "needs " + std::to_string(d) + " entries");
      m.beta = n.numbers("beta");
      if (m.beta.size() != d * d) n.error("beta", "needs d*d entries");
      const auto df = n.at("diffusion");
      for (std::size_t i = 0; i < df.size(); ++i) {
        const auto t = df.at(i);
        sim::DiffusionTerm term;
        try {
          term.kind = sim::diffusion_kind_from_string(t.string("kind"));
        } catch (const Error& e) {
          t.error("kind", e.what());
        }
        term.sigma0 = t.number("sigma0", 1.0);
        term.sigma1 = t.number("sigma1", 0.0);
        term.source = t.integer("source", i);
        if (term.source >= d) t.error("source", "source out of range");
        m.diffusion.push_back(term);
      }
      if (m.diffusion.size() != d) n.error("diffusion", "needs " + std::to_string(d) + " entries");
      if (n.has("noise_chol")) m.noise_chol = n.numbers("noise_chol");
      if (n.has("g")) {
        m.g = kernel_list(n, "g", d);
      } else {
        const auto x0 = n.numbers("x0");
        if (x0.size() != d) n.error("x0", "needs " + std::to_string(d) + " entries");
        for (double v : x0) m.g.push_back(KernelSpec::constant(v));
      }
      try {
        m.mode = sim::weight_mode_from_string(n.string("mode", "cell-average"));
      } catch (const Error& e) {
        n.error("mode", e.what());
      }
      m.blowup_bound = n.number("blowup_bound", 1e6);
      m.validate();
    }
  } catch (const Error& e) {
    throw ConfigError(n.pointer(), e.what());
  }
  return m;
}

perturb::PerturbationSpec parse_perturbation(const Node& n) {
  perturb::PerturbationSpec s;
  try {
    s.kind = perturb::kind_from_string(n.string("kind"));
  } catch (const Error& e) {
    n.error("kind", e.what());
  }
  s.alpha = n.number("alpha", 0.1);
  s.lambda_tilt = n.number("lambda_tilt", 1.0);
  if (!(s.lambda_tilt > 0.0)) n.error("lambda_tilt", "tilt must be positive");
  s.shift_z = n.number("shift_z", 0.0);
  s.coordinate = n.integer("coordinate", 0);
  if (auto c = n.optional_number("tail_cut")) s.tail_cut = *c;
  try {
    s.validate();
  } catch (const Error& e) {
    throw ConfigError(n.pointer(), e.what());
  }
  return s;
}

std::vector<std::string> preset_names() {
  return {"volterra-cir", "rough-heston", "gaussian-fractional", "exponential-control"};
}

json preset_config(const std::string& name) {
  const json marchaud = {{"kind", perturb::to_string(perturb::Kind::MarchaudDerivative)}, {"alpha", 0.05}};
  if (name == "volterra-cir") {
    return {{"model",
             {{"preset", "volterra-cir"},
              {"kernel", {{"family", "fractional"}, {"H", 0.3}}},
              {"x0", 0.3},
              {"b", 0.3},
              {"beta", -0.7},
              {"sigma", 0.3}}},
            {"grid", {{"dt", 0.0078125}, {"horizon", 1.0}}},
            {"mc", {{"paths", 20000}, {"seed", 20261016}, {"retain_history", false}}},
            {"perturbations", json::array({marchaud})},
            {"test",
             {{"t", 0.5},
              {"bins", 64},
              {"boot", 500},
              {"conditional_mean", {{"T", 1.0}, {"dt", 0.001953125}, {"outer", 2000}, {"inner", 200}}}}}};
  }
  if (name == "rough-heston") {
    return {{"model",
             {{"preset", "rough-heston"},
              {"H", 0.1},
              {"lambda", 0.3},
              {"theta", 0.04},
              {"nu", 0.3},
              {"rho", -0.7},
              {"v0", 0.04}}},
            {"grid", {{"dt", 0.00390625}, {"horizon", 1.0}}},
            {"mc", {{"paths", 10000}, {"seed", 20261016}, {"retain_history", false}}}};
  }
  if (name == "gaussian-fractional") {
    return {{"model", {{"preset", "gaussian-fractional"}, {"H", 0.3}, {"sigma", 1.0}}},
            {"grid", {{"dt", 0.0078125}, {"horizon", 1.0}}},
            {"mc", {{"paths", 20000}, {"seed", 20261016}, {"retain_history", false}}}};
  }
  if (name == "exponential-control") {
    return {{"model",
             {{"preset", "exponential-control"}, {"rate", 1.0}, {"x0", 0.3}, {"b", 0.3}, {"beta", -0.7}, {"sigma", 0.3}}},
            {"grid", {{"dt", 0.0078125}, {"horizon", 0.5}}},
            {"mc", {{"paths", 100000}, {"seed", 20261016}, {"retain_history", false}}},
            {"perturbations", json::array({marchaud})},
            {"test", {{"t", 0.5}, {"bins", 64}, {"boot", 500}, {"expect", "MarkovConsistent"}}}};
  }
  throw ConfigError("", "unknown preset '" + name + "'");
}

}  // namespace volterra::cli
