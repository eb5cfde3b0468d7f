#include "volterra/kernels.hpp"

#include <boost/math/special_functions/gamma.hpp>
#include <boost/multiprecision/cpp_bin_float.hpp>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <sstream>

#include "volterra/error.hpp"
#include "volterra/linalg.hpp"
#include "volterra/quad.hpp"

namespace volterra::kernels {

namespace {

constexpr double kPi = std::numbers::pi;

// 1/Gamma(x), zero at the poles
double rgamma(double x) {
  if (x <= 0.0 && x == std::floor(x)) return 0.0;
  return 1.0 / std::tgamma(x);
}

// y^p - x^p for 0 <= x <= y without cancellation
double pow_diff(double x, double y, double p) {
  if (x <= 0.0) return std::pow(y, p);
  return std::pow(x, p) * std::expm1(p * std::log1p((y - x) / x));
}

struct PowerForm {
  double A, rho, s;
};

std::optional<PowerForm> power_form(const KernelSpec& k) {
  const double rho = k.hurst - 0.5;
  switch (k.family) {
    case Family::Fractional: return PowerForm{k.scale / std::tgamma(k.hurst + 0.5), rho, k.shift};
    case Family::Gamma:
      if (k.damping == 0.0) return PowerForm{k.scale, rho, k.shift};
      return std::nullopt;
    case Family::MittagLeffler:
      if (k.damping == 0.0) return PowerForm{k.scale / std::tgamma(k.hurst + 0.5), rho, k.shift};
      return std::nullopt;
    case Family::Constant: return PowerForm{k.scale, 0.0, 0.0};
    default: return std::nullopt;
  }
}

// exponential sum with the shift folded into the weights
std::optional<std::vector<ExpTerm>> exp_form(const KernelSpec& k) {
  std::vector<ExpTerm> out;
  auto fold = [&](const std::vector<ExpTerm>& ts) {
    for (auto e : ts) out.push_back({e.weight * std::exp(-e.rate * k.shift), e.rate});
  };
  switch (k.family) {
    case Family::ExpSum: fold(k.exp_terms); return out;
    case Family::BernsteinQuadrature: fold(k.bernstein_nodes); return out;
    case Family::Constant: out.push_back({k.scale, 0.0}); return out;
    case Family::Fractional:
      if (k.hurst == 0.5) return std::vector<ExpTerm>{{k.scale, 0.0}};
      return std::nullopt;
    case Family::Gamma:
    case Family::MittagLeffler:
      if (k.hurst == 0.5) {
        fold({{k.scale, k.damping}});
        return out;
      }
      return std::nullopt;
    default: return std::nullopt;
  }
}

// int_a^b e^(-r t) dt
double exp_cell(double r, double a, double b) {
  if (r == 0.0) return b - a;
  return std::exp(-r * a) * (-std::expm1(-r * (b - a))) / r;
}

struct Head {
  double p;       // exponent of the power head, or 0 for a constant head
  bool power;
};

Head table_head(const Table& tb) {
  if (tb.t.size() >= 2 && tb.t[0] > 0.0 && tb.v[0] != 0.0 && tb.v[1] != 0.0 &&
      (tb.v[0] > 0) == (tb.v[1] > 0) && tb.v[0] != tb.v[1]) {
    double p = std::log(tb.v[1] / tb.v[0]) / std::log(tb.t[1] / tb.t[0]);
    return {p, true};
  }
  return {0.0, false};
}

double table_eval(const Table& tb, double t) {
  const auto& x = tb.t;
  const auto& y = tb.v;
  if (t < x.front()) {
    auto h = table_head(tb);
    if (!h.power) return y.front();
    if (t <= 0.0) {
      if (h.p < 0.0) fail(ErrorCode::EvalAtSingularity, "table head singular at 0");
      return h.p > 0.0 ? 0.0 : y.front();
    }
    return y.front() * std::pow(t / x.front(), h.p);
  }
  if (t >= x.back()) {
    if (t <= x.back() * (1.0 + 1e-9) + 1e-300) return y.back();
    std::ostringstream os;
    os << "t = " << t << " beyond table range " << x.back();
    fail(ErrorCode::InvalidParams, os.str());
  }
  auto it = std::upper_bound(x.begin(), x.end(), t);
  std::size_t j = static_cast<std::size_t>(it - x.begin());
  const double w = (t - x[j - 1]) / (x[j] - x[j - 1]);
  return y[j - 1] + w * (y[j] - y[j - 1]);
}

// int_a^b of the table (power == 1) or its square (power == 2), exact for the interpolant
double table_integral(const Table& tb, double a, double b, int power) {
  if (b <= a) return 0.0;
  const auto& x = tb.t;
  double s = 0.0;
  if (a < x.front()) {
    const double hb = std::min(b, x.front());
    auto h = table_head(tb);
    const double v0 = tb.v.front();
    if (!h.power) {
      s += std::pow(v0, power) * (hb - a);
    } else {
      const double p = power * h.p + 1.0;
      if (p <= 0.0) fail(ErrorCode::DivergentIntegral, "table head not integrable");
      s += std::pow(v0, power) * std::pow(x.front(), -power * h.p) * pow_diff(a, hb, p) / p;
    }
    a = hb;
    if (b <= a) return s;
  }
  if (b > x.back() * (1.0 + 1e-9)) fail(ErrorCode::InvalidParams, "integral beyond table range");
  b = std::min(b, x.back());
  auto it = std::upper_bound(x.begin(), x.end(), a);
  std::size_t j = static_cast<std::size_t>(it - x.begin());
  if (j == 0) j = 1;
  double lo = a;
  for (; j < x.size() && lo < b; ++j) {
    const double hi = std::min(b, x[j]);
    if (hi > lo) {
      const double ya = table_eval(tb, lo), yb = table_eval(tb, hi);
      if (power == 1)
        s += 0.5 * (hi - lo) * (ya + yb);
      else
        s += (hi - lo) * (ya * ya + ya * yb + yb * yb) / 3.0;
    }
    lo = hi;
  }
  return s;
}

double base_eval(const KernelSpec& k, double t) {
  const double rho = k.hurst - 0.5;
  switch (k.family) {
    case Family::Fractional:
      if (t == 0.0 && rho < 0) fail(ErrorCode::EvalAtSingularity, "fractional kernel at 0");
      return k.scale * std::pow(t, rho) / std::tgamma(k.hurst + 0.5);
    case Family::Gamma:
      if (t == 0.0 && rho < 0) fail(ErrorCode::EvalAtSingularity, "gamma kernel at 0");
      return k.scale * std::pow(t, rho) * std::exp(-k.damping * t);
    case Family::MittagLeffler: {
      const double a = k.hurst + 0.5;
      if (k.hurst == 0.5) return k.scale * std::exp(-k.damping * t);
      if (t == 0.0) {
        if (rho < 0) fail(ErrorCode::EvalAtSingularity, "Mittag-Leffler kernel at 0");
        return 0.0;
      }
      return k.scale * std::pow(t, rho) * mittag_leffler_fn(a, a, -k.damping * std::pow(t, a));
    }
    case Family::ExpSum: {
      double s = 0.0;
      for (const auto& e : k.exp_terms) s += e.weight * std::exp(-e.rate * t);
      return s;
    }
    case Family::BernsteinQuadrature: {
      double s = 0.0;
      for (const auto& e : k.bernstein_nodes) s += e.weight * std::exp(-e.rate * t);
      return s;
    }
    case Family::ParametricClass: {
      const double u0 = t + k.eps0, u2 = t + k.eps2;
      if ((u0 == 0.0 && rho < 0) || (u2 == 0.0 && k.log_exponent < 0))
        fail(ErrorCode::EvalAtSingularity, "parametric kernel at 0");
      const double pw = u0 == 0.0 ? (rho == 0.0 ? 1.0 : 0.0) : std::pow(u0, rho);
      const double lg = u2 == 0.0 ? (k.log_exponent == 0.0 ? std::log(2.0) : 0.0)
                                  : std::log1p(std::pow(u2, k.log_exponent));
      return k.scale * pw * std::exp(-k.damping * (t + k.eps1)) * lg;
    }
    case Family::Constant: return k.scale;
    case Family::TableDefined: return table_eval(*k.table, t);
  }
  return 0.0;
}

const std::vector<double>* breaks_of(const KernelSpec& k) {
  return k.family == Family::TableDefined ? &k.table->t : nullptr;
}

// generic quadrature of f on [a, b] where f ~ t^rho near t = 0
double quad_generic(const quad::Fn& f, double a, double b, double rho, bool singular,
                    const std::vector<double>* breaks, double shift) {
  if (b <= a) return 0.0;
  quad::Options o;
  if (breaks) {
    std::vector<double> pts{a};
    for (double x : *breaks) {
      const double y = x - shift;
      if (y > a && y < b) pts.push_back(y);
    }
    pts.push_back(b);
    double s = 0.0;
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
      if (pts[i] == 0.0 && singular) {
        const double lo = pts[i];
        s += quad::integrate_head([&](double u) { return f(lo + u); }, pts[i + 1] - lo, rho, o);
      } else {
        s += quad::integrate(f, pts[i], pts[i + 1], o);
      }
    }
    return s;
  }
  if (a == 0.0 && singular) return quad::integrate_graded(f, b, std::min(rho, 0.0), o);
  if (a > 0.0 && singular && b > 8.0 * a) {
    double s = 0.0, lo = a;
    while (lo < b) {
      const double hi = std::min(b, 4.0 * lo);
      s += quad::integrate(f, lo, hi, o);
      lo = hi;
    }
    return s;
  }
  return quad::integrate(f, a, b, o);
}

}  // namespace

const char* to_string(Family f) {
  switch (f) {
    case Family::Fractional: return "Fractional";
    case Family::Gamma: return "Gamma";
    case Family::MittagLeffler: return "MittagLeffler";
    case Family::ExpSum: return "ExpSum";
    case Family::ParametricClass: return "ParametricClass";
    case Family::BernsteinQuadrature: return "BernsteinQuadrature";
    case Family::Constant: return "Constant";
    case Family::TableDefined: return "TableDefined";
  }
  return "?";
}

Family family_from_string(const std::string& s) {
  for (auto f : {Family::Fractional, Family::Gamma, Family::MittagLeffler, Family::ExpSum,
                 Family::ParametricClass, Family::BernsteinQuadrature, Family::Constant,
                 Family::TableDefined})
    if (s == to_string(f)) return f;
  fail(ErrorCode::InvalidParams, "unknown kernel family '" + s + "'");
}

KernelSpec KernelSpec::fractional(double H, double c) {
  KernelSpec k;
  k.family = Family::Fractional;
  k.hurst = H;
  k.scale = c;
  validate(k);
  return k;
}

KernelSpec KernelSpec::gamma(double H, double lambda, double c) {
  KernelSpec k;
  k.family = Family::Gamma;
  k.hurst = H;
  k.damping = lambda;
  k.scale = c;
  validate(k);
  return k;
}

KernelSpec KernelSpec::mittag_leffler(double H, double lambda, double c) {
  KernelSpec k;
  k.family = Family::MittagLeffler;
  k.hurst = H;
  k.damping = lambda;
  k.scale = c;
  validate(k);
  return k;
}

KernelSpec KernelSpec::exp_sum(std::vector<ExpTerm> terms) {
  KernelSpec k;
  k.family = Family::ExpSum;
  k.exp_terms = std::move(terms);
  validate(k);
  return k;
}

KernelSpec KernelSpec::exponential(double rate, double c) { return exp_sum({{c, rate}}); }

KernelSpec KernelSpec::parametric(double H, double lambda, double e0, double e1, double e2,
                                  double alpha, double c) {
  KernelSpec k;
  k.family = Family::ParametricClass;
  k.hurst = H;
  k.damping = lambda;
  k.eps0 = e0;
  k.eps1 = e1;
  k.eps2 = e2;
  k.log_exponent = alpha;
  k.scale = c;
  validate(k);
  return k;
}

KernelSpec KernelSpec::bernstein(std::vector<ExpTerm> nodes) {
  KernelSpec k;
  k.family = Family::BernsteinQuadrature;
  k.bernstein_nodes = std::move(nodes);
  validate(k);
  return k;
}

KernelSpec KernelSpec::constant(double c) {
  KernelSpec k;
  k.family = Family::Constant;
  k.scale = c;
  validate(k);
  return k;
}

KernelSpec KernelSpec::tabulated(std::vector<double> t, std::vector<double> v) {
  KernelSpec k;
  k.family = Family::TableDefined;
  k.table = std::make_shared<Table>(Table{std::move(t), std::move(v)});
  validate(k);
  return k;
}

void validate(const KernelSpec& k) {
  auto bad = [](const std::string& m) { fail(ErrorCode::InvalidParams, m); };
  auto finite = [](double x) { return std::isfinite(x); };
  if (!finite(k.shift) || k.shift < 0.0) bad("shift must be finite and >= 0");
  switch (k.family) {
    case Family::Fractional:
    case Family::Gamma:
    case Family::MittagLeffler:
      if (!finite(k.hurst) || k.hurst <= 0.0 || k.hurst >= 1.0) bad("hurst must lie in (0,1)");
      if (!finite(k.damping) || k.damping < 0.0) bad("damping must be >= 0");
      if (!finite(k.scale) || k.scale == 0.0) bad("scale must be finite and nonzero");
      break;
    case Family::ParametricClass:
      if (!finite(k.hurst) || k.hurst >= 1.0) bad("hurst must be < 1");
      if (k.eps0 == 0.0 && k.hurst <= 0.0) bad("hurst <= 0 requires eps0 > 0");
      if (!(k.eps0 >= 0.0 && k.eps1 >= 0.0 && k.eps2 >= 0.0)) bad("shifts must be >= 0");
      if (!finite(k.eps0) || !finite(k.eps1) || !finite(k.eps2)) bad("shifts must be finite");
      if (!(k.log_exponent >= -1.0 && k.log_exponent <= 1.0)) bad("log_exponent must lie in [-1,1]");
      if (!finite(k.damping) || k.damping < 0.0) bad("damping must be >= 0");
      if (!finite(k.scale) || k.scale == 0.0) bad("scale must be finite and nonzero");
      break;
    case Family::ExpSum:
      if (k.exp_terms.empty()) bad("ExpSum needs at least one term");
      for (auto e : k.exp_terms)
        if (!finite(e.weight) || !finite(e.rate) || e.rate < 0.0) bad("ExpSum terms need finite weight, rate >= 0");
      break;
    case Family::BernsteinQuadrature:
      if (k.bernstein_nodes.empty()) bad("Bernstein kernel needs at least one node");
      for (auto e : k.bernstein_nodes)
        if (!finite(e.weight) || e.weight <= 0.0 || !finite(e.rate) || e.rate < 0.0)
          bad("Bernstein nodes need weight > 0, rate >= 0");
      break;
    case Family::Constant:
      if (!finite(k.scale)) bad("constant must be finite");
      break;
    case Family::TableDefined: {
      if (!k.table) bad("TableDefined kernel without table");
      const auto& tb = *k.table;
      if (tb.t.size() < 2 || tb.t.size() != tb.v.size()) bad("table needs >= 2 (t, value) pairs");
      if (tb.t[0] < 0.0) bad("table grid must be nonnegative");
      for (std::size_t i = 1; i < tb.t.size(); ++i)
        if (!(tb.t[i] > tb.t[i - 1])) bad("table grid must be strictly increasing");
      for (double v : tb.v)
        if (!finite(v)) bad("table values must be finite");
      break;
    }
  }
}

double eval(const KernelSpec& k, double t) {
  if (!(t >= 0.0)) fail(ErrorCode::InvalidParams, "kernel evaluated at negative time");
  return base_eval(k, t + k.shift);
}

std::optional<std::vector<ExpTerm>> exp_terms(const KernelSpec& k) { return exp_form(k); }

double increment(const KernelSpec& k, double t, double z) {
  if (!(t >= 0.0) || !(z >= 0.0)) fail(ErrorCode::InvalidParams, "increment needs t, z >= 0");
  if (z == 0.0) return 0.0;
  if (auto p = power_form(k)) {
    const double u = t + p->s;
    if (p->rho == 0.0) return 0.0;
    if (u == 0.0) return eval(k, t + z) - eval(k, t);
    return p->A * std::pow(u, p->rho) * std::expm1(p->rho * std::log1p(z / u));
  }
  if (auto ex = exp_form(k)) {
    double s = 0.0;
    for (const auto& e : *ex) s += e.weight * std::exp(-e.rate * t) * std::expm1(-e.rate * z);
    return s;
  }
  const double u = t + k.shift;
  const double rho = k.hurst - 0.5;
  if (k.family == Family::Gamma && u > 0.0)
    return eval(k, t) * std::expm1(rho * std::log1p(z / u) - k.damping * z);
  if (k.family == Family::ParametricClass) {
    const double u0 = u + k.eps0, u2 = u + k.eps2;
    const double k0 = eval(k, t);
    if (u0 > 0.0 && u2 > 0.0 && k0 != 0.0) {
      double lr = rho * std::log1p(z / u0) - k.damping * z;
      if (k.log_exponent != 0.0) {
        const double a = k.log_exponent;
        const double p0 = std::pow(u2, a);
        const double dp = p0 * std::expm1(a * std::log1p(z / u2));
        const double lf0 = std::log1p(p0);
        const double dlf = std::log1p(dp / (1.0 + p0));
        lr += std::log1p(dlf / lf0);
      }
      return k0 * std::expm1(lr);
    }
  }
  return eval(k, t + z) - eval(k, t);
}

double derivative(const KernelSpec& k, double t) {
  if (!(t > 0.0)) fail(ErrorCode::InvalidParams, "derivative needs t > 0");
  if (auto p = power_form(k)) {
    if (p->rho == 0.0) return 0.0;
    return p->A * p->rho * std::pow(t + p->s, p->rho - 1.0);
  }
  if (auto ex = exp_form(k)) {
    double s = 0.0;
    for (const auto& e : *ex) s -= e.rate * e.weight * std::exp(-e.rate * t);
    return s;
  }
  const double u = t + k.shift;
  const double rho = k.hurst - 0.5;
  if (k.family == Family::Gamma) return eval(k, t) * (rho / u - k.damping);
  if (k.family == Family::ParametricClass) {
    const double u0 = u + k.eps0, u2 = u + k.eps2;
    double r = rho / u0 - k.damping;
    if (k.log_exponent != 0.0) {
      const double a = k.log_exponent, p0 = std::pow(u2, a);
      r += a * p0 / u2 / ((1.0 + p0) * std::log1p(p0));
    }
    return eval(k, t) * r;
  }
  if (k.family == Family::TableDefined) {
    const auto& tb = *k.table;
    const double x = u;
    if (x >= tb.t.front()) {
      auto it = std::upper_bound(tb.t.begin(), tb.t.end(), x);
      std::size_t i = static_cast<std::size_t>(it - tb.t.begin());
      if (i >= tb.t.size()) return 0.0;
      return (tb.v[i] - tb.v[i - 1]) / (tb.t[i] - tb.t[i - 1]);
    }
  }
  // Richardson on central differences, step kept inside (0, inf)
  const double h = 1e-3 * t;
  auto c = [&](double s) { return (eval(k, t + s) - eval(k, t - s)) / (2.0 * s); };
  return (4.0 * c(h / 2) - c(h)) / 3.0;
}

bool is_singular(const KernelSpec& k) {
  if (k.shift > 0.0) return false;
  const double rho = k.hurst - 0.5;
  switch (k.family) {
    case Family::Fractional:
    case Family::Gamma:
    case Family::MittagLeffler: return rho < 0.0;
    case Family::ParametricClass:
      return (k.eps0 == 0.0 && rho < 0.0) || (k.eps2 == 0.0 && k.log_exponent < 0.0);
    case Family::TableDefined: {
      auto h = table_head(*k.table);
      return k.table->t.front() > 0.0 && h.power && h.p < 0.0;
    }
    default: return false;
  }
}

double leading_index(const KernelSpec& k) {
  if (k.shift > 0.0) return 0.0;
  switch (k.family) {
    case Family::Fractional:
    case Family::Gamma:
    case Family::MittagLeffler: return k.hurst - 0.5;
    case Family::ParametricClass: return k.eps0 == 0.0 ? k.hurst - 0.5 : 0.0;
    case Family::TableDefined: {
      auto h = table_head(*k.table);
      return (k.table->t.front() > 0.0 && h.power) ? h.p : 0.0;
    }
    default: return 0.0;
  }
}

double growth_index(const KernelSpec& k) {
  switch (k.family) {
    case Family::Fractional:
    case Family::Gamma:
    case Family::MittagLeffler:
    case Family::ParametricClass: return std::max(0.0, k.hurst - 0.5);
    default: return 0.0;
  }
}

bool is_completely_monotone(const KernelSpec& k) {
  switch (k.family) {
    case Family::Fractional:
    case Family::Gamma:
    case Family::MittagLeffler: return k.hurst <= 0.5 && k.scale > 0.0;
    case Family::ParametricClass: return k.hurst <= 0.5 && k.scale > 0.0 && k.log_exponent <= 0.0;
    case Family::ExpSum: {
      bool any = false;
      for (auto e : k.exp_terms) {
        if (e.weight < 0.0) return false;
        any = any || e.weight > 0.0;
      }
      return any;
    }
    case Family::BernsteinQuadrature: return true;
    case Family::Constant: return k.scale > 0.0;
    case Family::TableDefined: return false;
  }
  return false;
}

std::optional<double> value_at_zero(const KernelSpec& k) {
  if (is_singular(k)) return std::nullopt;
  return eval(k, 0.0);
}

std::optional<double> value_at_infinity(const KernelSpec& k) {
  const double rho = k.hurst - 0.5;
  switch (k.family) {
    case Family::Constant: return k.scale;
    case Family::ExpSum:
    case Family::BernsteinQuadrature: {
      const auto& ts = k.family == Family::ExpSum ? k.exp_terms : k.bernstein_nodes;
      double s = 0.0;
      for (auto e : ts)
        if (e.rate == 0.0) s += e.weight;
      return s;
    }
    case Family::Fractional:
      if (rho < 0) return 0.0;
      if (rho == 0) return k.scale;
      return std::nullopt;
    case Family::Gamma:
    case Family::MittagLeffler:
      if (k.damping > 0.0 || rho < 0) return 0.0;
      if (rho == 0) return k.scale;
      return std::nullopt;
    case Family::ParametricClass:
      if (k.damping > 0.0) return 0.0;
      if (k.log_exponent < 0.0) return rho + k.log_exponent < 0.0 ? std::optional<double>(0.0) : std::nullopt;
      if (rho < 0) return 0.0;
      if (rho == 0 && k.log_exponent == 0.0) return k.scale * std::log(2.0);
      return std::nullopt;
    case Family::TableDefined: return std::nullopt;
  }
  return std::nullopt;
}

double slowly_varying_factor(const KernelSpec& k, double t) {
  if (k.family != Family::ParametricClass || k.log_exponent == 0.0) return 1.0;
  return std::log1p(std::pow(t + k.eps2 + k.shift, k.log_exponent));
}

bool derivative_eventually_monotone(const KernelSpec& k) {
  std::vector<double> d;
  for (int i = 40; i >= 0; --i) {
    const double t = 1e-3 * std::pow(2.0, -0.5 * i);
    const double h = 1e-3 * t;
    d.push_back((eval(k, t + h) - eval(k, t)) / h);
  }
  bool inc = true, dec = true;
  for (std::size_t i = 1; i < d.size(); ++i) {
    inc = inc && d[i] >= d[i - 1];
    dec = dec && d[i] <= d[i - 1];
  }
  return inc || dec;
}

double integral(const KernelSpec& k, double a, double b) {
  if (b <= a) return 0.0;
  if (auto p = power_form(k)) {
    const double e = p->rho + 1.0;
    return p->A * pow_diff(a + p->s, b + p->s, e) / e;
  }
  if (auto ex = exp_form(k)) {
    double s = 0.0;
    for (auto e : *ex) s += e.weight * exp_cell(e.rate, a, b);
    return s;
  }
  if (k.family == Family::TableDefined) return table_integral(*k.table, a + k.shift, b + k.shift, 1);
  return quad_generic([&](double t) { return eval(k, t); }, a, b, leading_index(k), is_singular(k),
                      nullptr, 0.0);
}

double integral_sq(const KernelSpec& k, double a, double b) { return integral_product(k, k, a, b); }

double integral_product(const KernelSpec& k1, const KernelSpec& k2, double a, double b) {
  if (b <= a) return 0.0;
  auto p1 = power_form(k1), p2 = power_form(k2);
  if (p1 && p2 && p1->s == p2->s) {
    const double e = p1->rho + p2->rho + 1.0;
    if (e <= 0.0) fail(ErrorCode::DivergentIntegral, "product of kernels not integrable at 0");
    return p1->A * p2->A * pow_diff(a + p1->s, b + p1->s, e) / e;
  }
  auto e1 = exp_form(k1), e2 = exp_form(k2);
  if (e1 && e2) {
    double s = 0.0;
    for (auto x : *e1)
      for (auto y : *e2) s += x.weight * y.weight * exp_cell(x.rate + y.rate, a, b);
    return s;
  }
  if (&k1 == &k2 && k1.family == Family::TableDefined)
    return table_integral(*k1.table, a + k1.shift, b + k1.shift, 2);
  const std::vector<double>* br = breaks_of(k1);
  double sh = k1.shift;
  if (!br) {
    br = breaks_of(k2);
    sh = k2.shift;
  }
  const bool sing = is_singular(k1) || is_singular(k2);
  const double rho = leading_index(k1) + leading_index(k2);
  if (sing && rho <= -1.0) fail(ErrorCode::DivergentIntegral, "product of kernels not integrable at 0");
  return quad_generic([&](double t) { return eval(k1, t) * eval(k2, t); }, a, b, rho, sing, br, sh);
}

double mittag_leffler_fn(double a, double b, double z) {
  if (!(a > 0.0 && a < 2.0) || !(b > 0.0)) fail(ErrorCode::InvalidParams, "Mittag-Leffler parameters");
  if (z > 0.0) fail(ErrorCode::InvalidParams, "Mittag-Leffler evaluated for z > 0");
  const double x = -z;
  if (x == 0.0) return rgamma(b);
  if (a == 1.0 && b == 1.0) return std::exp(-x);
  const double series_limit = a < 1.0 ? 4.0 : 15.0;
  if (x <= series_limit) {
    long double s = 0.0L, p = 1.0L;
    for (int k = 0; k < 400; ++k) {
      const long double term = p / std::tgamma(static_cast<long double>(a) * k + b);
      s += term;
      if (k > 5 && std::fabs(term) < 1e-22L * std::fabs(s)) break;
      p *= -static_cast<long double>(x);
    }
    return static_cast<double>(s);
  }
  if (a < 1.0) {
    if (b != a) fail(ErrorCode::InvalidParams, "Mittag-Leffler: large argument needs b = a when a < 1");
    // Laplace representation of t^(a-1) E_{a,a}(-x t^a) scaled to t = 1
    const double sn = std::sin(a * kPi), cs = std::cos(a * kPi);
    auto f = [&](double s) {
      if (s <= 0.0) return 0.0;
      const double sa = std::pow(s, a);
      return std::exp(-s) * sa / (sa * sa + 2.0 * x * sa * cs + x * x);
    };
    quad::Options o;
    o.rel_tol = 1e-13;
    double peak = std::pow(x, 1.0 / a);
    std::vector<double> pts{0.0};
    for (double c : {0.25 * peak, peak, 4.0 * peak})
      if (c < 60.0) pts.push_back(c);
    pts.push_back(std::max(60.0, 8.0 * peak));
    double s = quad::integrate_head(f, pts[1], a, o);
    for (std::size_t i = 1; i + 1 < pts.size(); ++i) s += quad::integrate(f, pts[i], pts[i + 1], o);
    return sn / kPi * s;
  }
  // 1 <= a < 2: the series is summed in 50-digit arithmetic while its largest term,
  // about exp(x^(1/a)), stays far below 10^50; beyond that the algebraic asymptotic
  // series plus the oscillating exponential pair is accurate to exp(-60)
  if (std::pow(x, 1.0 / a) <= 60.0) {
    using mp = boost::multiprecision::cpp_bin_float_50;
    const mp A(a), B(b), X(-x);
    mp s = 0, p = 1;
    for (int k = 0; k < 5000; ++k) {
      const mp term = p / boost::math::tgamma(A * k + B);
      s += term;
      if (k > 5 && abs(term) < mp(1e-25) * abs(s)) break;
      p *= X;
    }
    return static_cast<double>(s);
  }
  double s = 0.0;
  for (int k = 1; k <= 20; ++k) s -= std::pow(-x, -k) * rgamma(b - a * k);
  if (a > 1.0) {
    const std::complex<double> zeta = std::polar(std::pow(x, 1.0 / a), kPi / a);
    s += 2.0 / a * std::real(std::pow(zeta, 1.0 - b) * std::exp(zeta));
  }
  return s;
}

IncrementScan l2_increment_scan(const KernelSpec& k, double T, const std::vector<double>& h_list) {
  if (h_list.size() < 2) fail(ErrorCode::InvalidParams, "need at least two h values");
  IncrementScan out;
  const bool sing = is_singular(k);
  const double rho = leading_index(k);
  std::vector<double> lx, ly;
  for (double h : h_list) {
    if (!(h > 0.0) || h > T) fail(ErrorCode::InvalidParams, "h must lie in (0, T]");
    // squared increments are cancellation limited for tiny h, so the tolerance is tied
    // to the local term int_0^h k^2, a lower bound of I(h)
    const double local = integral_sq(k, 0.0, h);
    quad::Options o;
    o.rel_tol = 1e-9;
    o.max_depth = 12;
    o.abs_tol = 1e-9 * local;
    o.fail_tol = 1e-5;
    auto inc = [&](double r) {
      const double d = eval(k, r + h) - eval(k, r);
      return d * d;
    };
    double I = 0.0;
    if (k.family != Family::Constant) {
      const double d = std::min(h, T);
      I += sing ? quad::integrate_head(inc, d, 2.0 * rho, o) : quad::integrate(inc, 0.0, d, o);
      double lo = d;
      while (lo < T) {
        const double hi = std::min(T, 4.0 * lo);
        I += quad::integrate(inc, lo, hi, o);
        lo = hi;
      }
    }
    I += local;
    out.h.push_back(h);
    out.value.push_back(I);
    if (I > 0.0) {
      lx.push_back(std::log(h));
      ly.push_back(std::log(I));
    }
  }
  auto fit = linalg::fit_line(lx, ly);
  out.gamma_K = 0.5 * fit.slope;
  out.r2 = fit.r2;
  return out;
}

std::optional<double> bernstein_density(const KernelSpec& k, double x) {
  if (!(x > 0.0)) return std::nullopt;
  const double H = k.hurst;
  const double damp = std::exp(-k.shift * x);
  switch (k.family) {
    case Family::Fractional:
      if (H >= 0.5) return std::nullopt;
      return damp * k.scale * std::pow(x, -H - 0.5) / (std::tgamma(H + 0.5) * std::tgamma(0.5 - H));
    case Family::Gamma:
      if (H >= 0.5) return std::nullopt;
      if (x <= k.damping) return 0.0;
      return damp * k.scale * std::pow(x - k.damping, -H - 0.5) / std::tgamma(0.5 - H);
    case Family::MittagLeffler: {
      if (H >= 0.5) return std::nullopt;
      const double a = H + 0.5, l = k.damping, xa = std::pow(x, a);
      return damp * k.scale / kPi * xa * std::sin(a * kPi) /
             (xa * xa + 2.0 * l * xa * std::cos(a * kPi) + l * l);
    }
    default: return std::nullopt;
  }
}

double max_rel_error(const KernelSpec& approx, const KernelSpec& k, double lo, double hi, int n) {
  double m = 0.0;
  for (int i = 0; i < n; ++i) {
    const double t = lo * std::pow(hi / lo, static_cast<double>(i) / (n - 1));
    const double v = eval(k, t);
    m = std::max(m, std::abs(eval(approx, t) - v) / std::abs(v));
  }
  return m;
}

BernsteinFit bernstein_quadrature(const KernelSpec& k, int n_nodes, double T) {
  if (n_nodes < 2 || !(T > 0.0)) fail(ErrorCode::InvalidParams, "bernstein_quadrature needs n >= 2, T > 0");
  if (!is_completely_monotone(k)) fail(ErrorCode::NotCompletelyMonotone, "kernel is not completely monotone");
  if (auto ex = exp_form(k)) {
    if (static_cast<int>(ex->size()) > n_nodes)
      fail(ErrorCode::InvalidParams, "fewer nodes than exponential terms");
    std::vector<ExpTerm> nodes;
    for (auto e : *ex)
      if (e.weight > 0.0) nodes.push_back(e);
    return {KernelSpec::bernstein(nodes), 0.0};
  }
  if (k.family != Family::Fractional && k.family != Family::Gamma && k.family != Family::MittagLeffler)
    fail(ErrorCode::NotCompletelyMonotone, "no Bernstein density known for this family");

  // rates x = x0 + y; density in y with a power behaviour y^idx near 0
  const double x0 = k.family == Family::Gamma ? k.damping : 0.0;
  double idx = -k.hurst - 0.5;
  if (k.family == Family::MittagLeffler && k.damping > 0.0) idx = k.hurst + 0.5;
  auto dens = [&](double y) {
    if (k.family != Family::Gamma) return *bernstein_density(k, x0 + y);
    return std::exp(-k.shift * (x0 + y)) * k.scale * std::pow(y, -k.hurst - 0.5) / std::tgamma(0.5 - k.hurst);
  };

  const double t_min = T / 1000.0;
  const double y_lo = 1e-2 / T, y_hi = 50.0 / t_min;
  quad::Options o;
  o.rel_tol = 1e-12;
  const double mass = quad::integrate_head(dens, y_lo, idx, o);
  const double mean = quad::integrate_head([&](double y) { return y * dens(y); }, y_lo, idx + 1.0, o) / mass;

  std::vector<double> gx, gw;
  quad::gauss_legendre(n_nodes - 1, gx, gw);
  const double ua = std::log(y_lo), ub = std::log(y_hi), hw = 0.5 * (ub - ua), mid = 0.5 * (ua + ub);
  std::vector<ExpTerm> nodes;
  nodes.push_back({mass, x0 + mean});
  for (std::size_t i = 0; i < gx.size(); ++i) {
    const double y = std::exp(mid + hw * gx[i]);
    const double w = gw[i] * hw * dens(y) * y;
    if (w > 0.0) nodes.push_back({w, x0 + y});
  }
  BernsteinFit fit{KernelSpec::bernstein(nodes), 0.0};
  fit.max_rel_error = max_rel_error(fit.kernel, k, t_min, T);
  return fit;
}

MatrixKernelSpec MatrixKernelSpec::make(
    std::size_t d, std::vector<std::vector<std::pair<std::size_t, KernelSpec>>> rows) {
  MatrixKernelSpec m;
  m.N = rows.size();
  m.d = d;
  m.rows = std::move(rows);
  m.diagonal_like = true;
  for (const auto& r : m.rows) {
    for (const auto& [c, k] : r) {
      if (c >= d) fail(ErrorCode::InvalidParams, "column index out of range");
      validate(k);
    }
    if (r.size() != 1) m.diagonal_like = false;
  }
  return m;
}

MatrixKernelSpec MatrixKernelSpec::column(const std::vector<KernelSpec>& ks) {
  std::vector<std::vector<std::pair<std::size_t, KernelSpec>>> rows;
  for (const auto& k : ks) rows.push_back({{0, k}});
  return make(1, std::move(rows));
}

MatrixKernelSpec MatrixKernelSpec::diagonal(const std::vector<KernelSpec>& ks) {
  std::vector<std::vector<std::pair<std::size_t, KernelSpec>>> rows;
  for (std::size_t i = 0; i < ks.size(); ++i) rows.push_back({{i, ks[i]}});
  return make(ks.size(), std::move(rows));
}

std::vector<std::vector<std::size_t>> MatrixKernelSpec::partition() const {
  if (!diagonal_like) fail(ErrorCode::InvalidParams, "partition requires a diagonal-like system");
  std::vector<std::vector<std::size_t>> s(d);
  for (std::size_t l = 0; l < N; ++l) s[rows[l][0].first].push_back(l);
  return s;
}

const KernelSpec* MatrixKernelSpec::at(std::size_t row, std::size_t col) const {
  for (const auto& [c, k] : rows.at(row))
    if (c == col) return &k;
  return nullptr;
}

}  // namespace volterra::kernels
