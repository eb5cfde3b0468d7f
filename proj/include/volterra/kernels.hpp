#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace volterra::kernels {

enum class Family {
  Fractional,
  Gamma,
  MittagLeffler,
  ExpSum,
  ParametricClass,
  BernsteinQuadrature,
  Constant,
  TableDefined,
};

const char* to_string(Family f);
Family family_from_string(const std::string& s);

struct ExpTerm {
  double weight = 0.0;
  double rate = 0.0;
};

// piecewise linear samples; below t.front() a power law through the first two nodes
struct Table {
  std::vector<double> t;
  std::vector<double> v;
};

// immutable description of a scalar kernel.
//   Fractional      c t^(H-1/2) / Gamma(H+1/2)
//   Gamma           c t^(H-1/2) e^(-lambda t)
//   MittagLeffler   c t^(a-1) E_{a,a}(-lambda t^a), a = H+1/2
//   ExpSum          sum a_j e^(-lambda_j t)
//   ParametricClass c (t+e0)^(H-1/2) e^(-lambda (t+e1)) log(1 + (t+e2)^alpha)
//   Bernstein       sum w_i e^(-x_i t)
//   Constant        c
// every family is evaluated at t + shift.
struct KernelSpec {
  Family family = Family::Constant;
  double hurst = 0.5;
  double damping = 0.0;
  double eps0 = 0.0, eps1 = 0.0, eps2 = 0.0;
  double log_exponent = 0.0;
  double scale = 1.0;
  double shift = 0.0;
  std::vector<ExpTerm> exp_terms;
  std::vector<ExpTerm> bernstein_nodes;
  std::shared_ptr<const Table> table;

  static KernelSpec fractional(double H, double c = 1.0);
  static KernelSpec gamma(double H, double lambda, double c = 1.0);
  static KernelSpec mittag_leffler(double H, double lambda, double c = 1.0);
  static KernelSpec exp_sum(std::vector<ExpTerm> terms);
  static KernelSpec exponential(double rate, double c = 1.0);
  static KernelSpec parametric(double H, double lambda, double e0, double e1, double e2,
                               double alpha, double c = 1.0);
  static KernelSpec bernstein(std::vector<ExpTerm> nodes);
  static KernelSpec constant(double c);
  static KernelSpec tabulated(std::vector<double> t, std::vector<double> v);
};

// throws InvalidParams outside the admissible region
void validate(const KernelSpec& k);

double eval(const KernelSpec& k, double t);
bool is_singular(const KernelSpec& k);
// the kernel as a finite exponential sum (shift folded into the weights) when it is one
std::optional<std::vector<ExpTerm>> exp_terms(const KernelSpec& k);
// k(t+z) - k(t) without cancellation for the closed-form families
double increment(const KernelSpec& k, double t, double z);
// k'(t), t > 0; analytic where available, Richardson differences otherwise
double derivative(const KernelSpec& k, double t);
// k(t) ~ t^rho near 0 (0 for kernels bounded at 0)
double leading_index(const KernelSpec& k);
// growth bound beta = (H - 1/2)_+ used by the Marchaud construction
double growth_index(const KernelSpec& k);
bool is_completely_monotone(const KernelSpec& k);
std::optional<double> value_at_zero(const KernelSpec& k);
// K(infinity) if it exists
std::optional<double> value_at_infinity(const KernelSpec& k);
// the slowly varying factor at t (1 unless log-modulated)
double slowly_varying_factor(const KernelSpec& k, double t);

// sampled monotonicity of the first derivative on a geometric grid in (0, 1e-3];
// a heuristic only
bool derivative_eventually_monotone(const KernelSpec& k);

// int_a^b k, int_a^b k^2, int_a^b k1 k2
double integral(const KernelSpec& k, double a, double b);
double integral_sq(const KernelSpec& k, double a, double b);
double integral_product(const KernelSpec& k1, const KernelSpec& k2, double a, double b);

// E_{a,b}(z) for real z <= 0, 0 < a < 2
double mittag_leffler_fn(double a, double b, double z);

struct IncrementScan {
  std::vector<double> h;
  std::vector<double> value;
  double gamma_K = 0.0;
  double r2 = 0.0;
};

// I(h) = int_0^T |k(r+h)-k(r)|^2 dr + int_0^h k^2, slope of log I / log h halved
IncrementScan l2_increment_scan(const KernelSpec& k, double T, const std::vector<double>& h_list);

// Bernstein density of k at x > 0 if the family has one
std::optional<double> bernstein_density(const KernelSpec& k, double x);

struct BernsteinFit {
  KernelSpec kernel;
  double max_rel_error = 0.0;
};

BernsteinFit bernstein_quadrature(const KernelSpec& k, int n_nodes, double T);

// max relative error of an exponential sum against k on a log grid of [lo, hi]
double max_rel_error(const KernelSpec& approx, const KernelSpec& k, double lo, double hi,
                     int n = 200);

struct MatrixKernelSpec {
  std::size_t N = 0;
  std::size_t d = 0;
  std::vector<std::vector<std::pair<std::size_t, KernelSpec>>> rows;
  bool diagonal_like = false;

  static MatrixKernelSpec make(std::size_t d,
                               std::vector<std::vector<std::pair<std::size_t, KernelSpec>>> rows);
  // N rows, all in column 0
  static MatrixKernelSpec column(const std::vector<KernelSpec>& ks);
  static MatrixKernelSpec diagonal(const std::vector<KernelSpec>& ks);

  // S_i = rows whose single nonzero entry sits in column i (diagonal-like only)
  std::vector<std::vector<std::size_t>> partition() const;
  // entry (row, col) if present
  const KernelSpec* at(std::size_t row, std::size_t col) const;
};

}  // namespace volterra::kernels
