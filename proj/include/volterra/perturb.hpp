#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "volterra/kernels.hpp"
#include "volterra/resolvents.hpp"

namespace volterra::perturb {

using kernels::KernelSpec;

enum class Kind { Shift, Constant, Derivative, MarchaudDerivative, FractionalIntegral };

const char* to_string(Kind k);
Kind kind_from_string(const std::string& s);

// nu(dz) = e^(-lambda z) z^(-1-alpha) dz for the derivative,
// e^(-lambda z) z^(alpha-1) / Gamma(alpha) dz for the integral.
// only lambda_tilt > 0 is implemented.
struct PerturbationSpec {
  Kind kind = Kind::MarchaudDerivative;
  double alpha = 0.1;
  double lambda_tilt = 1.0;
  double shift_z = 0.0;
  std::size_t coordinate = 0;
  std::optional<double> tail_cut;  // Z_max; default where e^(-lambda Z_max) < 1e-16

  void validate() const;
};

struct PointValue {
  double value = 0.0;
  double tail_bound = 0.0;  // bound on the mass discarded beyond Z_max
};

// k~(t) of the Marchaud forward derivative at one point
PointValue marchaud_value(const KernelSpec& k, const PerturbationSpec& spec, double t);
// k~(t) of the forward fractional integral at one point
PointValue fractional_integral_value(const KernelSpec& k, const PerturbationSpec& spec, double t);

struct PerturbResult {
  KernelSpec kernel;               // TableDefined on the evaluation nodes
  std::vector<double> t;
  std::vector<double> value;
  double tail_bound = 0.0;         // max over nodes
  double z_max = 0.0;
  // k~(t) / (t^-alpha k(t)) per node, Marchaud only
  std::vector<double> ratio_trace;
  std::optional<double> c_alpha;
};

// tables on t_1..t_n of the grid (t_0 is skipped: the result may be singular there)
PerturbResult marchaud_forward(const KernelSpec& k, const PerturbationSpec& spec,
                               const resolvents::TimeGrid& grid, std::size_t workers = 0);
PerturbResult fractional_integral_perturb(const KernelSpec& k, const PerturbationSpec& spec,
                                          const resolvents::TimeGrid& grid, std::size_t workers = 0);
// same on arbitrary increasing positive nodes
PerturbResult marchaud_on_nodes(const KernelSpec& k, const PerturbationSpec& spec,
                                const std::vector<double>& nodes, std::size_t workers = 0);
PerturbResult fractional_integral_on_nodes(const KernelSpec& k, const PerturbationSpec& spec,
                                           const std::vector<double>& nodes, std::size_t workers = 0);

// int_0^inf ((1+u)^rho - 1) u^(-1-alpha) du, max{0, rho} < alpha < 1
double C_alpha(double rho, double alpha, double split = 1.0);

KernelSpec shift_perturb(const KernelSpec& k, double z);

// dispatch on spec.kind; Shift and Constant stay analytic, the others are tabulated
KernelSpec apply(const KernelSpec& k, const PerturbationSpec& spec, const resolvents::TimeGrid& grid);

// relative L2([0,T]) residual of candidate after projection onto the exponentials of k;
// tabulated candidates are compared on the grid nodes in (0, T]
double exp_span_project(const KernelSpec& k, const KernelSpec& candidate, double T,
                        const resolvents::TimeGrid& grid);

}  // namespace volterra::perturb
