#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "volterra/kernels.hpp"

namespace volterra::resolvents {

using kernels::KernelSpec;

struct TimeGrid {
  double dt = 0.0;
  std::size_t n_steps = 0;

  static TimeGrid make(double dt, double horizon);
  double horizon() const { return dt * static_cast<double>(n_steps); }
  double node(std::size_t i) const { return dt * static_cast<double>(i); }
  // index of a time that must be a grid node; GridMismatch otherwise
  std::size_t index_of(double t) const;
};

// exact kernel integrals over the cells ((m-1)dt, m dt], m = 1..n (w[0] = 0),
// and optionally over half cells ((k-1)dt/2, k dt/2], k = 1..2n (half[0] = 0)
struct CellWeights {
  double dt = 0.0;
  std::vector<double> w;
  std::vector<double> half;
};

CellWeights cell_weights(const KernelSpec& k, double dt, std::size_t n, bool with_half = false);
// (int_cell k^2)/dt per cell, index 1..n
std::vector<double> cell_sq_means(const KernelSpec& k, double dt, std::size_t n);

// L = atom delta_0 + L0 with L0 piecewise constant on cells; E_K piecewise constant cell
// averages with node values; both on the same grid
struct ResolventTables {
  TimeGrid grid;
  KernelSpec kernel;
  double beta = 0.0;
  double atom = 0.0;
  bool has_L = false;
  bool has_E = false;
  std::vector<double> w;        // kernel cell integrals, index 1..n
  std::vector<double> L0;       // cell values, index 1..n
  std::vector<double> EK;       // node values E_K(t_i), EK[0] = K(0) (inf when singular)
  std::vector<double> EK_cell;  // cell averages, index 1..n
  std::vector<double> KE;       // (K * E_K)(t_i)
  double residual = 0.0;        // sup over cell midpoints of |(K*L) - 1|
  double residual_tail = 0.0;   // the same restricted to t >= tail_from
  double tail_from = 0.0;
  std::size_t residual_argmax = 0;
};

ResolventTables resolvent_first_kind(const KernelSpec& k, const TimeGrid& grid);
ResolventTables resolvent_EK(const KernelSpec& k, double beta, const TimeGrid& grid);
// both parts on one grid
ResolventTables build_tables(const KernelSpec& k, double beta, const TimeGrid& grid);

// (K*L)(tau) - 1 at the cell midpoints tau = (i - 1/2) dt, i = 1..n
std::vector<double> midpoint_residuals(const ResolventTables& tb);

struct PiTable {
  double z = 0.0;
  std::size_t p = 0;         // z = p dt
  std::size_t n_out = 0;     // Pi, Kz defined on nodes 0..n_out
  std::vector<double> Pi;    // Pi_z(t_i)
  std::vector<double> dPi;   // masses on cells (t_{i-1}, t_i], index 1..n_out
  std::vector<double> Kz;    // K_z(t_i), index 1..n_out (Kz[0] unused)
  double route_discrepancy = 0.0;
  bool degenerate = false;   // dPi vanishes to tolerance (L0' = 0)
  bool has_Kz = false;
};

PiTable pi_z(const ResolventTables& tb, double z, double tolerance = -1.0);

struct KzReport {
  double f = 0.0;             // |beta| sup_{u <= z} |(K*E_K)(u)| / K(z)
  double min_ratio = 0.0;
  double max_ratio = 0.0;
  double max_violation = 0.0;
  std::size_t checked = 0;
  bool ok = true;
};

// fills pi.Kz and checks the sandwich (1-f) <= K_z / (K(.+z) - K(z) K(0)^-1 K) <= 1+f
KzReport kz_kernel(const ResolventTables& tb, PiTable& pi, double slack = 1e-2,
                   bool throw_on_violation = true);

struct CondExpCoeffs {
  std::size_t k = 0;          // t = k dt
  std::size_t p = 0;          // T - t = p dt
  double c0 = 0.0;
  double c1_x0 = 0.0;
  double c2 = 0.0;
  std::vector<double> masses; // dPi masses on (s_{j-1}, s_j], j = 1..k
};

CondExpCoeffs cond_exp_coeffs(const ResolventTables& tb, const PiTable& pi, double t, double T,
                              double b, double x0);

// E[X_T | F_t] from the path values X_0..X_k; each mass is applied to the mean of
// the two path values bounding its cell
double cond_exp_apply(const CondExpCoeffs& c, std::span<const double> x_path);

}  // namespace volterra::resolvents
