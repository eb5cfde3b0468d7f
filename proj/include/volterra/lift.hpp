#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "volterra/perturb.hpp"
#include "volterra/sim.hpp"

namespace volterra::lift {

using sim::PathEnsemble;

// forward curve x -> X_t(x) of one path at grid time t, all coordinates
struct LiftState {
  double t = 0.0;
  std::size_t k = 0;
  std::vector<double> x_grid;
  std::size_t d = 1;
  std::vector<double> curve;  // d x (M+1), row-major
  double at(std::size_t i, std::size_t j) const { return curve[i * x_grid.size() + j]; }
};

// 0 followed by n geometric points on [dt, horizon]
std::vector<double> default_x_grid(const resolvents::TimeGrid& grid, std::size_t n = 32);

LiftState lift_state(const PathEnsemble& e, std::size_t path, double t, const std::vector<double>& x_grid);

struct FlowReport {
  double residual = 0.0;  // sup over x and coordinates
  double scale = 1.0;     // max(1, sup |X_t+s(x)|)
  std::size_t checked = 0;
};

// X_t+s(x) against S(s)X_t(x) plus the contributions of the cells in (t, t+s]
FlowReport flow_check(const PathEnsemble& e, std::size_t path, double t, double s, const std::vector<double>& x_grid);

// Z channels for a list of functionals of kernel k (same kernel on drift and noise)
std::vector<sim::Perturbation> functional_channels(const kernels::KernelSpec& k,
                                                   const std::vector<perturb::PerturbationSpec>& specs,
                                                   const resolvents::TimeGrid& grid, std::size_t coordinate = 0,
                                                   std::size_t workers = 0);

struct RankOptions {
  std::size_t n_boot = 500;
  double level = 0.95;
  std::uint64_t seed = 1;
  // eigenvalues of the correlation matrix below this count as zero; exactly collinear
  // columns leave eigenvalues of order 1e-15 from rounding
  double zero_tol = 1e-12;
  std::size_t workers = 0;
};

struct RankReport {
  double t = 0.0;
  std::size_t n_paths = 0;
  std::size_t n_functionals = 0;
  std::vector<double> variances;    // per functional
  std::vector<double> eigenvalues;  // correlation matrix, descending
  std::vector<double> ci_lo, ci_hi;
  std::size_t rank = 0;
  std::size_t n_boot = 0;
  double level = 0.95;
  std::string label = "functional-restricted covariance";
};

// spectrum of the empirical correlation of the Z columns at node t over paths, with
// percentile bootstrap CIs; rank counts eigenvalues whose CI lies above zero_tol
RankReport covariance_rank(const PathEnsemble& e, double t, const RankOptions& opt = {});

}  // namespace volterra::lift
