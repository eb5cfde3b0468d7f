#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "volterra/kernels.hpp"
#include "volterra/resolvents.hpp"

namespace volterra::sim {

using kernels::KernelSpec;
using resolvents::TimeGrid;

// diffusion weights: "cell-average" int_cell K / dt, "variance-exact" (int_cell K^2 / dt)^(1/2)
enum class WeightMode { CellAverage, VarianceExact };

const char* to_string(WeightMode m);
WeightMode weight_mode_from_string(const std::string& s);

enum class DiffusionKind { Constant, Affine, SquareRoot };

const char* to_string(DiffusionKind k);
DiffusionKind diffusion_kind_from_string(const std::string& s);

// coefficient of coordinate i, driven by x = X[source]:
//   Constant   sigma0
//   Affine     sigma0 + sigma1 x
//   SquareRoot sigma0 sqrt(x+)
struct DiffusionTerm {
  DiffusionKind kind = DiffusionKind::Constant;
  double sigma0 = 1.0;
  double sigma1 = 0.0;
  std::size_t source = 0;
};

// X_i(t) = g_i(t) + int K^b_i(t-s) (b + beta X_s)_i ds + int K^s_i(t-s) s_i(X_s) dM_i(s),
// M = L B with L lower triangular (identity when empty). kernels are diagonal.
struct ModelSpec {
  std::string name = "custom";
  std::size_t d = 1;
  std::vector<KernelSpec> kernel_b;
  std::vector<KernelSpec> kernel_sigma;
  std::vector<double> b;
  std::vector<double> beta;              // d x d row-major
  std::vector<DiffusionTerm> diffusion;
  std::vector<double> noise_chol;        // d x d row-major, lower triangular
  std::vector<KernelSpec> g;             // initial curves
  WeightMode mode = WeightMode::CellAverage;
  double blowup_bound = 1e6;

  void validate() const;
  // coordinate whose own diffusion is a square root of itself (kept nonnegative)
  bool square_root(std::size_t i) const;
  double drift(std::size_t i, const double* x) const;
  double diffusion_coef(std::size_t i, const double* x) const;
};

// presets
ModelSpec volterra_cir(const KernelSpec& k, double x0, double b, double beta, double sigma);
ModelSpec rough_heston(double H, double lambda, double theta, double nu, double rho, double v0,
                       double y0 = 0.0, double r = 0.0);
ModelSpec gaussian_fractional(double H, double sigma = 1.0);
ModelSpec exponential_control(double rate = 1.0, double x0 = 0.3, double b = 0.3, double beta = -0.7,
                              double sigma = 0.3);
ModelSpec brownian();

// kernels of an additional process Z = kb * b(X) + ks * s(X) dM, read off coordinate `coordinate`
struct Perturbation {
  KernelSpec kb;
  KernelSpec ks;
  std::size_t coordinate = 0;
  static Perturbation same(const KernelSpec& k, std::size_t coordinate = 0) { return {k, k, coordinate}; }
};

struct PathEnsemble {
  TimeGrid grid;
  ModelSpec model;
  std::vector<Perturbation> perturbations;
  std::size_t n_paths = 0;
  std::size_t d = 1;
  std::size_t n_pert = 0;
  std::uint64_t seed = 0;
  bool retained = false;
  std::vector<double> X;       // [path][node][coordinate]
  std::vector<double> Z;       // [path][node][perturbation]
  std::vector<double> dM;      // [path][node][coordinate] correlated increments on (t_n, t_n+1]
  std::vector<double> drift;   // [path][node][coordinate] b(t_n, X_n)
  std::vector<double> diff;    // [path][node][coordinate] s(t_n, X_n)
  std::size_t truncation_events = 0;  // raw square-root states that were below 0
  std::vector<double> w_b, w_s;       // per coordinate, (n_steps+1) each; index 0 unused

  std::size_t nodes() const { return grid.n_steps + 1; }
  double x(std::size_t p, std::size_t n, std::size_t i = 0) const { return X[(p * nodes() + n) * d + i]; }
  double z(std::size_t p, std::size_t n, std::size_t q = 0) const { return Z[(p * nodes() + n) * n_pert + q]; }
};

struct SimOptions {
  bool retain_history = false;
  bool fast_exponential = true;   // O(n) recursion for exponential-sum kernels
  std::size_t workers = 0;
};

// drift and diffusion convolution weights for one kernel
std::vector<double> drift_weights(const KernelSpec& k, const TimeGrid& grid);
std::vector<double> diffusion_weights(const KernelSpec& k, const TimeGrid& grid, WeightMode mode);

PathEnsemble simulate_sve(const ModelSpec& model, const TimeGrid& grid, std::size_t n_paths, std::uint64_t seed,
                          const SimOptions& opt = {});
PathEnsemble simulate_with_perturbation(const ModelSpec& model, const TimeGrid& grid, std::size_t n_paths,
                                        std::uint64_t seed, const std::vector<Perturbation>& perturbations,
                                        const SimOptions& opt = {});

// g(t_k + x) plus the contributions of steps j < k to X at time t_k + x, for every x in offsets
// (the forward curve of the time-shift lift); weights are exact cell integrals of K(t_k + x - .)
std::vector<double> forward_curve(const PathEnsemble& e, std::size_t path, std::size_t k, std::size_t coordinate,
                                  const std::vector<double>& offsets);

// drift and noise weights of cell (t_j, t_j+1] of coordinate i seen from time tau >= t_j+1; grid
// offsets reuse w_b / w_s so that the curve at x = 0 repeats the simulation sum exactly
struct CellWeight {
  double b = 0.0, s = 0.0;
};
CellWeight forward_curve_weight(const PathEnsemble& e, std::size_t i, double tau, std::size_t j);

struct BranchResult {
  std::size_t k = 0;   // conditioning node
  std::size_t N = 0;   // target node
  std::vector<double> x_t;
  std::vector<double> mean;
  std::vector<double> stderr_;
};

// n_inner continuations of every outer path from node k to node N with fresh noise
BranchResult branch_paths(const PathEnsemble& e, double t, double T, std::size_t n_inner, std::uint64_t seed,
                          std::size_t coordinate = 0, std::size_t workers = 0);

// little-endian: u64 d, u64 n_pert, u64 n_steps, u64 n_paths, then X and Z as row-major doubles
void write_binary(const PathEnsemble& e, const std::string& path);
struct EnsembleDump {
  std::uint64_t d = 0, n_pert = 0, n_steps = 0, n_paths = 0;
  std::vector<double> X, Z;
};
EnsembleDump read_binary(const std::string& path);

}  // namespace volterra::sim
