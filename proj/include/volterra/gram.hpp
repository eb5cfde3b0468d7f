#pragma once

#include <optional>
#include <string>
#include <vector>

#include "volterra/kernels.hpp"
#include "volterra/linalg.hpp"
#include "volterra/resolvents.hpp"

namespace volterra::gram {

using kernels::KernelSpec;
using kernels::MatrixKernelSpec;

// G_ll'(h) = sum_i int_0^h K_li K_l'i
linalg::Matrix gram_matrix(const MatrixKernelSpec& m, double h);

struct FitWindow {
  double lo = 1e-6;
  double hi = 1e-2;
};

// 25 log-spaced values from 1e-2 down to 1e-6
std::vector<double> default_h_list(int n = 25, double lo = 1e-6, double hi = 1e-2);

struct BlockReport {
  std::size_t coordinate = 0;
  std::vector<std::size_t> rows;
  std::vector<double> lambda_min;
  double gamma_star = 0.0;
  double r2 = 0.0;
};

struct GramScanReport {
  std::vector<double> h_values;
  std::vector<double> lambda_min;
  std::vector<double> lambda_max;
  std::vector<double> corrected;   // lambda_min / l_min(1/h)^2 for log-modulated rows
  bool has_correction = false;
  double gamma_star = 0.0;
  double intercept = 0.0;
  double fit_r2 = 0.0;
  double gamma_star_corrected = 0.0;
  std::size_t n_fit = 0;
  std::vector<BlockReport> blocks;
  std::string label = "estimated";
};

GramScanReport nondegeneracy_scan(const MatrixKernelSpec& m, const std::vector<double>& h_list,
                                  const FitWindow& window = {}, std::size_t workers = 0);

struct MzReport {
  GramScanReport scan;
  std::optional<double> gamma;
  double bound = 0.0;          // min{gamma, 1/2} + gamma/2
  bool condition_holds = false;
};

// M_z(h) of the pair (K, K_z); K_z is the tabulated kernel carried by the Pi table
MzReport affine_Mz_scan(const KernelSpec& k, const resolvents::PiTable& pi,
                        const resolvents::TimeGrid& grid, const std::vector<double>& h_list,
                        std::optional<double> gamma = std::nullopt, const FitWindow& window = {});

// tabulated K_z on the nodes t_1..t_n_out
KernelSpec kz_as_kernel(const resolvents::PiTable& pi, const resolvents::TimeGrid& grid);

struct BalanceParams {
  std::vector<double> gamma_star;  // one value, or one per coordinate in diagonal mode
  std::optional<double> gamma_b, gamma_sigma, gamma_K;
  double chi_b = 1.0;
  double chi_sigma = 0.5;
  bool diagonal = false;
  std::optional<double> H_b, H_sigma;
  std::optional<double> gamma;     // affine square-root check
};

struct BalanceCheck {
  std::string name;
  double lhs = 0.0;
  double rhs = 0.0;
  double margin = 0.0;  // rhs - lhs, positive when satisfied
  bool pass = false;
};

struct BalanceReport {
  bool pass = true;
  std::vector<BalanceCheck> checks;
};

BalanceReport balance_check(const BalanceParams& p);

}  // namespace volterra::gram
