#pragma once

#include <cstddef>
#include <vector>

namespace volterra::linalg {

// dense row-major square matrix
struct Matrix {
  std::size_t n = 0;
  std::vector<double> a;

  Matrix() = default;
  explicit Matrix(std::size_t n_) : n(n_), a(n_ * n_, 0.0) {}
  double& operator()(std::size_t i, std::size_t j) { return a[i * n + j]; }
  double operator()(std::size_t i, std::size_t j) const { return a[i * n + j]; }
};

struct Eigen {
  std::vector<double> values;   // ascending
  Matrix vectors;               // column k is the eigenvector of values[k]
};

// cyclic Jacobi for symmetric matrices, n <= 64
Eigen sym_eigen(const Matrix& m);

// solves m x = b for symmetric positive definite m (Cholesky); returns false if not SPD
bool cholesky_solve(const Matrix& m, const std::vector<double>& b, std::vector<double>& x);

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace volterra::linalg
