#pragma once

#include <functional>
#include <vector>

namespace volterra::quad {

using Fn = std::function<double(double)>;

struct Options {
  double rel_tol = 1e-12;
  double abs_tol = 0.0;
  unsigned max_depth = 15;
  // an estimate above fail_tol * L1 (and above abs_tol) is reported as QuadratureFailure
  double fail_tol = 1e-6;
};

struct Result {
  double value = 0.0;
  double error = 0.0;
  double l1 = 0.0;
};

// adaptive Gauss-Kronrod on a finite interval, no failure check
Result gk(const Fn& f, double a, double b, const Options& o = {});

// adaptive Gauss-Kronrod with failure check
double integrate(const Fn& f, double a, double b, const Options& o = {});

// int_0^len f(u) du for f(u) ~ u^rho near 0 (rho > -1), via u = len * s^(2/(1+rho))
Result head(const Fn& f, double len, double rho, const Options& o = {});
double integrate_head(const Fn& f, double len, double rho, const Options& o = {});

// int_a^b of f with a power-type singularity at a: head on [a, a+d] then geometric panels
double integrate_graded(const Fn& f_of_offset, double len, double rho, const Options& o = {},
                        double first = 0.0);

// int_a^inf f via exp_sinh
double integrate_to_inf(const Fn& f, double a, const Options& o = {});

// n-point Gauss-Legendre rule on [-1, 1]
void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w);

}  // namespace volterra::quad
