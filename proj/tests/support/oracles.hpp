#pragma once

#include <cstddef>
#include <vector>

#include "parobs/grid_function.hpp"

namespace parobs::testing {

/// Cox-Ross-Rubinstein tree for an American put.
double crr_american_put(double S0, double K, double r, double sigma, double T, std::size_t steps);

/// Cyclic Jacobi eigen-decomposition of a small symmetric matrix (row-major n*n).
/// Eigenvectors are the columns of `vectors`.
struct EigenPairs {
    std::vector<double> values;
    std::vector<double> vectors;
};
EigenPairs jacobi_eigen(std::vector<double> m, std::size_t n);

/// Pucci extremal values by enumerating the 2^d corner matrices Q diag(a) Q^T,
/// a_i in {lambda, Lambda}, in the eigenbasis of M.
struct Extremal {
    double minus = 0.0;
    double plus = 0.0;
};
Extremal pucci_corners(const std::vector<double>& m, std::size_t n, double lambda, double Lambda);

/// Tridiagonal solve; lower[0] and upper[n-1] are ignored.
std::vector<double> thomas(std::vector<double> lower, std::vector<double> diag, std::vector<double> upper,
                           std::vector<double> rhs);

/// Constant-coefficient 1D control a u_xx + b u_x + c u + f.
struct Control1D {
    double a = 1.0;
    double b = 0.0;
    double c = 0.0;
    double f = 0.0;
};

/// Upwind three-point weights (lower, upper) of a 1D control.
std::pair<double, double> upwind_weights(const Control1D& k, double h);

/// Obstacle-free backward Euler solution of u_t + a u_xx + b u_x + c u + f = 0 with
/// u = bnd on the parabolic boundary, one tridiagonal solve per level.
GridFunction tridiagonal_march(const GridPtr& grid, const Control1D& k, const GridFunction& bnd);

/// Complementarity residual written out node by node from the stencil formula.
GridFunction residual_formula(const GridPtr& grid, const std::vector<Control1D>& controls, const GridFunction& u,
                              const GridFunction& g, const GridFunction& b);

}  // namespace parobs::testing
