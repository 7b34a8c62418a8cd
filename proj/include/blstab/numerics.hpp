#pragma once

// Small numerical utilities shared by all modules: adaptive RK45 with dense
// output, finite-difference stencil weights on arbitrary nodes, grids,
// log-linear fits, deterministic direction sampling, scaled complex numbers.

#include <Eigen/Dense>
#include <complex>
#include <cstdint>
#include <functional>
#include <vector>

#include "blstab/errors.hpp"

namespace blstab {

using Complex = std::complex<double>;
using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using VecC = Eigen::VectorXcd;
using MatC = Eigen::MatrixXcd;

// ---------------------------------------------------------------------------
// Scaled complex: value * exp(log_scale). Keeps Evans determinants and
// resolvent condition numbers representable when |.| under/overflows.
struct ScaledComplex {
    Complex value{0.0, 0.0}; // kept O(1) by rebalance()
    double log_scale = 0.0;  // natural log

    double log_abs() const { return std::log(std::abs(value)) + log_scale; }
    double arg() const { return std::arg(value); }
    bool is_zero() const { return value == Complex(0.0, 0.0); }
    void rebalance();
    ScaledComplex operator*(const ScaledComplex& o) const;
    ScaledComplex operator/(const ScaledComplex& o) const;
    /// Plain double when representable (may overflow to inf by design).
    double abs() const { return std::exp(log_abs()); }
};

// ---------------------------------------------------------------------------
// Adaptive embedded Runge-Kutta (Cash-Karp 4(5)) on complex vectors.
// Dense output by cubic Hermite interpolation on accepted steps; that is
// O(h^4) locally, consistent with the tolerances used here.

struct OdeOptions {
    double rtol = 1e-10;
    double atol = 1e-12;
    double h_init = 1e-3;
    double h_min = 1e-14;
    std::size_t max_steps = 2000000;
};

struct OdeSolution {
    std::vector<double> x;               // accepted nodes, increasing
    std::vector<VecC> y;                 // states at nodes
    std::vector<VecC> f;                 // derivatives at nodes (for Hermite)
    VecC eval(double xq) const;          // clamped Hermite interpolation
};

using OdeRhs = std::function<VecC(double, const VecC&)>;

/// Integrate y' = f(x,y) from x0 to x1 (x1 may be < x0). Throws
/// StiffnessFailure on step underflow.
OdeSolution integrate_ode(const OdeRhs& f, const VecC& y0, double x0, double x1,
                          const OdeOptions& opt = {});

/// Single adaptive integration that invokes `observer` after each accepted
/// step; used where storing the whole solution is wasteful.
void integrate_ode_observed(const OdeRhs& f, VecC& y, double x0, double x1,
                            const std::function<void(double, VecC&)>& observer,
                            const OdeOptions& opt = {});

// ---------------------------------------------------------------------------
// Grids and stencils

/// Half-line grid on [0, x_max], geometrically clustered near 0 with a
/// uniform tail; n nodes, node 0 at the wall. cluster_frac of nodes resolve
/// the layer region [0, x_layer].
Vec layer_grid(double x_max, int n, double x_layer, double cluster_frac = 0.5);

/// Uniform grid on [0, x_max] with n nodes.
Vec uniform_grid(double x_max, int n);

/// Finite-difference weights (Fornberg) for derivative `m` at point z from
/// nodes xs. Exact for polynomials of degree xs.size()-1.
Vec fd_weights(double z, const Vec& xs, int m);

/// First derivative of sampled values on an arbitrary grid, 3-point stencils
/// (one-sided at the ends). values: rows = nodes, cols = components.
Mat grid_derivative(const Vec& x, const Mat& values);
MatC grid_derivative(const Vec& x, const MatC& values);

/// Trapezoid weights for integration over grid x.
Vec trapezoid_weights(const Vec& x);

// ---------------------------------------------------------------------------
// Fits and sampling

struct DecayFit {
    double rate = 0.0;      // theta in |y| ~ C exp(-theta x)
    double log_c = 0.0;
    double r2 = 0.0;        // coefficient of determination of the log fit
    int n_used = 0;
};

/// Least-squares fit of log(y) = log_c - rate * x over samples with
/// y > floor; throws FitFailed if fewer than min_points survive.
DecayFit fit_log_linear(const Vec& x, const Vec& y, double floor,
                        int min_points = 8);

/// Deterministic unit directions in R^d. d=1: {+1,-1}; d=2: uniform angles;
/// d=3: Fibonacci sphere. `count` >= 1. Seed only jitters d>=2 slightly so
/// repeated audits do not always probe the same axes; jitter is reproducible.
std::vector<Vec> unit_directions(int d, int count, std::uint64_t seed = 0);

/// Relative gap clustering of complex values: returns cluster sizes sorted
/// descending (the multiplicity signature). tol is absolute.
std::vector<int> cluster_multiplicities(const VecC& vals, double tol);

// ---------------------------------------------------------------------------
// Misc small helpers

inline double sup_norm(const Vec& v) { return v.lpNorm<Eigen::Infinity>(); }

/// Relative difference |a-b| / max(|a|,|b|,floor).
double rel_diff(double a, double b, double floor = 1e-300);

/// log(det R) for an upper-triangular complex R with the convention that
/// the unitary factor absorbed the diagonal phases (diag real positive).
/// Returns the complex log sum of the raw diagonal.
Complex log_det_triangular(const MatC& r);

} // namespace blstab
