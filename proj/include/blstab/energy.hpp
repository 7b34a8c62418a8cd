#pragma once

// Kawashima compensating matrices, layer-adapted weight functions, the
// recursive weighted energy functionals built from them, boundary trace
// measures, and a Gronwall-type audit of energy decay along trajectories.

#include <string>
#include <vector>

#include "blstab/model.hpp"
#include "blstab/numerics.hpp"
#include "blstab/profile.hpp"

#include "json.hpp"

namespace blstab {

/// Skew compensator for one Fourier direction. Invariant: K + K^T = 0
/// exactly; sym(sum xi_j xi_k Bs^{jk} - K (A0)^{-1} sum xi_k A^k)(W+)
/// >= theta2 |xi|^2.
struct KawashimaMatrix {
    Vec xi;
    Mat K;
    double theta2 = 0.0;
};

struct CompensatorOptions {
    int restarts = 10;
    int max_iter = 400;
    double tol = 1e-12;
    std::uint64_t seed = 0;
};

/// Maximizes the minimum eigenvalue of the compensated dissipation over the
/// skew-symmetric matrices (softmin ascent, deterministic restarts); the
/// returned theta2 is re-verified with an exact eigensolve. Throws Infeasible
/// when the optimum is <= 0.
KawashimaMatrix kawashima_K(const SystemDefinition& sys, const Vec& W_plus,
                            const Vec& xi, const CompensatorOptions& opt = {});

/// Dissipation margin of a given skew K at direction xi: min eig of the
/// symmetric part in the compensated dissipation, divided by |xi|^2.
double compensated_margin(const SystemDefinition& sys, const Vec& W_plus,
                          const Vec& xi, const Mat& K);

/// Scalar weight alpha(x1) > 0 with alpha(0) = 1, monotone in the direction
/// set by sign(A1_11), and (alpha'/alpha) A1_11 <= -omega pointwise.
struct WeightProfile {
    Vec grid;
    Vec alpha;
    Vec omega;   ///< c_star * theta1 * |Wbar_x1|
    Vec wbar_x1; ///< |d/dx1 W(Ubar)| per node
    double c_star = 1.0;
    double theta1 = 0.0; ///< min over the layer of the definite A1_11 margin
    int sign_a111 = 0;

    double eval_alpha(double x) const; ///< linear interpolation
};

WeightProfile weight_alpha(const SystemDefinition& sys, const Profile& prof,
                           double c_star, const std::string& boundary_case);

/// max over nodes of lambda_max((alpha'/alpha) sym A1_11 + omega I); the
/// weight construction makes this <= 0 up to rounding.
double weight_defect(const SystemDefinition& sys, const Profile& prof,
                     const WeightProfile& w);

/// Positivity-safe defaults for the functional: eps from the compensator
/// margin, M = 10 * measured equivalence constant of <A0 ., .> vs L2.
struct EnergyDefaults {
    double M = 0.0;
    double eps = 0.0;
    double a0_min = 0.0; ///< min eig A0 along the layer
    double a0_max = 0.0;
};

EnergyDefaults energy_defaults(const SystemDefinition& sys, const Profile& prof,
                               const KawashimaMatrix& comp);

/// Recursive weighted functional
///   E_0 = <A0 W, W>_alpha,
///   E_k = <A0 d^k W, d^k W>_alpha + M E_{k-1} + eps Re<K d^k W, d^{k-1} W>_alpha
/// with A0 = A0(W(Ubar(x))) per node and derivatives from the shared stencil.
/// W rows = profile nodes, cols = components. hs_norm2 returns the unweighted
/// squared H^s norm for the equivalence ratio.
double energy_functional(const SystemDefinition& sys, const Profile& prof,
                         const WeightProfile& weight, const Mat& K1, const MatC& W,
                         int s, double M, double eps, double* hs_norm2 = nullptr);

/// Boundary trace measure per time sample. Outflow:
///   B(t) = |h|_{H^s(x)} + sum_{i<=floor((s+1)/2)} |dt^i h|_{L2(x)};
/// inflow adds dt^i of the hyperbolic part h1 up to order s while the
/// parabolic part h2 keeps the outflow count. Time derivatives use 4th-order
/// stencils; throws InsufficientSampling when the series is too short.
struct BoundaryMeasure {
    Vec t;
    Vec B;
};

BoundaryMeasure boundary_measure(const Vec& t_grid, const Vec& x_grid,
                                 const std::vector<MatC>& h, int n_hyp,
                                 const std::string& boundary_case, int s);

struct GronwallOptions {
    double c_cap = 1e4;
    double theta_min = 1e-3;
    double theta_max = 20.0;
    int n_theta = 25;
    double floor_rel = 1e-13; ///< denominator floor relative to E(0)+max g
};

/// Feasibility scan of E(t) <= C e^{-theta t} E(0)
///   + C int_0^t e^{-theta(t-tau)} (l2sq + Bh^2)(tau) dtau
/// over a log-spaced theta grid; c_min[i] is the smallest C making the
/// inequality hold at every sample for theta_grid[i].
struct GronwallReport {
    Vec theta_grid;
    Vec c_min;
    double theta_best = 0.0;
    double c_best = 0.0;
    bool feasible = false;
    double c_cap = 0.0;

    nlohmann::json to_json() const;
};

GronwallReport gronwall_audit(const Vec& t, const Vec& E, const Vec& l2sq,
                              const Vec& Bh, const GronwallOptions& opt = {});

/// Throws NoFeasiblePair when the report is infeasible.
void require_feasible(const GronwallReport& rep);

} // namespace blstab
