#pragma once

// Time integration on the half-line: linearized per-transverse-mode evolution
// about a layer profile, nonlinear 1D perturbation evolution in conservative
// form, and numerical verification of the Duhamel and boundary-homogenization
// identities.

#include <functional>
#include <string>
#include <vector>

#include "blstab/energy.hpp"
#include "blstab/model.hpp"
#include "blstab/numerics.hpp"
#include "blstab/profile.hpp"

namespace blstab {

/// Optional energy recording: when weight is set, E_s of each sample is
/// stored using the given compensator and constants.
struct EnergyHook {
    const WeightProfile* weight = nullptr;
    Mat K1;
    double M = 0.0;
    double eps = 0.0;
    int s = 1;
};

struct EvolveOptions {
    double dt = 0.0;          ///< 0: T/2000
    int n_records = 81;       ///< output samples including t=0 (clipped to steps)
    bool store_snapshots = false;
    double blowup_factor = 1e6;
    double compat_tol = 1e-8; ///< |C U0(0) - h(0)| guard
    EnergyHook energy;
};

struct TrajectoryRecord {
    Vec t;
    Vec l2;
    Vec linf;
    Vec es;        ///< empty unless an energy hook was supplied
    Vec bh;        ///< boundary measure per record, filled by callers that have one
    Mat conserved; ///< rows = samples, cols = components (trapezoid totals)
    double max_drift = 0.0; ///< worst per-step conservation defect (nonlinear)
    std::vector<MatC> snapshots; ///< populated when store_snapshots

    std::string to_csv() const; ///< t, L2, Linf, E_s, conserved totals
};

/// Method-of-lines Crank-Nicolson evolution of U_t = L U + f for the
/// xi-transformed linearization about the profile. Boundary rows at x=0
/// follow the case: outflow pins the parabolic trace to h(t) and closes the
/// hyperbolic components with one-sided transport rows; inflow pins the full
/// W-trace. The far end uses quadratic extrapolation. h size: r (outflow) or
/// n (inflow); null h or f mean zero. Throws BlowUp when the sup norm exceeds
/// blowup_factor * max(initial, 1e-30) and CompatibilityViolation when U0
/// disagrees with h(0).
TrajectoryRecord linearized_evolve(const SystemDefinition& sys, const Profile& prof,
                                   const Vec& xi_tilde, const MatC& U0,
                                   const std::function<VecC(double)>& h_of_t,
                                   const std::function<MatC(double)>& f_of_t, double T,
                                   const std::string& boundary_case,
                                   const EvolveOptions& opt = {});

/// Conservative IMEX evolution of the 1D nonlinear perturbation equations
/// U_t + (F(Ubar+U)-F(Ubar))_x = (B(Ubar+U)(Ubar+U)_x - B(Ubar)Ubar_x)_x:
/// second-order reconstruction with Rusanov interface dissipation, implicit
/// viscous flux with stage-lagged coefficients, explicit step bounded by the
/// transport CFL with safety 0.5. max_drift records the worst telescoping
/// defect of the interior totals against the recorded interface fluxes.
TrajectoryRecord nonlinear_evolve_1d(const SystemDefinition& sys, const Profile& prof,
                                     const Mat& U0, const std::function<Vec(double)>& h_of_t,
                                     double T, const std::string& boundary_case,
                                     const EvolveOptions& opt = {});

/// Max-over-samples relative L2 defect of the integral identity
/// U(t) = S(t) U0 + int_0^t S(t-s) f(s) ds, with S realized by homogeneous
/// solves of the same discretization and trapezoid quadrature in s.
double duhamel_residual(const SystemDefinition& sys, const Profile& prof,
                        const Vec& xi_tilde, const MatC& U0,
                        const std::function<MatC(double)>& f_of_t, double T,
                        const std::string& boundary_case, const EvolveOptions& opt = {});

/// Max-over-samples relative L2 difference between the solution with
/// inhomogeneous trace h and the lift realization g + V, g = e^{-x} Lambda h,
/// V solving the homogeneous-trace problem with initial -g(0) and forcing
/// L g - g_t. Throws CompatibilityViolation when h(0) != 0.
double boundary_homogenization_check(const SystemDefinition& sys, const Profile& prof,
                                     const Vec& xi_tilde,
                                     const std::function<VecC(double)>& h_of_t, double T,
                                     const std::string& boundary_case,
                                     const EvolveOptions& opt = {});

/// Log-linear decay fit of a recorded norm over [t_lo, t_hi].
/// norm: "l2" | "linf" | "es".
DecayFit measure_decay(const TrajectoryRecord& rec, const std::string& norm,
                       double t_lo, double t_hi);

/// Zero-amplitude profile on an explicit grid (Ubar == U+), for test systems
/// without a layer.
Profile constant_profile(const SystemDefinition& sys, const EndState& plus,
                         const Vec& grid);

} // namespace blstab
