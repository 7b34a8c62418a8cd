#pragma once

// Standing-wave boundary-layer profiles: the once-integrated traveling-wave
// ODE  B^11(U) U' = F^1(U) - F^1(U+)  on the half-line, its explicit
// transverse solution for the isentropic system, shooting from the stable
// manifold of U+, and exponential-decay verification.

#include <vector>

#include "blstab/model.hpp"
#include "blstab/numerics.hpp"

namespace blstab {

struct Profile {
    Vec grid;        ///< strictly increasing nodes on [0, x_max]
    Mat values;      ///< rows = nodes, cols = components of U
    Mat derivative;  ///< dU/dx1 per node (from the ODE, not re-differenced)
    EndState end_state;
    Vec wall_value;  ///< U(0)
    double theta_fit = 0.0; ///< fitted decay rate of |U - U+|

    int n_nodes() const { return static_cast<int>(grid.size()); }
    /// Hermite interpolation of (values, derivative) at x.
    Vec eval(double x) const;
    Vec eval_derivative(double x) const;
    double amplitude() const; ///< max_i |U_i - U+|_inf over the grid
};

/// Wall constraints in W coordinates: require W_i(U(0)) = value for each
/// listed component index. Outflow uses the parabolic components only,
/// inflow all n.
struct WallConstraints {
    std::vector<int> components; ///< indices into W
    Vec values;

    static WallConstraints outflow(const SystemDefinition& sys, const Vec& w_parabolic);
    static WallConstraints inflow(const Vec& w_full);
};

struct ProfileOptions {
    int n_nodes = 400;
    double x_max = 0.0;        ///< 0: choose 30/theta_est automatically
    double shoot_tol = 1e-11;  ///< Gauss-Newton residual target on wall data
    double ode_rtol = 1e-12;
    int max_newton = 60;
    int sweep = 5;             ///< deterministic initial-guess sweep per parameter
    double sweep_radius = 0.5; ///< amplitude of swept initial coefficients
};

/// Explicit transverse layer (rho, v) == (rho0, V), u = u_inf(1 - e^{rho0 V y/mu});
/// exact to rounding on the given grid. Throws std::invalid_argument if V >= 0.
Profile explicit_transverse(const IsentropicParams& p, const Vec& grid);

/// Wall drag mu * du/dy(0) = u_inf * rho0 * |V| of the transverse layer.
double drag(const IsentropicParams& p);

/// Shooting solver for the once-integrated profile ODE. Returns all branches
/// found by a deterministic sweep (usually one). Throws NoConnection if no
/// branch meets the wall constraints.
std::vector<Profile> solve_profile(const SystemDefinition& sys, const EndState& plus,
                                   const WallConstraints& wall,
                                   const ProfileOptions& opt = {});

struct DecayReport {
    std::vector<double> theta; ///< fitted rate per derivative order 0..k_max
    std::vector<double> log_c;
    bool pass = false;         ///< all theta positive and within 20% of each other
};

/// Log-linear tail fits of |d^k(U - U+)| for k = 0..k_max.
DecayReport verify_decay(const Profile& prof, int k_max = 1);

/// Linearization of the reduced traveling-wave ODE at U+; the slowest stable
/// rate sets X_max = 30/theta_est. Exposed for tests.
double profile_decay_estimate(const SystemDefinition& sys, const EndState& plus);

} // namespace blstab
