#pragma once

// Hyperbolic-parabolic systems of conservation laws on the half-space
//
//   U_t + sum_j F^j(U)_{x_j} = sum_{j,k} (B^{jk}(U) U_{x_k})_{x_j},  x_1 > 0,
//
// together with a symmetrizing change of coordinates W(U) in which the system
// reads A0 W_t + sum_j A^j W_{x_j} = sum_{jk} (Bs^{jk} W_{x_k})_{x_j} + G,
// A0 block-diagonal SPD, Bs^{jk} = [[0,0],[0,bs^{jk}]]. The first n-r
// components of U are the hyperbolic block, the last r the parabolic block.
// Every structural hypothesis is audited numerically with margins.

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "blstab/numerics.hpp"

#include "json.hpp"

namespace blstab {

struct SystemDefinition {
    int d = 0; ///< spatial dimension
    int n = 0; ///< conserved variables
    int r = 0; ///< parabolic rank (size of the b2 block)

    // conservative form; direction index j is 1-based, j=1 is wall-normal
    std::function<Vec(int j, const Vec& U)> flux;
    std::function<Mat(int j, const Vec& U)> flux_jacobian;
    std::function<Mat(int j, int k, const Vec& U)> viscosity;
    /// Directional derivative dB^{jk}(U)[w]; defaulted to central differences
    /// of `viscosity` when a builder does not supply it.
    std::function<Mat(int j, int k, const Vec& U, const Vec& w)> viscosity_deriv;

    // symmetric form in W coordinates
    std::function<Vec(const Vec& U)> to_w;
    std::function<Vec(const Vec& W)> from_w;
    std::function<Mat(const Vec& U)> w_jacobian; ///< dW/dU, lower-triangular blocks
    std::function<Mat(const Vec& W)> a0;
    std::function<Mat(int j, const Vec& W)> a_sym;
    std::function<Mat(int j, int k, const Vec& W)> b_sym;
    /// Quadratic source G(W, W_x) (full n-vector, zero hyperbolic rows).
    std::function<Vec(const Vec& W, const Mat& Wx)> source;

    std::string name;

    int hyp() const { return n - r; } ///< hyperbolic block size

    /// b^{jk} = parabolic rows of B^{jk} (r x n).
    Mat b_block(int j, int k, const Vec& U) const;
    /// b2^{jk} = parabolic rows, parabolic columns (r x r).
    Mat b2_block(int j, int k, const Vec& U) const;
};

struct IsentropicParams {
    double rho0 = 1.0;  ///< ambient density
    double V = -0.1;    ///< wall-normal velocity (V<0 outflow/suction, V>0 inflow)
    double u_inf = 0.0; ///< transverse velocity at infinity
    double mu = 0.1;    ///< dynamic viscosity
    double eta = 0.0;   ///< second viscosity, |eta| < mu
    double a = 1.0;     ///< pressure constant
    double gamma = 2.0; ///< adiabatic exponent

    double pressure(double rho) const;
    double dpressure(double rho) const; ///< p'(rho) = a*gamma*rho^(gamma-1)
    double sound_speed(double rho) const;
};

struct EndState {
    Vec U_plus;
    Vec W_plus;
};

/// Single hypothesis outcome. Margin is the distance to violation in the
/// natural units of the check (min eigenvalue, min gap, ...), never a bool.
struct Verdict {
    bool pass = false;
    double margin = 0.0;
    std::string detail;
};

struct BranchPoint {
    double tau = 0.0;
    int multiplicity = 0;
    bool resolved = true; ///< false: gap below tolerance over an interval
};

struct HypothesisReport {
    Verdict a1_symmetry;  ///< A^j(W+), A0, A1_11 symmetric; A0 block-diag SPD
    Verdict a2_coupling;  ///< genuine coupling
    Verdict a3_parabolic; ///< block form + Re sum xi_j xi_k bs^{jk} >= theta
    Verdict h1_noncharacteristic;
    Verdict h2_hyperbolic;
    Verdict h3_const_multiplicity;
    Verdict h4_branch_structure;
    std::string boundary_case; ///< "inflow" | "outflow" | "characteristic"
    double theta0 = 0.0;       ///< min eig A0 over samples
    double theta = 0.0;        ///< parabolicity constant
    double theta1 = 0.0;       ///< |A1_11| margin at the wall
    std::vector<BranchPoint> branch_points;
    int smoothness_s = 0;      ///< recorded regularity index [(d-1)/2]+7, not enforced

    nlohmann::json to_json() const;
    bool all_pass() const;
};

// ---------------------------------------------------------------------------
// Builders

/// 2D isentropic Navier-Stokes on the half-plane x1 > 0 with a moving wall:
/// state U = (rho, rho*u, rho*v), u transverse, v normal. Throws
/// std::invalid_argument on bad parameters.
SystemDefinition build_isentropic_2d(const IsentropicParams& p);

/// End state at x1 -> infinity for the given parameters: density rho0,
/// transverse velocity u_inf, normal velocity V.
EndState isentropic_end_state(const IsentropicParams& p);

/// Constant-coefficient system from tabulated matrices (audit/test harness).
/// a0s: n x n, asym[j], bsym[j][k]: d and d x d arrays. Conservative-form
/// callables are linear with F^j = asym-compatible A^j U, B^{jk} constant.
SystemDefinition make_custom_tabulated(const Mat& a0s, const std::vector<Mat>& asym,
                                       const std::vector<std::vector<Mat>>& bsym,
                                       int r);

/// Parse {"model": "isentropic2d"|"custom-tabulated", "params": {...}} into a
/// system plus (for isentropic) its parameters.
SystemDefinition system_from_json(const nlohmann::json& j,
                                  std::optional<IsentropicParams>* params_out = nullptr);

// ---------------------------------------------------------------------------
// Hypothesis audits (pure, sampling-based; verdicts carry margins)

struct SamplingOptions {
    int directions = 128;      ///< unit-sphere samples (>= 100 required by H3)
    int states = 20;           ///< random states around the end state
    double state_radius = 0.1; ///< relative sampling radius
    std::uint64_t seed = 0;
    double collision_tol_factor = 1e-8; ///< gap < factor * spectral radius
};

/// (A1) + (A3) + quadratic-source audit over sampled states and directions.
HypothesisReport check_structure(const SystemDefinition& sys,
                                 const std::vector<Vec>& states,
                                 const SamplingOptions& opt = {});

/// (H1): sign of A1_11(W(wall_state)); fills boundary_case and theta1.
Verdict check_noncharacteristic(const SystemDefinition& sys, const EndState& plus,
                                const Vec& wall_state, std::string* case_out = nullptr,
                                double* theta1_out = nullptr);

/// (H2): eigenvalues of dF^1(U+) distinct and nonzero.
Verdict check_hyperbolicity(const SystemDefinition& sys, const EndState& plus,
                            VecC* eigs_out = nullptr);

/// (H3): constant multiplicity signature of sum_j dF^j(U+) xi_j over >= 100
/// sampled unit directions. Throws InsufficientSampling below 100.
Verdict check_constant_multiplicity(const SystemDefinition& sys, const EndState& plus,
                                    const std::vector<Vec>& directions,
                                    const SamplingOptions& opt = {});

/// (H4): collisions of the eigenvalues of (A1)^-1 (tau A0 + sum_{j>=2} xi_j A^j)
/// at W+ as tau scans [-tau_max, tau_max]. i-factors drop out of collision
/// locations. Returns branch points with multiplicities; unresolved clusters
/// are flagged, not merged.
std::vector<BranchPoint> find_branch_points(const SystemDefinition& sys,
                                            const EndState& plus, const Vec& xi_tilde,
                                            double tau_max = 5.0,
                                            const SamplingOptions& opt = {});

/// (A2): min over directions and eigenvectors w of |sum xi xi Bs (A0)^-1 w|.
Verdict check_genuine_coupling(const SystemDefinition& sys, const EndState& plus,
                               const std::vector<Vec>& directions);

/// Full report: runs every audit with deterministic sampling.
HypothesisReport hypothesis_report(const SystemDefinition& sys, const EndState& plus,
                                   const Vec& wall_state, const SamplingOptions& opt = {});

} // namespace blstab
