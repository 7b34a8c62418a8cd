#pragma once

#include <functional>
#include <string>
#include <vector>

#include "blstab/errors.hpp"
#include "blstab/model.hpp"
#include "blstab/numerics.hpp"
#include "blstab/profile.hpp"
#include "json.hpp"

namespace blstab {

/// transverse frequency + spectral parameter
struct Frequency {
    Vec xi_tilde;
    Complex lambda{0.0, 0.0};

    double rho() const;
    static Frequency lerp(const Frequency& a, const Frequency& b, double t);
};

/// self-contained first-order eigenvalue problem Z' = A(x; freq) Z on [0, x_max]
/// with boundary subspace phi_zero at x = 0; covers both the physical systems
/// and the scalar test operators
struct EvansProblem {
    int size = 0;  // phase-space dimension
    int n_out = 0; // leading components that form the physical state
    double x_max = 0.0;
    Vec grid; // default collocation grid for resolvent solves
    MatC phi_zero;
    std::function<MatC(double, const Frequency&)> coeff;
    std::function<MatC(const Frequency&)> coeff_limit;
    // maps pointwise forcing f (n_out components) to the inhomogeneity in Z'
    std::function<VecC(double, const Frequency&, const VecC&)> forcing;
    std::string name;
};

/// eigen-decomposition of the limiting coefficient matrix, split by Re sign
struct Splitting {
    MatC a_inf;
    VecC eigenvalues;
    MatC vectors;
    std::vector<int> stable;   // Re < 0
    std::vector<int> unstable; // Re > 0
    int k_plus = 0;

    MatC stable_basis() const;
    MatC stable_projector() const;
    MatC unstable_left_rows() const; // rows of V^{-1} for unstable eigenvalues
    Complex stable_trace() const;    // sum of stable eigenvalues
};

Splitting limiting_split(const EvansProblem& prob, const Frequency& freq,
                         double center_tol = 1e-8);

/// linearization of the flux about the layer, A^j = dF^j(U) - dB^{j1}(U)[.]U'
Mat convected_jacobian(const SystemDefinition& sys, const Vec& U, const Vec& U_prime,
                       int j);

/// first-order coefficient matrix of the eigenvalue ODE at one state
MatC assemble_first_order(const SystemDefinition& sys, const Vec& U, const Vec& U_prime,
                          const Frequency& freq);
/// inhomogeneity in Z' corresponding to pointwise forcing f of the second-order form
VecC assemble_forcing(const SystemDefinition& sys, const Vec& U, const Frequency& freq,
                      const VecC& f);

/// basis of boundary-compatible phase-space vectors at the wall
MatC boundary_subspace(const SystemDefinition& sys, const Vec& wall_state,
                       const std::string& boundary_case);

EvansProblem make_evans_problem(const SystemDefinition& sys, const Profile& prof,
                                const std::string& boundary_case);
EvansProblem make_poschl_teller(double x_max = 18.0);
EvansProblem make_convection_diffusion(double mu, double m, double x_max = 20.0);
/// restriction of a block-triangular problem to a subset of phase variables
EvansProblem subproblem(const EvansProblem& prob, const std::vector<int>& idx,
                        const MatC& phi_zero_sub, const std::string& name);

/// decaying-manifold frame at x = 0 with determinant bookkeeping
struct ManifoldResult {
    MatC frame0;                 // orthonormal columns spanning the decaying manifold
    ScaledComplex det_correction; // all rescalings, QR determinants, growth normalizer
};

ManifoldResult integrate_manifold(const EvansProblem& prob, const Frequency& freq,
                                  const Splitting& split, const MatC& init_basis,
                                  const OdeOptions& opt = {});

ScaledComplex evans_det_from_frame(const EvansProblem& prob, const ManifoldResult& mr);

/// analytic continuation of the stable eigenbasis along a frequency path;
/// eval() returns the Evans determinant under a path-independent normalization
class EvansPath {
  public:
    EvansPath(const EvansProblem& prob, const Frequency& anchor,
              const OdeOptions& ode = {});

    ScaledComplex eval(const Frequency& f);
    const Frequency& position() const { return at_; }
    int k_plus() const { return split_.k_plus; }

    struct State {
        Frequency at;
        Splitting split;
        MatC basis;
        double log_rescale;
    };
    State save() const;
    void restore(const State& s);

  private:
    void transport(const Frequency& to, int depth = 0);

    const EvansProblem* prob_;
    Frequency at_;
    Splitting split_;
    MatC basis_;
    double log_rescale_ = 0.0;
    OdeOptions ode_;
};

struct WindingResult {
    std::vector<Complex> contour;  // refined sample locations
    std::vector<double> log_abs_d; // natural log of |D| per sample
    std::vector<double> arg_d;     // accumulated argument per sample
    int winding = 0;
    double min_abs_d = 0.0;
    double max_abs_d = 0.0;
    int refinement_depth = 0;
    double closure_defect = 0.0;
    int center_shifts = 0;

    nlohmann::json to_json() const;
};

struct WindingOptions {
    int max_depth = 40;
    double zero_rel_tol = 1e-10;  // |D| threshold relative to running max
    double center_shift = 1e-6;   // Re-shift applied on CenterEigenvalue samples
    OdeOptions ode{};
};

/// closed polyline, counterclockwise; first point is the continuation anchor
std::vector<Complex> semicircle_contour(double radius, double indent, int axis_points = 14,
                                        int arc_points = 12);

WindingResult winding_number(const EvansProblem& prob, const Vec& xi_tilde,
                             const std::vector<Complex>& contour,
                             const WindingOptions& opt = {});

struct ConditionDReport {
    bool pass = false;
    double min_margin = 0.0;
    Vec worst_xi;
    Complex worst_lambda{0.0, 0.0};
    std::vector<Vec> xi_grid;
    std::vector<WindingResult> results;
    std::vector<std::string> issues;

    nlohmann::json to_json() const;
};

struct ConditionDOptions {
    double radius = 10.0;
    double origin_exclusion = 1e-3;
    double margin_tol = 1e-8;
    WindingOptions winding{};
};

ConditionDReport check_condition_D(const EvansProblem& prob, const std::vector<Vec>& xi_grid,
                                   const ConditionDOptions& opt = {});

struct ResolventResult {
    MatC solution;     // N x n_out physical components on the grid
    double u_l2 = 0.0; // weighted L2 norm of the solution
    double f_h1 = 0.0; // (1 + |d/dx| + |xi|) norm of the forcing
    double ratio = 0.0;
    bool near_singular = false;
    double cond_estimate = 0.0;
};

ResolventResult resolvent_solve(const EvansProblem& prob, const Frequency& freq,
                                const MatC& f_values, const Vec& grid);

} // namespace blstab
