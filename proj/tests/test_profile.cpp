#include <cmath>

#include "blstab/errors.hpp"
#include "blstab/profile.hpp"
#include "doctest.h"

using namespace blstab;

namespace {

IsentropicParams layer_params() {
    IsentropicParams p;
    p.rho0 = 1.0;
    p.V = -0.2;
    p.u_inf = 0.3;
    p.mu = 0.1;
    p.eta = 0.05;
    return p;
}

} // namespace

TEST_SUITE("profile") {

TEST_CASE("closed-form transverse layer on the grid") {
    auto p = layer_params();
    Vec grid = layer_grid(15.0, 200, 3.0);
    Profile prof = explicit_transverse(p, grid);
    const double kappa = -p.rho0 * p.V / p.mu; // shear relaxation rate
    for (int i = 0; i < prof.n_nodes(); ++i) {
        const double u = p.u_inf * (1.0 - std::exp(-kappa * grid[i]));
        CHECK(std::abs(prof.values(i, 0) - p.rho0) < 1e-14);
        CHECK(std::abs(prof.values(i, 1) - p.rho0 * u) < 1e-13);
        CHECK(std::abs(prof.values(i, 2) - p.rho0 * p.V) < 1e-14);
    }
    CHECK(std::abs(prof.theta_fit - kappa) < 0.02 * kappa);
    CHECK(std::abs(prof.amplitude() - p.rho0 * p.u_inf) < 1e-12);
    // wall state: no slip in the transverse component
    CHECK(std::abs(prof.wall_value[1]) < 1e-14);
    // interpolation between nodes stays on the curve
    const double xq = 0.5 * (grid[3] + grid[4]);
    const double uq = p.u_inf * (1.0 - std::exp(-kappa * xq));
    CHECK(std::abs(prof.eval(xq)[1] - p.rho0 * uq) < 1e-8);
    p.V = 0.1;
    CHECK_THROWS_AS(explicit_transverse(p, grid), std::invalid_argument);
}

TEST_CASE("drag law is linear in u_inf and |V|") {
    auto p = layer_params();
    CHECK(std::abs(drag(p) - p.u_inf * p.rho0 * std::abs(p.V)) < 1e-15);
    auto p2 = p;
    p2.V = 2.0 * p.V;
    CHECK(drag(p2) == 2.0 * drag(p)); // doubling |V| doubles drag exactly
    auto p3 = p;
    p3.u_inf = 0.0;
    CHECK(drag(p3) == 0.0);
}

TEST_CASE("shooting solver reproduces the explicit layer") {
    auto p = layer_params();
    auto sys = build_isentropic_2d(p);
    EndState plus = isentropic_end_state(p);
    Vec wpar(2);
    wpar << 0.0, p.V; // wall velocities (u, v)
    ProfileOptions opt;
    opt.n_nodes = 200;
    auto branches = solve_profile(sys, plus, WallConstraints::outflow(sys, wpar), opt);
    REQUIRE(branches.size() >= 1);
    const Profile& prof = branches.front();
    Profile exact = explicit_transverse(p, prof.grid);
    CHECK((prof.values - exact.values).cwiseAbs().maxCoeff() < 1e-8);
    // layer ODE residual: B11 U' = F1(U) - F1(U+) pointwise
    double res = 0;
    for (int i = 0; i < prof.n_nodes(); ++i) {
        Vec U = prof.values.row(i), Up = prof.derivative.row(i);
        res = std::max(res, (sys.viscosity(1, 1, U) * Up -
                             (sys.flux(1, U) - sys.flux(1, plus.U_plus)))
                                .norm());
    }
    CHECK(res < 1e-9);
    DecayReport dec = verify_decay(prof, 1);
    CHECK(dec.pass);
    CHECK(dec.theta[0] > 0.0);
}

TEST_CASE("trivial inflow connection is the constant state") {
    IsentropicParams p;
    p.V = 0.15;
    p.u_inf = 0.0;
    p.mu = 0.1;
    auto sys = build_isentropic_2d(p);
    EndState plus = isentropic_end_state(p);
    auto branches =
        solve_profile(sys, plus, WallConstraints::inflow(plus.W_plus));
    REQUIRE(branches.size() >= 1);
    CHECK((branches.front().values.rowwise() - plus.U_plus.transpose())
              .cwiseAbs()
              .maxCoeff() < 1e-8);
}

TEST_CASE("inflow with transverse mismatch has no connection") {
    IsentropicParams p;
    p.V = 0.1;
    p.u_inf = 0.3;
    auto sys = build_isentropic_2d(p);
    EndState plus = isentropic_end_state(p);
    Vec wfull(3);
    wfull << p.rho0, 0.0, p.V; // u_wall = 0 but u_inf != 0: no stable connection
    CHECK_THROWS_AS(solve_profile(sys, plus, WallConstraints::inflow(wfull)),
                    NoConnection);
}

TEST_CASE("decay estimate sets the domain scale") {
    auto p = layer_params();
    auto sys = build_isentropic_2d(p);
    EndState plus = isentropic_end_state(p);
    const double theta = profile_decay_estimate(sys, plus);
    CHECK(theta > 0.0);
    CHECK(theta < 100.0);
}

} // TEST_SUITE
