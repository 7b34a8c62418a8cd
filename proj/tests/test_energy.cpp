#include <cmath>
#include <numbers>
#include <random>

#include "blstab/energy.hpp"
#include "blstab/errors.hpp"
#include "doctest.h"

using namespace blstab;

namespace {

struct LayerSetup {
    IsentropicParams p;
    SystemDefinition sys;
    Profile prof;
};

LayerSetup transverse_setup() {
    LayerSetup s;
    s.p.rho0 = 1.0;
    s.p.V = -0.2;
    s.p.u_inf = 0.1;
    s.p.mu = 0.2;
    s.p.eta = 0.0;
    s.sys = build_isentropic_2d(s.p);
    const double rate = -s.p.rho0 * s.p.V / s.p.mu;
    s.prof = explicit_transverse(s.p, layer_grid(30.0 / rate, 400, 5.0 / rate));
    return s;
}

} // namespace

TEST_SUITE("energy") {

TEST_CASE("rotation compensator of the degenerate wave system") {
    Mat a0 = Mat::Identity(2, 2);
    Mat A(2, 2);
    A << 0, 1, 1, 0;
    Mat B(2, 2);
    B << 0, 0, 0, 1;
    auto sys = make_custom_tabulated(a0, {A}, {{B}}, 1);
    Vec xi = Vec::Constant(1, 1.0);
    auto km = kawashima_K(sys, Vec::Zero(2), xi);
    CHECK(std::abs(km.theta2 - 0.5) < 1e-6);
    CHECK((km.K + km.K.transpose()).norm() == 0.0); // skew exactly
    CHECK(std::abs(std::abs(km.K(0, 1)) - 0.5) < 1e-6);
    // the reported margin is reproducible from the returned matrix
    CHECK(std::abs(compensated_margin(sys, Vec::Zero(2), xi, km.K) - km.theta2) < 1e-9);
}

TEST_CASE("fully parabolic systems need no compensation") {
    Mat a0 = Mat::Identity(2, 2);
    Mat A(2, 2);
    A << 1, 0.3, 0.3, -1;
    Mat B(2, 2);
    B << 2, 0.5, 0.5, 1;
    auto sys = make_custom_tabulated(a0, {A}, {{B}}, 2);
    auto km = kawashima_K(sys, Vec::Zero(2), Vec::Constant(1, 1.0));
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (B + B.transpose()));
    CHECK(km.theta2 >= es.eigenvalues().minCoeff() - 1e-9);
}

TEST_CASE("zero viscosity is infeasible") {
    Mat a0 = Mat::Identity(2, 2);
    Mat A(2, 2);
    A << 0, 1, 1, 0;
    auto sys = make_custom_tabulated(a0, {A}, {{Mat::Zero(2, 2)}}, 1);
    CHECK_THROWS_AS(kawashima_K(sys, Vec::Zero(2), Vec::Constant(1, 1.0)), Infeasible);
}

TEST_CASE("compensator margin is stable under direction perturbations") {
    auto s = transverse_setup();
    Vec wplus = s.sys.to_w(s.prof.end_state.U_plus);
    Vec e1 = Vec::Unit(2, 0);
    auto km = kawashima_K(s.sys, wplus, e1);
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> un(-0.1, 0.1);
    for (int k = 0; k < 50; ++k) {
        Vec xi = e1 + Vec::NullaryExpr(2, [&](int) { return un(rng); });
        xi.normalize();
        const double m = compensated_margin(s.sys, wplus, xi, km.K);
        CHECK(m > 0.5 * km.theta2);
    }
}

TEST_CASE("layer weight has the closed form of the integrated shear") {
    auto s = transverse_setup();
    auto w = weight_alpha(s.sys, s.prof, 1.0, "outflow");
    CHECK(w.sign_a111 == -1);
    CHECK(std::abs(w.theta1 - 0.4) < 1e-9);
    CHECK(w.alpha[0] == 1.0);
    double worst = 0;
    for (int i = 0; i < s.prof.n_nodes(); ++i) {
        // int_0^y |ubar'| = u_inf (1 - e^{rho0 V y / mu})
        const double I =
            s.p.u_inf * (1.0 - std::exp(s.p.rho0 * s.p.V * s.prof.grid[i] / s.p.mu));
        worst = std::max(worst, std::abs(w.alpha[i] - std::exp(I)));
    }
    CHECK(worst < 1e-3);
    CHECK(weight_defect(s.sys, s.prof, w) <= 1e-10);
    CHECK_THROWS_AS(weight_alpha(s.sys, s.prof, 1.0, "sideways"),
                    std::invalid_argument);
}

TEST_CASE("weight collapses to unity without a hyperbolic block") {
    Mat a0 = Mat::Identity(1, 1);
    auto sys = make_custom_tabulated(a0, {Mat::Zero(1, 1)},
                                     {{Mat::Identity(1, 1)}}, 1);
    EndState plus{Vec::Zero(1), Vec::Zero(1)};
    Profile prof;
    prof.grid = uniform_grid(10.0, 11);
    prof.values = Mat::Zero(11, 1);
    prof.derivative = Mat::Zero(11, 1);
    prof.end_state = plus;
    prof.wall_value = Vec::Zero(1);
    auto w = weight_alpha(sys, prof, 1.0, "outflow");
    CHECK((w.alpha.array() == 1.0).all());
    CHECK(w.theta1 == 0.0);
}

TEST_CASE("energy functional is a norm with explicit equivalence bounds") {
    auto s = transverse_setup();
    Vec wplus = s.sys.to_w(s.prof.end_state.U_plus);
    auto km = kawashima_K(s.sys, wplus, Vec::Unit(2, 0));
    auto w = weight_alpha(s.sys, s.prof, 1.0, "outflow");
    auto defs = energy_defaults(s.sys, s.prof, km);
    CHECK(defs.a0_min > 0.0);
    CHECK(defs.a0_max >= defs.a0_min);
    CHECK(defs.M >= 10.0);
    CHECK(defs.eps > 0.0);

    const int N = s.prof.n_nodes();
    CHECK(energy_functional(s.sys, s.prof, w, km.K, MatC::Zero(N, 3), 2, defs.M,
                            defs.eps) == 0.0);

    std::mt19937_64 rng(5);
    std::normal_distribution<double> gauss;
    double min_ratio = 1e300;
    for (int trial = 0; trial < 100; ++trial) {
        MatC W(N, 3);
        for (int i = 0; i < N; ++i)
            for (int c = 0; c < 3; ++c) W(i, c) = Complex(gauss(rng), gauss(rng));
        double hs2 = 0;
        const double E = energy_functional(s.sys, s.prof, w, km.K, W, 1, defs.M,
                                           defs.eps, &hs2);
        CHECK(E > 0.0);
        min_ratio = std::min(min_ratio, E / hs2);
    }
    CHECK(min_ratio > 1e-4);

    // zeroth functional is sandwiched by the weighted L2 bounds
    MatC W = MatC::Zero(N, 3);
    for (int i = 0; i < N; ++i)
        W(i, 1) = std::exp(-0.3 * s.prof.grid[i]) * Complex(1.0, 0.5);
    double l22 = 0;
    Vec qw = trapezoid_weights(s.prof.grid);
    for (int i = 0; i < N; ++i) l22 += qw[i] * std::norm(W(i, 1));
    const double E0 = energy_functional(s.sys, s.prof, w, km.K, W, 0, 0.0, 0.0);
    const double amin = w.alpha.minCoeff(), amax = w.alpha.maxCoeff();
    CHECK(E0 >= defs.a0_min * amin * l22 * (1 - 1e-9));
    CHECK(E0 <= defs.a0_max * amax * l22 * (1 + 1e-9));
}

TEST_CASE("boundary trace measure reproduces a separable oracle") {
    const int NX = 301, NT = 41;
    Vec xg = uniform_grid(2 * std::numbers::pi, NX);
    Vec tg = uniform_grid(2.0, NT);
    std::vector<MatC> h(NT);
    for (int j = 0; j < NT; ++j) {
        h[j] = MatC(NX, 1);
        for (int i = 0; i < NX; ++i) h[j](i, 0) = std::exp(-tg[j]) * std::sin(xg[i]);
    }
    auto bm = boundary_measure(tg, xg, h, 0, "outflow", 2);
    REQUIRE(bm.B.size() == NT);
    double worst = 0;
    for (int j = 0; j < NT; ++j) {
        const double ex = std::exp(-tg[j]) * (std::sqrt(3 * std::numbers::pi) +
                                              2 * std::sqrt(std::numbers::pi));
        worst = std::max(worst, std::abs(bm.B[j] - ex));
    }
    CHECK(worst < 1e-4);
    // zero trace gives zero measure
    std::vector<MatC> hz(NT, MatC::Zero(NX, 1));
    auto bz = boundary_measure(tg, xg, hz, 0, "outflow", 2);
    CHECK(bz.B.cwiseAbs().maxCoeff() == 0.0);
    // too few samples for the time stencils
    Vec t3 = uniform_grid(1.0, 3);
    std::vector<MatC> h3(3, MatC::Zero(NX, 1));
    CHECK_THROWS_AS(boundary_measure(t3, xg, h3, 0, "outflow", 2),
                    InsufficientSampling);
}

TEST_CASE("decay audit accepts decaying series and rejects sourceless growth") {
    const int N = 120;
    Vec t(N), E(N), l2(N);
    for (int i = 0; i < N; ++i) {
        t[i] = 0.1 * i;
        E[i] = 3.0 * std::exp(-0.8 * t[i]);
        l2[i] = 0.5 * std::exp(-0.8 * t[i]);
    }
    auto rep = gronwall_audit(t, E, l2, Vec());
    CHECK(rep.feasible);
    CHECK(rep.c_best <= 2.0);
    CHECK(rep.theta_best > 0.0);
    auto j = rep.to_json();
    CHECK(j["feasible"] == true);

    for (int i = 0; i < N; ++i) {
        E[i] = std::exp(1.0 * t[i]);
        l2[i] = 0.0;
    }
    auto bad = gronwall_audit(t, E, l2, Vec());
    CHECK_FALSE(bad.feasible);
    CHECK_THROWS_AS(require_feasible(bad), NoFeasiblePair);

    auto zero = gronwall_audit(t, Vec::Zero(N), Vec::Zero(N), Vec());
    CHECK(zero.feasible);
}

} // TEST_SUITE
