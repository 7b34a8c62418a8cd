#include <cmath>
#include <numbers>
#include <random>

#include "blstab/dynamics.hpp"
#include "blstab/energy.hpp"
#include "blstab/errors.hpp"
#include "blstab/model.hpp"
#include "blstab/numerics.hpp"
#include "blstab/profile.hpp"
#include "doctest.h"

using namespace blstab;

namespace {

SystemDefinition scalar_heat(double mu, double m) {
    Mat a0 = Mat::Identity(1, 1);
    std::vector<Mat> asym{Mat::Constant(1, 1, m)};
    std::vector<std::vector<Mat>> bsym{{Mat::Constant(1, 1, mu)}};
    return make_custom_tabulated(a0, asym, bsym, 1);
}

const EndState kZero1{Vec::Zero(1), Vec::Zero(1)};

struct Layer {
    IsentropicParams p;
    SystemDefinition sys;
    Profile prof;
};

Layer outflow_layer(int n_nodes, bool uniform) {
    Layer L;
    L.p.rho0 = 1.0;
    L.p.V = -0.2;
    L.p.u_inf = 0.3;
    L.p.mu = 0.1;
    L.p.eta = 0.05;
    L.sys = build_isentropic_2d(L.p);
    Vec grid = uniform ? uniform_grid(30.0, n_nodes)
                       : layer_grid(30.0, n_nodes, 3.0);
    L.prof = explicit_transverse(L.p, grid);
    return L;
}

Mat gaussian_bump(const Vec& grid, double amp, double center) {
    Mat U0 = Mat::Zero(grid.size(), 3);
    for (int i = 0; i < grid.size(); ++i)
        for (int c = 0; c < 3; ++c)
            U0(i, c) = amp * std::exp(-(grid[i] - center) * (grid[i] - center));
    return U0;
}

} // namespace

TEST_SUITE("dynamics") {

TEST_CASE("zero data stays exactly zero") {
    auto sys = scalar_heat(1.0, 0.0);
    Profile prof = constant_profile(sys, kZero1, uniform_grid(20.0, 101));
    EvolveOptions o;
    o.n_records = 9;
    auto lin = linearized_evolve(sys, prof, Vec(), MatC::Zero(101, 1), nullptr,
                                 nullptr, 1.0, "outflow", o);
    CHECK(lin.l2.maxCoeff() == 0.0);
    auto L = outflow_layer(151, true);
    auto non = nonlinear_evolve_1d(L.sys, L.prof, Mat::Zero(151, 3), nullptr, 1.0,
                                   "outflow", o);
    CHECK(non.l2.maxCoeff() == 0.0);
    CHECK(non.max_drift < 1e-14);
}

TEST_CASE("half-line heat evolution matches the image-method integral") {
    auto sys = scalar_heat(1.0, 0.0);
    const int N = 801;
    Vec grid = uniform_grid(60.0, N);
    Profile prof = constant_profile(sys, kZero1, grid);
    MatC U0(N, 1);
    for (int i = 0; i < N; ++i) U0(i, 0) = grid[i] * std::exp(-grid[i]);
    EvolveOptions o;
    o.n_records = 5;
    o.store_snapshots = true;
    const double T = 2.0;
    auto rec = linearized_evolve(sys, prof, Vec(), U0, nullptr, nullptr, T,
                                 "outflow", o);
    // Dirichlet heat kernel: u = int (G(x-y,t) - G(x+y,t)) u0(y) dy
    const int NY = 6001;
    Vec yg = uniform_grid(60.0, NY);
    Vec wq = trapezoid_weights(yg);
    auto kernel = [&](double x, double t) {
        double s = 0;
        for (int k = 0; k < NY; ++k) {
            const double y = yg[k], u0 = y * std::exp(-y);
            const double gm = std::exp(-(x - y) * (x - y) / (4 * t));
            const double gp = std::exp(-(x + y) * (x + y) / (4 * t));
            s += wq[k] * (gm - gp) * u0;
        }
        return s / std::sqrt(4 * std::numbers::pi * t);
    };
    double num = 0, den = 0;
    Vec wg = trapezoid_weights(grid);
    for (int i = 0; i < N; i += 16) {
        const double ex = kernel(grid[i], T);
        num += wg[i] * std::norm(rec.snapshots[4](i, 0) - ex);
        den += wg[i] * ex * ex;
    }
    CHECK(std::sqrt(num / den) < 1e-3);
}

TEST_CASE("transverse mode damping rate equals mu k squared") {
    // two runs differing only in the transverse wavenumber isolate the
    // Fourier damping factor exp(-mu k^2 t); the two-time log ratio cancels
    // the shared normal-direction decay
    Mat a0 = Mat::Identity(1, 1);
    std::vector<Mat> asym{Mat::Constant(1, 1, -0.1), Mat::Zero(1, 1)};
    std::vector<std::vector<Mat>> bsym{
        {Mat::Constant(1, 1, 0.1), Mat::Zero(1, 1)},
        {Mat::Zero(1, 1), Mat::Constant(1, 1, 0.1)}};
    auto sys = make_custom_tabulated(a0, asym, bsym, 1);
    const int N = 601;
    Vec grid = uniform_grid(40.0, N);
    Profile prof = constant_profile(sys, kZero1, grid);
    MatC U0(N, 1);
    for (int i = 0; i < N; ++i)
        U0(i, 0) = std::exp(-(grid[i] - 15) * (grid[i] - 15));
    EvolveOptions o;
    o.n_records = 17;
    auto r0 = linearized_evolve(sys, prof, Vec::Zero(1), U0, nullptr, nullptr,
                                4.0, "outflow", o);
    auto r1 = linearized_evolve(sys, prof, Vec::Ones(1), U0, nullptr, nullptr,
                                4.0, "outflow", o);
    const int R = static_cast<int>(r0.t.size());
    const double rate = (std::log(r0.l2[R - 1] / r1.l2[R - 1]) -
                         std::log(r0.l2[R / 2] / r1.l2[R / 2])) /
                        (r0.t[R - 1] - r0.t[R / 2]);
    CHECK(std::abs(rate - 0.1) < 1e-6);
}

TEST_CASE("superposition residual vanishes without forcing and converges with it") {
    auto sys = scalar_heat(1.0, 0.0);
    const int N = 401;
    Vec grid = uniform_grid(40.0, N);
    Profile prof = constant_profile(sys, kZero1, grid);
    MatC U0(N, 1);
    for (int i = 0; i < N; ++i) U0(i, 0) = grid[i] * std::exp(-grid[i]);
    EvolveOptions o;
    o.n_records = 11;
    CHECK(duhamel_residual(sys, prof, Vec(), U0, nullptr, 1.0, "outflow", o) == 0.0);
    auto f = [&](double t) {
        MatC F(N, 1);
        for (int i = 0; i < N; ++i) F(i, 0) = grid[i] * std::exp(-grid[i] - t);
        return F;
    };
    const double coarse = duhamel_residual(sys, prof, Vec(), U0, f, 1.0, "outflow", o);
    o.n_records = 21;
    const double fine = duhamel_residual(sys, prof, Vec(), U0, f, 1.0, "outflow", o);
    CHECK(coarse < 1e-3);
    CHECK(fine < coarse / 2.5);
}

TEST_CASE("boundary lifting residual is small and second order in time") {
    auto sys = scalar_heat(1.0, 0.0);
    Profile prof = constant_profile(sys, kZero1, uniform_grid(40.0, 201));
    auto h = [](double t) { return VecC::Constant(1, 1.0 - std::exp(-t)); };
    EvolveOptions o;
    o.n_records = 11;
    const double res = boundary_homogenization_check(sys, prof, Vec(), h, 1.0,
                                                     "outflow", o);
    CHECK(res < 1e-6);
    // incompatible trace at t=0 is rejected up front
    auto hbad = [](double) { return VecC::Constant(1, 1.0); };
    CHECK_THROWS_AS(boundary_homogenization_check(sys, prof, Vec(), hbad, 1.0,
                                                  "outflow", o),
                    CompatibilityViolation);
}

TEST_CASE("initial data must satisfy the wall constraints") {
    auto L = outflow_layer(101, false);
    MatC U0 = MatC::Zero(101, 3);
    U0(0, 1) = 0.3; // nonzero wall velocity with a homogeneous trace
    EvolveOptions o;
    CHECK_THROWS_AS(linearized_evolve(L.sys, L.prof, Vec::Zero(1), U0, nullptr,
                                      nullptr, 1.0, "outflow", o),
                    CompatibilityViolation);
}

TEST_CASE("trace and forcing shapes are validated") {
    auto L = outflow_layer(101, false);
    MatC U0 = MatC::Zero(101, 3);
    EvolveOptions o;
    o.n_records = 3;
    auto bad_h = [](double) { return VecC::Zero(3); }; // outflow expects r = 2
    CHECK_THROWS_AS(linearized_evolve(L.sys, L.prof, Vec::Zero(1), U0, bad_h,
                                      nullptr, 0.1, "outflow", o),
                    DimensionMismatch);
    auto bad_f = [](double) { return MatC::Zero(7, 3); };
    CHECK_THROWS_AS(linearized_evolve(L.sys, L.prof, Vec::Zero(1), U0, nullptr,
                                      bad_f, 0.1, "outflow", o),
                    DimensionMismatch);
}

TEST_CASE("runaway growth trips the guard") {
    auto sys = scalar_heat(-1.0, 0.0); // backward heat
    const int N = 401;
    Profile prof = constant_profile(sys, kZero1, uniform_grid(4.0, N));
    MatC U0 = MatC::Zero(N, 1);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> un(-1e-3, 1e-3);
    for (int i = 1; i < N; ++i) U0(i, 0) = un(rng);
    EvolveOptions o;
    o.n_records = 41;
    o.blowup_factor = 10.0;
    CHECK_THROWS_AS(linearized_evolve(sys, prof, Vec(), U0, nullptr, nullptr,
                                      2e-4, "outflow", o),
                    BlowUp);
}

TEST_CASE("oversized nonlinear steps are rejected") {
    auto L = outflow_layer(151, true);
    Mat U0 = gaussian_bump(L.prof.grid, 1e-3, 10.0);
    EvolveOptions o;
    o.dt = 1.0; // far above the transport bound
    CHECK_THROWS_AS(nonlinear_evolve_1d(L.sys, L.prof, U0, nullptr, 1.0,
                                        "outflow", o),
                    StepRejected);
}

TEST_CASE("small perturbations decay with negligible conservation drift") {
    auto L = outflow_layer(301, true);
    Mat U0 = gaussian_bump(L.prof.grid, 1e-3, 10.0);
    EvolveOptions o;
    o.n_records = 11;
    auto rec = nonlinear_evolve_1d(L.sys, L.prof, U0, nullptr, 5.0, "outflow", o);
    CHECK(rec.l2[10] < rec.l2[0]);
    CHECK(rec.max_drift < 1e-12);
}

TEST_CASE("inflow linearized evolution decays") {
    IsentropicParams p;
    p.V = 0.2;
    p.u_inf = 0.0;
    p.mu = 0.1;
    auto sys = build_isentropic_2d(p);
    Vec grid = uniform_grid(30.0, 201);
    Profile prof = constant_profile(sys, isentropic_end_state(p), grid);
    MatC U0 = MatC::Zero(201, 3);
    for (int i = 0; i < 201; ++i)
        for (int c = 0; c < 3; ++c)
            U0(i, c) = 1e-3 * std::exp(-(grid[i] - 8) * (grid[i] - 8));
    EvolveOptions o;
    o.n_records = 11;
    auto rec = linearized_evolve(sys, prof, Vec::Constant(1, 0.5), U0, nullptr,
                                 nullptr, 10.0, "inflow", o);
    CHECK(rec.l2[10] < rec.l2[0]);
}

TEST_CASE("recorded energy functional decays for damped frequencies") {
    auto L = outflow_layer(201, false);
    Vec wplus = L.sys.to_w(L.prof.end_state.U_plus);
    auto km = kawashima_K(L.sys, wplus, Vec::Unit(2, 0));
    auto w = weight_alpha(L.sys, L.prof, 1.0, "outflow");
    auto defs = energy_defaults(L.sys, L.prof, km);
    MatC U0 = gaussian_bump(L.prof.grid, 1e-4, 8.0).cast<Complex>();
    EvolveOptions o;
    o.n_records = 21;
    o.energy.weight = &w;
    o.energy.K1 = km.K;
    o.energy.M = defs.M;
    o.energy.eps = defs.eps;
    o.energy.s = 1;
    auto rec = linearized_evolve(L.sys, L.prof, Vec::Constant(1, 0.5), U0, nullptr,
                                 nullptr, 10.0, "outflow", o);
    REQUIRE(rec.es.size() == 21);
    CHECK(rec.es[0] > 0.0);
    CHECK(rec.es[20] < rec.es[0]);
    auto rep = gronwall_audit(rec.t, rec.es, Vec(rec.l2.array().square()),
                              Vec::Zero(rec.t.size()), {});
    CHECK(rep.feasible);
}

TEST_CASE("decay measurement recovers a synthetic rate") {
    TrajectoryRecord rec;
    const int R = 41;
    rec.t = Vec(R);
    rec.l2 = Vec(R);
    rec.linf = Vec(R);
    for (int i = 0; i < R; ++i) {
        rec.t[i] = 0.25 * i;
        rec.l2[i] = 2.0 * std::exp(-0.3 * rec.t[i]);
        rec.linf[i] = rec.l2[i];
    }
    auto fit = measure_decay(rec, "l2", 0.0, 10.0);
    CHECK(std::abs(fit.rate - 0.3) < 1e-9);
}

TEST_CASE("trajectory export is a schema-stamped table") {
    auto sys = scalar_heat(1.0, 0.0);
    Profile prof = constant_profile(sys, kZero1, uniform_grid(20.0, 51));
    MatC U0(51, 1);
    for (int i = 0; i < 51; ++i)
        U0(i, 0) = prof.grid[i] * std::exp(-prof.grid[i]);
    EvolveOptions o;
    o.n_records = 6;
    auto rec = linearized_evolve(sys, prof, Vec(), U0, nullptr, nullptr, 0.5,
                                 "outflow", o);
    const std::string csv = rec.to_csv();
    CHECK(csv.rfind("# schema=1\n", 0) == 0);
    CHECK(csv.find("t,l2,linf") != std::string::npos);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 2 + 6);
}

} // TEST_SUITE
