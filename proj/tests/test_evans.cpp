#include <cmath>
#include <numbers>

#include "blstab/errors.hpp"
#include "blstab/evans.hpp"
#include "blstab/profile.hpp"
#include "doctest.h"

using namespace blstab;

namespace {

std::vector<Complex> circle(Complex c, double R, int npts) {
    std::vector<Complex> pts;
    for (int i = 0; i < npts; ++i)
        pts.push_back(c + R * std::exp(Complex(0.0, 2 * std::numbers::pi * i / npts)));
    return pts;
}

Complex log_det(const ScaledComplex& d) {
    return Complex(d.log_abs(), std::arg(d.value));
}

struct LayerProblem {
    SystemDefinition sys;
    Profile prof;
    EvansProblem prob;
    IsentropicParams p;
};

LayerProblem small_layer() {
    LayerProblem L;
    L.p.rho0 = 1.0;
    L.p.V = -0.2;
    L.p.u_inf = 0.1;
    L.p.mu = 0.2;
    L.p.eta = 0.0;
    L.sys = build_isentropic_2d(L.p);
    const double rate = -L.p.rho0 * L.p.V / L.p.mu;
    Vec grid = layer_grid(30.0 / rate, 600, 5.0 / rate);
    L.prof = explicit_transverse(L.p, grid);
    L.prob = make_evans_problem(L.sys, L.prof, "outflow");
    return L;
}

} // namespace

TEST_SUITE("evans") {

TEST_CASE("bound state of the reflectionless well is counted once") {
    auto pt = make_poschl_teller();
    Vec xi0(0);
    auto w1 = winding_number(pt, xi0, circle(Complex(1, 0), 0.5, 16));
    CHECK(w1.winding == 1);
    CHECK(w1.closure_defect < 1e-6);
    auto w3 = winding_number(pt, xi0, circle(Complex(3, 0), 0.5, 16));
    CHECK(w3.winding == 0);
    CHECK(w3.min_abs_d > 0.0);
}

TEST_CASE("determinant vanishes at the known eigenvalue") {
    auto pt = make_poschl_teller();
    Vec xi0(0);
    EvansPath path(pt, Frequency{xi0, Complex(2.0, 0.0)});
    auto at_eig = path.eval(Frequency{xi0, Complex(1.0, 0.0)});
    auto away = path.eval(Frequency{xi0, Complex(2.0, 0.0)});
    CHECK(at_eig.log_abs() - away.log_abs() < std::log(1e-7));
}

TEST_CASE("path evaluation is repeatable and path independent") {
    auto L = small_layer();
    Vec xi0 = Vec::Zero(1);
    Frequency anchor{xi0, Complex(10.0, 0.0)};
    Frequency target{xi0, Complex(0.3, 1.7)};
    EvansPath a(L.prob, anchor), b(L.prob, anchor);
    auto da = a.eval(target);
    auto da2 = a.eval(target);
    CHECK(da.log_abs() == da2.log_abs());
    b.eval(Frequency{xi0, Complex(8.0, 4.0)});
    b.eval(Frequency{xi0, Complex(2.0, 5.0)});
    b.eval(Frequency{xi0, Complex(0.5, 3.0)});
    auto db = b.eval(target);
    CHECK(std::abs(std::exp(log_det(da) - log_det(db)) - 1.0) < 1e-6);
}

TEST_CASE("zero transverse frequency decouples shear from acoustics") {
    auto L = small_layer();
    Vec xi0 = Vec::Zero(1);
    // coefficient matrix is block triangular: shear rows do not feed back
    double worst = 0;
    for (double x : {0.0, 0.7, 2.3, 8.0}) {
        MatC A = L.prob.coeff(x, Frequency{xi0, Complex(1.3, 0.4)});
        for (int i : {0, 2, 4})
            for (int j : {1, 3}) worst = std::max(worst, std::abs(A(i, j)));
    }
    CHECK(worst < 1e-12);

    // determinant factors into shear and acoustic parts up to a constant
    MatC phi_u = MatC::Zero(2, 1);
    phi_u(1, 0) = 1.0;
    MatC phi_rv = MatC::Zero(3, 2);
    phi_rv(0, 0) = 1.0;
    phi_rv(1, 0) = L.p.V;
    phi_rv(2, 1) = 1.0;
    auto prob_u = subproblem(L.prob, {1, 3}, phi_u, "shear");
    auto prob_rv = subproblem(L.prob, {0, 2, 4}, phi_rv, "acoustic");
    Frequency anchor{xi0, Complex(2.0, 0.0)};
    EvansPath pf(L.prob, anchor), pu(prob_u, anchor), prv(prob_rv, anchor);
    CHECK(pf.k_plus() == 2);
    CHECK(pu.k_plus() == 1);
    CHECK(prv.k_plus() == 1);
    std::vector<Complex> lams = {{2, 0}, {1, 1}, {0.5, 0.2}, {3, -0.7}, {0.2, 2.0}};
    Complex lr0;
    for (std::size_t i = 0; i < lams.size(); ++i) {
        Frequency fr{xi0, lams[i]};
        Complex lr = log_det(pf.eval(fr)) - log_det(pu.eval(fr)) - log_det(prv.eval(fr));
        if (i == 0)
            lr0 = lr;
        else
            CHECK(std::abs(std::exp(lr - lr0) - 1.0) < 1e-6);
    }
}

TEST_CASE("limiting splitting matches the scalar dispersion relation") {
    auto cd = make_convection_diffusion(0.1, -0.1);
    Vec xi0(0);
    Complex lam(0.7, 0.3);
    auto sp = limiting_split(cd, Frequency{xi0, lam});
    CHECK(sp.k_plus == 1);
    CHECK(sp.stable.size() + sp.unstable.size() == 2);
    const double mu = 0.1, m = -0.1;
    Complex kappa = (m - std::sqrt(Complex(m * m, 0) + 4.0 * mu * lam)) / (2 * mu);
    CHECK(std::abs(sp.eigenvalues[sp.stable[0]] - kappa) < 1e-10);
}

TEST_CASE("stable scalar transport has no unstable winding") {
    auto cd = make_convection_diffusion(0.1, -0.1);
    auto w = winding_number(cd, Vec(0), semicircle_contour(5.0, 1e-3));
    CHECK(w.winding == 0);
    CHECK(w.min_abs_d > 0.0);
}

TEST_CASE("semicircle contour is counterclockwise without repeated vertices") {
    auto c = semicircle_contour(10.0, 1e-3);
    REQUIRE(c.size() >= 8);
    // stored open; the winding computation supplies the closing edge
    CHECK(std::abs(c.front() - c.back()) > 1e-12);
    double rmax = 0, rmin = 1e300;
    double area2 = 0; // shoelace incl. closing edge: positive means ccw
    for (std::size_t i = 0; i < c.size(); ++i) {
        const Complex a = c[i], b = c[(i + 1) % c.size()];
        rmax = std::max(rmax, std::abs(a));
        rmin = std::min(rmin, std::abs(a));
        area2 += a.real() * b.imag() - b.real() * a.imag();
    }
    CHECK(rmax <= 10.0 + 1e-9);
    CHECK(rmin >= 1e-3 - 1e-15);
    CHECK(area2 > 0.0);
}

TEST_CASE("contour through a zero is rejected") {
    auto pt = make_poschl_teller();
    // vertex placed exactly on the eigenvalue
    auto c = circle(Complex(1.3, 0.0), 0.3, 8);
    CHECK_THROWS_AS(winding_number(pt, Vec(0), c), ZeroOnContour);
}

TEST_CASE("resolvent solve matches the explicit half-line solution") {
    auto heat = make_convection_diffusion(1.0, 0.0, 20.0);
    Vec rg = uniform_grid(20.0, 2001);
    const int N = rg.size();
    MatC f(N, 1);
    for (int i = 0; i < N; ++i) f(i, 0) = std::exp(-rg[i]);
    auto rr = resolvent_solve(heat, Frequency{Vec(0), Complex(1.0, 0.0)}, f, rg);
    double num = 0, den = 0;
    Vec w = trapezoid_weights(rg);
    for (int i = 0; i < N; ++i) {
        const Complex exact = -0.5 * rg[i] * std::exp(-rg[i]);
        num += w[i] * std::norm(rr.solution(i, 0) - exact);
        den += w[i] * std::norm(exact);
    }
    CHECK(std::sqrt(num / den) < 1e-4);
    CHECK(std::abs(rr.u_l2 - 0.25) < 1e-4);
    CHECK(std::abs(rr.f_h1 - 1.0) < 1e-4);
    CHECK_FALSE(rr.near_singular);
}

TEST_CASE("resolvent blows up near an eigenvalue") {
    auto pt = make_poschl_teller();
    const Vec& rg = pt.grid;
    MatC f(rg.size(), 1);
    for (int i = 0; i < rg.size(); ++i) f(i, 0) = std::exp(-rg[i]);
    auto far = resolvent_solve(pt, Frequency{Vec(0), Complex(3.0, 0.0)}, f, rg);
    auto close = resolvent_solve(pt, Frequency{Vec(0), Complex(1.0 + 1e-6, 0.0)}, f, rg);
    CHECK(close.ratio > 1e3 * far.ratio);
}

TEST_CASE("resolvent rejects mis-shaped forcing") {
    auto heat = make_convection_diffusion(1.0, 0.0, 20.0);
    Vec rg = uniform_grid(20.0, 101);
    MatC bad = MatC::Zero(50, 1);
    CHECK_THROWS_AS(resolvent_solve(heat, Frequency{Vec(0), Complex(1.0, 0.0)}, bad, rg),
                    DimensionMismatch);
}

TEST_CASE("condition check flags an enclosed zero") {
    auto pt = make_poschl_teller();
    ConditionDOptions opt;
    opt.radius = 2.0; // encloses the bound state at 1
    auto rep = check_condition_D(pt, {Vec(0)}, opt);
    CHECK_FALSE(rep.pass);
    int wtot = 0;
    for (auto& r : rep.results) wtot += r.winding;
    CHECK(wtot == 1);
}

TEST_CASE("winding work is reproducible across batch and path evaluation") {
    auto L = small_layer();
    Vec xi(1);
    xi << 0.5;
    WindingOptions wo;
    auto w1 = winding_number(L.prob, xi, semicircle_contour(2.0, 1e-3, 8, 8), wo);
    auto w2 = winding_number(L.prob, xi, semicircle_contour(2.0, 1e-3, 8, 8), wo);
    CHECK(w1.winding == w2.winding);
    CHECK(w1.min_abs_d == w2.min_abs_d);
    CHECK(w1.winding == 0);
}

} // TEST_SUITE
