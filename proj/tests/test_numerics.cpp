#include <cmath>
#include <numbers>

#include "blstab/errors.hpp"
#include "blstab/numerics.hpp"
#include "doctest.h"

using namespace blstab;

TEST_SUITE("numerics") {

TEST_CASE("fd weights differentiate polynomials exactly") {
    Vec xs(5);
    xs << -1.3, -0.2, 0.4, 1.1, 2.7;
    const double z = 0.3;
    for (int m = 0; m <= 2; ++m) {
        Vec w = fd_weights(z, xs, m);
        // p(x) = x^4 - 2x^2 + 3x - 1 and its derivatives at z
        auto p = [](double x) { return x * x * x * x - 2 * x * x + 3 * x - 1; };
        auto dp = [](double x) { return 4 * x * x * x - 4 * x + 3; };
        auto d2p = [](double x) { return 12 * x * x - 4; };
        double got = 0;
        for (int i = 0; i < 5; ++i) got += w[i] * p(xs[i]);
        double ref = m == 0 ? p(z) : (m == 1 ? dp(z) : d2p(z));
        CHECK(std::abs(got - ref) < 1e-10);
    }
}

TEST_CASE("interpolation weights reproduce quadratic extrapolation") {
    Vec xs(3);
    xs << 1.0, 2.0, 3.0;
    Vec w = fd_weights(4.0, xs, 0);
    // quadratic through (1,1),(2,4),(3,9) is x^2, so the value at 4 is 16
    CHECK(std::abs(w[0] * 1 + w[1] * 4 + w[2] * 9 - 16.0) < 1e-12);
    CHECK(std::abs(w.sum() - 1.0) < 1e-12);
}

TEST_CASE("trapezoid weights integrate linear functions exactly") {
    Vec x = layer_grid(10.0, 57, 2.0);
    Vec w = trapezoid_weights(x);
    CHECK(std::abs(w.sum() - 10.0) < 1e-12);
    double got = 0;
    for (int i = 0; i < x.size(); ++i) got += w[i] * (3.0 * x[i] + 1.0);
    CHECK(std::abs(got - (1.5 * 100.0 + 10.0)) < 1e-10);
}

TEST_CASE("grids are monotone with pinned endpoints") {
    for (const Vec& x : {uniform_grid(30.0, 101), layer_grid(30.0, 101, 4.0)}) {
        CHECK(x.size() == 101);
        CHECK(x[0] == 0.0);
        CHECK(std::abs(x[100] - 30.0) < 1e-12);
        for (int i = 1; i < 101; ++i) CHECK(x[i] > x[i - 1]);
    }
    // clustering: at least half the nodes of the layer grid resolve [0, 4]
    Vec lg = layer_grid(30.0, 101, 4.0);
    int inside = 0;
    for (int i = 0; i < 101; ++i)
        if (lg[i] <= 4.0 + 1e-12) ++inside;
    CHECK(inside >= 48);
}

TEST_CASE("grid derivative is exact on quadratics") {
    Vec x = layer_grid(5.0, 40, 1.0);
    Mat v(40, 2);
    for (int i = 0; i < 40; ++i) {
        v(i, 0) = x[i] * x[i];
        v(i, 1) = 2.0 - 0.5 * x[i];
    }
    Mat d = grid_derivative(x, v);
    for (int i = 0; i < 40; ++i) {
        CHECK(std::abs(d(i, 0) - 2 * x[i]) < 1e-9);
        CHECK(std::abs(d(i, 1) + 0.5) < 1e-10);
    }
}

TEST_CASE("log-linear fit recovers synthetic decay") {
    int N = 60;
    Vec x(N), y(N);
    for (int i = 0; i < N; ++i) {
        x[i] = 0.25 * i;
        y[i] = 2.7 * std::exp(-0.6 * x[i]);
    }
    DecayFit f = fit_log_linear(x, y, 1e-12);
    CHECK(std::abs(f.rate - 0.6) < 1e-10);
    CHECK(std::abs(f.log_c - std::log(2.7)) < 1e-9);
    CHECK(f.r2 > 0.999999);
    // floor removes the tail; too few survivors throws
    CHECK_THROWS_AS(fit_log_linear(x, y, 1e3), FitFailed);
}

TEST_CASE("ode integrator hits exponential to tolerance") {
    OdeRhs f = [](double, const VecC& y) { return VecC(-2.0 * y); };
    VecC y0 = VecC::Constant(1, 1.0);
    auto sol = integrate_ode(f, y0, 0.0, 3.0);
    CHECK(std::abs(sol.y.back()[0] - std::exp(-6.0)) < 1e-9);
    // dense output between nodes
    CHECK(std::abs(sol.eval(1.234)[0] - std::exp(-2.468)) < 1e-8);
}

TEST_CASE("scaled complex keeps products representable") {
    ScaledComplex a{Complex(2.0, 0.0), 400.0};
    ScaledComplex b{Complex(0.5, 0.0), 400.0};
    auto c = a * b;
    CHECK(std::abs(c.log_abs() - 800.0) < 1e-9);
    CHECK(std::isfinite(c.value.real()));
    auto d = a / b;
    CHECK(std::abs(d.log_abs() - std::log(4.0)) < 1e-9);
}

TEST_CASE("unit directions are deterministic and unit length") {
    auto d1 = unit_directions(2, 16, 3);
    auto d2 = unit_directions(2, 16, 3);
    REQUIRE(d1.size() == 16);
    for (std::size_t i = 0; i < d1.size(); ++i) {
        CHECK(std::abs(d1[i].norm() - 1.0) < 1e-12);
        CHECK((d1[i] - d2[i]).norm() == 0.0);
    }
    auto one = unit_directions(1, 2);
    CHECK(one[0][0] * one[1][0] < 0.0);
}

TEST_CASE("cluster multiplicities report eigenvalue collision signatures") {
    VecC v(5);
    v << Complex(1, 0), Complex(1 + 1e-12, 0), Complex(2, 0), Complex(2, 1e-12),
        Complex(5, 0);
    auto sig = cluster_multiplicities(v, 1e-8);
    REQUIRE(sig.size() == 3);
    CHECK(sig[0] == 2);
    CHECK(sig[1] == 2);
    CHECK(sig[2] == 1);
}

} // TEST_SUITE
