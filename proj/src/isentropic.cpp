// 2D isentropic Navier-Stokes on the half-plane, wall along x1:
//
//   rho_t + (rho u)_x2 + (rho v)_x1 = 0
//   (rho u)_t + (rho u^2 + p)_x2 + (rho u v)_x1
//        = (2mu+eta) u_{x2 x2} + mu u_{x1 x1} + (mu+eta) v_{x2 x1}
//   (rho v)_t + (rho u v)_x2 + (rho v^2 + p)_x1
//        = mu v_{x2 x2} + (2mu+eta) v_{x1 x1} + (mu+eta) u_{x2 x1}
//
// with p = a rho^gamma. u is the transverse (x2) velocity, v the normal (x1)
// velocity. Conservative state U = (rho, rho u, rho v); hyperbolic block rho,
// parabolic block the momenta (r = 2).
//
// Symmetrizer: W = (rho, u, v), S = diag(p'/rho, rho, rho) applied to the
// primitive form. This gives
//   A0 = diag(p'/rho, rho, rho)
//   A1 = [[p' v/rho, 0, p'], [0, rho v, 0], [p', 0, rho v]]
//   A2 = [[p' u/rho, p', 0], [p', rho u, 0], [0, 0, rho u]]
// all symmetric at every state, A0 block-diagonal SPD for rho > 0, and the
// viscous blocks become constant:
//   bs11 = diag(mu, 2mu+eta), bs22 = diag(2mu+eta, mu),
//   bs12 = bs21 = [[0, (mu+eta)/2], [(mu+eta)/2, 0]]
// (the mixed (mu+eta) term split symmetrically). The source G vanishes
// identically because the bs blocks are constant. Correctness of this choice
// is gated by the (A1)-(A3) audits, not assumed.

#include "blstab/model.hpp"

#include <cmath>
#include <stdexcept>

namespace blstab {

double IsentropicParams::pressure(double rho) const { return a * std::pow(rho, gamma); }
double IsentropicParams::dpressure(double rho) const {
    return a * gamma * std::pow(rho, gamma - 1.0);
}
double IsentropicParams::sound_speed(double rho) const {
    return std::sqrt(dpressure(rho));
}

namespace {

struct Prim {
    double rho, u, v;
};

Prim prim(const Vec& U) {
    if (U[0] <= 0.0) throw NumericError("isentropic: nonpositive density");
    return {U[0], U[1] / U[0], U[2] / U[0]};
}

// velocity-form viscous blocks V^{jk} (rows: u-, v-momentum; cols: d/d u, d/d v)
Mat velocity_block(int j, int k, double mu, double eta) {
    Mat v(2, 2);
    if (j == 1 && k == 1) v << mu, 0, 0, 2 * mu + eta;
    else if (j == 2 && k == 2) v << 2 * mu + eta, 0, 0, mu;
    else if (j == 1 && k == 2) v << 0, mu, eta, 0;
    else v << 0, eta, mu, 0; // j==2, k==1
    return v;
}

// gradient-of-velocity map: (du, dv) = G(U) dU, G = [[-u,1,0],[-v,0,1]]/rho
Mat grad_map(const Prim& q) {
    Mat g(2, 3);
    g << -q.u / q.rho, 1.0 / q.rho, 0.0, -q.v / q.rho, 0.0, 1.0 / q.rho;
    return g;
}

Mat dgrad_map(const Prim& q, const Vec& w) {
    const double r2 = q.rho * q.rho;
    Mat g(2, 3);
    g << (2 * q.u * w[0] - w[1]) / r2, -w[0] / r2, 0.0,
        (2 * q.v * w[0] - w[2]) / r2, 0.0, -w[0] / r2;
    return g;
}

} // namespace

SystemDefinition build_isentropic_2d(const IsentropicParams& p) {
    if (p.gamma < 1.0) throw std::invalid_argument("isentropic: gamma < 1");
    if (p.a <= 0.0) throw std::invalid_argument("isentropic: a <= 0");
    if (p.mu <= 0.0) throw std::invalid_argument("isentropic: mu <= 0");
    if (std::abs(p.eta) > p.mu)
        throw std::invalid_argument("isentropic: |eta| > mu"); // eta = +-mu allowed
    if (p.rho0 <= 0.0) throw std::invalid_argument("isentropic: rho0 <= 0");

    SystemDefinition sys;
    sys.d = 2;
    sys.n = 3;
    sys.r = 2;
    sys.name = "isentropic2d";
    const double mu = p.mu, eta = p.eta;
    const IsentropicParams pp = p;

    sys.flux = [pp](int j, const Vec& U) -> Vec {
        Prim q = prim(U);
        const double pr = pp.pressure(q.rho);
        Vec f(3);
        if (j == 1)
            f << U[2], U[1] * q.v, U[2] * q.v + pr;
        else
            f << U[1], U[1] * q.u + pr, U[2] * q.u;
        return f;
    };

    sys.flux_jacobian = [pp](int j, const Vec& U) -> Mat {
        Prim q = prim(U);
        const double dp = pp.dpressure(q.rho);
        Mat m(3, 3);
        if (j == 1)
            m << 0, 0, 1, -q.u * q.v, q.v, q.u, dp - q.v * q.v, 0, 2 * q.v;
        else
            m << 0, 1, 0, dp - q.u * q.u, 2 * q.u, 0, -q.u * q.v, q.v, q.u;
        return m;
    };

    sys.viscosity = [mu, eta](int j, int k, const Vec& U) -> Mat {
        Prim q = prim(U);
        Mat b = Mat::Zero(3, 3);
        b.bottomRows(2) = velocity_block(j, k, mu, eta) * grad_map(q);
        return b;
    };

    sys.viscosity_deriv = [mu, eta](int j, int k, const Vec& U, const Vec& w) -> Mat {
        Prim q = prim(U);
        Mat b = Mat::Zero(3, 3);
        b.bottomRows(2) = velocity_block(j, k, mu, eta) * dgrad_map(q, w);
        return b;
    };

    sys.to_w = [](const Vec& U) -> Vec {
        Prim q = prim(U);
        Vec w(3);
        w << q.rho, q.u, q.v;
        return w;
    };
    sys.from_w = [](const Vec& W) -> Vec {
        Vec u(3);
        u << W[0], W[0] * W[1], W[0] * W[2];
        return u;
    };
    sys.w_jacobian = [](const Vec& U) -> Mat {
        Prim q = prim(U);
        Mat m(3, 3);
        m << 1, 0, 0, -q.u / q.rho, 1.0 / q.rho, 0, -q.v / q.rho, 0, 1.0 / q.rho;
        return m;
    };

    sys.a0 = [pp](const Vec& W) -> Mat {
        Mat m = Mat::Zero(3, 3);
        m(0, 0) = pp.dpressure(W[0]) / W[0];
        m(1, 1) = W[0];
        m(2, 2) = W[0];
        return m;
    };

    sys.a_sym = [pp](int j, const Vec& W) -> Mat {
        const double rho = W[0], u = W[1], v = W[2];
        const double dp = pp.dpressure(rho);
        Mat m(3, 3);
        if (j == 1)
            m << dp * v / rho, 0, dp, 0, rho * v, 0, dp, 0, rho * v;
        else
            m << dp * u / rho, dp, 0, dp, rho * u, 0, 0, 0, rho * u;
        return m;
    };

    sys.b_sym = [mu, eta](int j, int k, const Vec&) -> Mat {
        Mat m = Mat::Zero(3, 3);
        if (j == k) {
            m(1, 1) = (j == 1) ? mu : 2 * mu + eta;
            m(2, 2) = (j == 1) ? 2 * mu + eta : mu;
        } else {
            m(1, 2) = m(2, 1) = 0.5 * (mu + eta);
        }
        return m;
    };

    sys.source = [](const Vec&, const Mat&) -> Vec { return Vec::Zero(3); };

    return sys;
}

EndState isentropic_end_state(const IsentropicParams& p) {
    EndState s;
    s.U_plus = Vec(3);
    s.U_plus << p.rho0, p.rho0 * p.u_inf, p.rho0 * p.V;
    s.W_plus = Vec(3);
    s.W_plus << p.rho0, p.u_inf, p.V;
    return s;
}

} // namespace blstab
