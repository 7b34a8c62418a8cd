#include "blstab/evans.hpp"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/Sparse>
#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>

namespace blstab {

namespace {
constexpr Complex I_UNIT{0.0, 1.0};
}

// ---------------------------------------------------------------------------
// Frequency

double Frequency::rho() const {
    return std::sqrt(xi_tilde.squaredNorm() + std::norm(lambda));
}

Frequency Frequency::lerp(const Frequency& a, const Frequency& b, double t) {
    Frequency f;
    f.xi_tilde = (1.0 - t) * a.xi_tilde + t * b.xi_tilde;
    f.lambda = (1.0 - t) * a.lambda + t * b.lambda;
    return f;
}

// ---------------------------------------------------------------------------
// First-order reduction of the eigenvalue ODE.
//
// Variables Z = (U, z) with z = [B^11 U' + i sum_k xi_k B^{1k} U - A^1 U]
// restricted to the parabolic rows. The hyperbolic rows of the second-order
// operator carry no viscosity, so they close the system at first order.

namespace {

struct ReductionBlocks {
    int n, r, hyp;
    Mat a1;                // full convection matrix incl. viscosity-derivative part
    Mat da1_hyp;           // x1-derivative of the hyperbolic rows of dF^1
    std::vector<Mat> aj;   // transverse convection matrices, j = 2..d
    Mat b11;               // parabolic rows of B^11
    Mat bxi1;              // sum_j xi_j * parabolic rows of B^{j1}
    Mat b1xi;              // sum_k xi_k * parabolic rows of B^{1k}
    Mat bxixi;             // sum_{j,k>=2} xi_j xi_k * parabolic rows of B^{jk}
    Eigen::PartialPivLU<Mat> p_lu; // P = [hyperbolic rows of A^1; b11]

    ReductionBlocks(const SystemDefinition& sys, const Vec& U, const Vec& U_prime,
                    const Frequency& freq) {
        n = sys.n;
        r = sys.r;
        hyp = sys.hyp();
        const int d = sys.d;
        if (freq.xi_tilde.size() != d - 1)
            throw DimensionMismatch("frequency has wrong transverse dimension");

        auto conv = [&](int j) {
            Mat A = sys.flux_jacobian(j, U);
            if (U_prime.squaredNorm() > 0)
                for (int m = 0; m < n; ++m)
                    A.col(m) -= sys.viscosity_deriv(j, 1, U, Vec::Unit(n, m)) * U_prime;
            return A;
        };
        a1 = conv(1);
        for (int j = 2; j <= d; ++j) aj.push_back(conv(j));

        // d/dx of the hyperbolic flux rows; the viscosity rows vanish there
        da1_hyp = Mat::Zero(hyp, n);
        const double upn = U_prime.norm();
        if (upn > 0) {
            const double h = 1e-6 * std::max(1.0, U.norm()) / upn;
            da1_hyp = (sys.flux_jacobian(1, U + h * U_prime).topRows(hyp) -
                       sys.flux_jacobian(1, U - h * U_prime).topRows(hyp)) /
                      (2 * h);
        }

        b11 = sys.b_block(1, 1, U);
        bxi1 = Mat::Zero(r, n);
        b1xi = Mat::Zero(r, n);
        bxixi = Mat::Zero(r, n);
        for (int j = 2; j <= d; ++j) {
            const double xj = freq.xi_tilde[j - 2];
            bxi1 += xj * sys.b_block(j, 1, U);
            b1xi += xj * sys.b_block(1, j, U);
            for (int k = 2; k <= d; ++k)
                bxixi += xj * freq.xi_tilde[k - 2] * sys.b_block(j, k, U);
        }

        Mat P(n, n);
        P.topRows(hyp) = a1.topRows(hyp);
        P.bottomRows(r) = b11;
        // H1 gates the reduction: det P = det(b2) * det(A*)
        const Mat b2 = b11.rightCols(r);
        const Mat astar = a1.topLeftCorner(hyp, hyp) -
                          a1.topRightCorner(hyp, r) *
                              b2.partialPivLu().solve(b11.leftCols(hyp));
        const double scale = std::max(1.0, a1.cwiseAbs().maxCoeff());
        if (std::abs(b2.determinant()) < 1e-12 * std::pow(scale, r) ||
            std::abs(astar.determinant()) < 1e-12 * std::pow(scale, hyp))
            throw SingularReduction("first-order reduction degenerate at this state");
        p_lu.compute(P);
    }

    MatC sum_xi_a() const {
        MatC s = MatC::Zero(n, n);
        for (std::size_t j = 0; j < aj.size(); ++j) s += aj[j].cast<Complex>();
        return s; // caller scales by xi components
    }
};

} // namespace

Mat convected_jacobian(const SystemDefinition& sys, const Vec& U, const Vec& U_prime,
                       int j) {
    Mat A = sys.flux_jacobian(j, U);
    if (U_prime.squaredNorm() > 0)
        for (int m = 0; m < sys.n; ++m)
            A.col(m) -= sys.viscosity_deriv(j, 1, U, Vec::Unit(sys.n, m)) * U_prime;
    return A;
}

MatC assemble_first_order(const SystemDefinition& sys, const Vec& U, const Vec& U_prime,
                          const Frequency& freq) {
    ReductionBlocks rb(sys, U, U_prime, freq);
    const int n = rb.n, r = rb.r, hyp = rb.hyp;
    const Complex lam = freq.lambda;

    MatC xi_a = MatC::Zero(n, n);
    for (std::size_t j = 0; j < rb.aj.size(); ++j)
        xi_a += freq.xi_tilde[static_cast<int>(j)] * rb.aj[j].cast<Complex>();

    MatC r_top = -rb.da1_hyp.cast<Complex>() - I_UNIT * xi_a.topRows(hyp);
    for (int i = 0; i < hyp; ++i) r_top(i, i) -= lam;
    MatC r_mid = rb.a1.bottomRows(r).cast<Complex>() - I_UNIT * rb.b1xi.cast<Complex>();

    MatC rhs_u(n, n + r);
    rhs_u.setZero();
    rhs_u.topLeftCorner(hyp, n) = r_top;
    rhs_u.block(hyp, 0, r, n) = r_mid;
    rhs_u.block(hyp, n, r, r) = MatC::Identity(r, r);

    // U' = P^{-1} (R U + [0;I] z)
    MatC a_u = rb.p_lu.solve(rhs_u.real()).cast<Complex>();
    a_u += I_UNIT * rb.p_lu.solve(rhs_u.imag());

    MatC a_z(r, n + r);
    a_z.setZero();
    a_z.leftCols(n) = I_UNIT * xi_a.bottomRows(r) + rb.bxixi.cast<Complex>();
    for (int i = 0; i < r; ++i) a_z(i, hyp + i) += lam;
    a_z -= I_UNIT * rb.bxi1.cast<Complex>() * a_u;

    MatC A(n + r, n + r);
    A.topRows(n) = a_u;
    A.bottomRows(r) = a_z;
    return A;
}

VecC assemble_forcing(const SystemDefinition& sys, const Vec& U, const Frequency& freq,
                      const VecC& f) {
    ReductionBlocks rb(sys, U, Vec::Zero(sys.n), freq);
    const int n = rb.n, r = rb.r, hyp = rb.hyp;
    VecC rhs = VecC::Zero(n);
    rhs.head(hyp) = -f.head(hyp);
    VecC g_u = rb.p_lu.solve(rhs.real().eval()).cast<Complex>() +
               I_UNIT * rb.p_lu.solve(rhs.imag().eval());
    VecC g(n + r);
    g.head(n) = g_u;
    g.tail(r) = f.tail(r) - I_UNIT * rb.bxi1.cast<Complex>() * g_u;
    return g;
}

// ---------------------------------------------------------------------------
// Boundary subspace

MatC boundary_subspace(const SystemDefinition& sys, const Vec& wall_state,
                       const std::string& boundary_case) {
    const int n = sys.n, r = sys.r;
    MatC constraints;
    if (boundary_case == "inflow") {
        constraints = MatC::Zero(n, n + r);
        constraints.leftCols(n) = MatC::Identity(n, n);
    } else if (boundary_case == "outflow") {
        constraints = MatC::Zero(r, n + r);
        constraints.leftCols(n) = sys.b_block(1, 1, wall_state).cast<Complex>();
    } else {
        throw std::invalid_argument("boundary_subspace: case must be inflow or outflow");
    }
    Eigen::FullPivLU<MatC> lu(constraints);
    lu.setThreshold(1e-12);
    MatC kern = lu.kernel();
    const int expect = n + r - static_cast<int>(constraints.rows());
    if (kern.cols() != expect)
        throw DimensionMismatch("boundary constraint matrix is rank deficient");
    Eigen::HouseholderQR<MatC> qr(kern);
    MatC q = qr.householderQ() * MatC::Identity(n + r, expect);
    // deterministic column phases: largest entry real positive
    for (int j = 0; j < q.cols(); ++j) {
        Eigen::Index im;
        q.col(j).cwiseAbs().maxCoeff(&im);
        q.col(j) *= std::conj(q(im, j)) / std::abs(q(im, j));
    }
    return q;
}

// ---------------------------------------------------------------------------
// Problem builders

EvansProblem make_evans_problem(const SystemDefinition& sys, const Profile& prof,
                                const std::string& boundary_case) {
    EvansProblem p;
    p.size = sys.n + sys.r;
    p.n_out = sys.n;
    p.grid = prof.grid;
    p.x_max = prof.grid[prof.n_nodes() - 1];
    p.phi_zero = boundary_subspace(sys, prof.wall_value, boundary_case);
    p.coeff = [sys, prof](double x, const Frequency& fr) {
        return assemble_first_order(sys, prof.eval(x), prof.eval_derivative(x), fr);
    };
    const Vec u_plus = prof.end_state.U_plus;
    p.coeff_limit = [sys, u_plus](const Frequency& fr) {
        return assemble_first_order(sys, u_plus, Vec::Zero(u_plus.size()), fr);
    };
    p.forcing = [sys, prof](double x, const Frequency& fr, const VecC& f) {
        return assemble_forcing(sys, prof.eval(x), fr, f);
    };
    p.name = sys.name + "-" + boundary_case;
    return p;
}

EvansProblem make_poschl_teller(double x_max) {
    EvansProblem p;
    p.size = 2;
    p.n_out = 1;
    p.x_max = x_max;
    p.grid = uniform_grid(x_max, 721);
    p.phi_zero = MatC::Zero(2, 1);
    p.phi_zero(1, 0) = 1.0; // Dirichlet: value pinned, derivative free
    p.coeff = [](double x, const Frequency& fr) {
        const double sech = 1.0 / std::cosh(x);
        MatC A(2, 2);
        A << 0.0, 1.0, fr.lambda - 6.0 * sech * sech, 0.0;
        return A;
    };
    p.coeff_limit = [](const Frequency& fr) {
        MatC A(2, 2);
        A << 0.0, 1.0, fr.lambda, 0.0;
        return A;
    };
    p.forcing = [](double, const Frequency&, const VecC& f) {
        VecC g(2);
        g << 0.0, f[0];
        return g;
    };
    p.name = "poschl-teller";
    return p;
}

EvansProblem make_convection_diffusion(double mu, double m, double x_max) {
    EvansProblem p;
    p.size = 2;
    p.n_out = 1;
    p.x_max = x_max;
    p.grid = uniform_grid(x_max, 721);
    p.phi_zero = MatC::Zero(2, 1);
    p.phi_zero(1, 0) = 1.0;
    p.coeff = [mu, m](double, const Frequency& fr) {
        MatC A(2, 2);
        A << 0.0, 1.0, fr.lambda / mu, m / mu;
        return A;
    };
    p.coeff_limit = [mu, m](const Frequency& fr) {
        MatC A(2, 2);
        A << 0.0, 1.0, fr.lambda / mu, m / mu;
        return A;
    };
    p.forcing = [mu](double, const Frequency&, const VecC& f) {
        VecC g(2);
        g << 0.0, f[0] / mu;
        return g;
    };
    p.name = "convection-diffusion";
    return p;
}

EvansProblem subproblem(const EvansProblem& prob, const std::vector<int>& idx,
                        const MatC& phi_zero_sub, const std::string& name) {
    EvansProblem p;
    p.size = static_cast<int>(idx.size());
    p.n_out = p.size;
    p.x_max = prob.x_max;
    p.grid = prob.grid;
    p.phi_zero = phi_zero_sub;
    auto extract = [idx](const MatC& A) {
        const int k = static_cast<int>(idx.size());
        MatC S(k, k);
        for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j) S(i, j) = A(idx[i], idx[j]);
        return S;
    };
    auto coeff = prob.coeff;
    p.coeff = [coeff, extract](double x, const Frequency& fr) { return extract(coeff(x, fr)); };
    auto lim = prob.coeff_limit;
    p.coeff_limit = [lim, extract](const Frequency& fr) { return extract(lim(fr)); };
    p.name = name;
    return p;
}

// ---------------------------------------------------------------------------
// Limiting matrix splitting

MatC Splitting::stable_basis() const {
    MatC b(vectors.rows(), stable.size());
    for (std::size_t j = 0; j < stable.size(); ++j) b.col(j) = vectors.col(stable[j]);
    return b;
}

MatC Splitting::stable_projector() const {
    const MatC vinv = vectors.inverse();
    MatC p = MatC::Zero(vectors.rows(), vectors.rows());
    for (int j : stable) p += vectors.col(j) * vinv.row(j);
    return p;
}

MatC Splitting::unstable_left_rows() const {
    const MatC vinv = vectors.inverse();
    MatC rows(unstable.size(), vectors.rows());
    for (std::size_t j = 0; j < unstable.size(); ++j) rows.row(j) = vinv.row(unstable[j]);
    return rows;
}

Complex Splitting::stable_trace() const {
    Complex t = 0.0;
    for (int j : stable) t += eigenvalues[j];
    return t;
}

Splitting limiting_split(const EvansProblem& prob, const Frequency& freq, double center_tol) {
    Splitting s;
    s.a_inf = prob.coeff_limit(freq);
    Eigen::ComplexEigenSolver<MatC> es(s.a_inf);
    if (es.info() != Eigen::Success)
        throw NumericError("limiting matrix eigensolve failed");
    s.eigenvalues = es.eigenvalues();
    s.vectors = es.eigenvectors();
    const double scale = std::max(1.0, s.eigenvalues.cwiseAbs().maxCoeff());
    double min_re = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < s.eigenvalues.size(); ++i) {
        const double re = s.eigenvalues[i].real();
        min_re = std::min(min_re, std::abs(re));
        if (std::abs(re) < center_tol * scale)
            throw CenterEigenvalue("limiting matrix has a near-center eigenvalue", std::abs(re));
        (re < 0 ? s.stable : s.unstable).push_back(static_cast<int>(i));
    }
    auto by_value = [&](int a, int b) {
        const Complex ea = s.eigenvalues[a], eb = s.eigenvalues[b];
        if (ea.real() != eb.real()) return ea.real() < eb.real();
        return ea.imag() < eb.imag();
    };
    std::sort(s.stable.begin(), s.stable.end(), by_value);
    std::sort(s.unstable.begin(), s.unstable.end(), by_value);
    s.k_plus = static_cast<int>(s.stable.size());
    return s;
}

// ---------------------------------------------------------------------------
// Manifold integration with continuous orthonormalization

namespace {

/// F <- Q with R-diagonal phases absorbed into the columns. The remaining
/// change-of-basis factor is then positive real, Prod |r_ii|; absorbing the
/// phases keeps the frame independent of the Householder sign convention.
ScaledComplex qr_renormalize(MatC& F) {
    const int k = static_cast<int>(F.cols());
    Eigen::HouseholderQR<MatC> qr(F);
    MatC Q = qr.householderQ() * MatC::Identity(F.rows(), k);
    MatC R = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
    ScaledComplex det{1.0, 0.0};
    for (int i = 0; i < k; ++i) {
        const Complex rii = R(i, i);
        const double a = std::abs(rii);
        if (a < 1e-300) {
            det.value = 0.0;
        } else {
            det.log_scale += std::log(a);
            Q.col(i) *= rii / a;
        }
    }
    F = Q;
    return det;
}

} // namespace

ManifoldResult integrate_manifold(const EvansProblem& prob, const Frequency& freq,
                                  const Splitting& split, const MatC& init_basis,
                                  const OdeOptions& opt) {
    const int size = prob.size;
    const int k = static_cast<int>(init_basis.cols());
    if (k != split.k_plus)
        throw DimensionMismatch("manifold initialization has wrong column count");

    ManifoldResult mr;
    mr.det_correction = ScaledComplex{1.0, 0.0};
    MatC F = init_basis;
    for (int j = 0; j < k; ++j) {
        const double s = F.col(j).norm();
        if (s <= 0) throw NumericError("manifold initialization has a zero column");
        F.col(j) /= s;
        mr.det_correction.log_scale += std::log(s);
    }
    mr.det_correction = mr.det_correction * qr_renormalize(F);

    double rate = 1e-3;
    for (int j : split.stable) rate = std::max(rate, -split.eigenvalues[j].real());
    int nseg = static_cast<int>(std::ceil(prob.x_max * rate / 10.0)) + 1;
    if (nseg > 4000)
        throw StiffnessFailure("manifold integration requires too many renormalizations");

    auto rhs = [&](double x, const VecC& y) -> VecC {
        const MatC A = prob.coeff(x, freq);
        VecC out(size * k);
        Eigen::Map<const MatC> Fm(y.data(), size, k);
        Eigen::Map<MatC>(out.data(), size, k) = A * Fm;
        return out;
    };

    const double h = prob.x_max / nseg;
    for (int s = 0; s < nseg; ++s) {
        const double xa = prob.x_max - s * h;
        const double xb = prob.x_max - (s + 1) * h;
        VecC y0(size * k);
        Eigen::Map<MatC>(y0.data(), size, k) = F;
        OdeSolution sol = integrate_ode(rhs, y0, xa, xb, opt);
        F = Eigen::Map<const MatC>(sol.y.back().data(), size, k);
        mr.det_correction = mr.det_correction * qr_renormalize(F);
    }

    // growth normalizer: multiply by e^{x_max * sum stable eigenvalues} to
    // cancel the backward growth so D stays uniformly bounded over frequency sets
    const Complex tr = split.stable_trace();
    mr.det_correction.log_scale += prob.x_max * tr.real();
    mr.det_correction.value *= std::exp(Complex(0.0, prob.x_max * tr.imag()));
    mr.frame0 = F;
    mr.det_correction.rebalance();
    return mr;
}

ScaledComplex evans_det_from_frame(const EvansProblem& prob, const ManifoldResult& mr) {
    const int size = prob.size;
    if (prob.phi_zero.cols() + mr.frame0.cols() != size)
        throw DimensionMismatch("boundary and manifold dimensions do not sum to phase size");
    MatC M(size, size);
    M.leftCols(prob.phi_zero.cols()) = prob.phi_zero;
    M.rightCols(mr.frame0.cols()) = mr.frame0;
    ScaledComplex d = mr.det_correction;
    d.value *= M.determinant();
    d.rebalance();
    return d;
}

// ---------------------------------------------------------------------------
// Analytic continuation of the initialization basis (discrete Kato transport)

EvansPath::EvansPath(const EvansProblem& prob, const Frequency& anchor, const OdeOptions& ode)
    : prob_(&prob), at_(anchor), ode_(ode) {
    split_ = limiting_split(prob, anchor);
    basis_ = split_.stable_basis();
    for (int j = 0; j < basis_.cols(); ++j) {
        Eigen::Index im;
        basis_.col(j).cwiseAbs().maxCoeff(&im);
        basis_.col(j) *= std::conj(basis_(im, j)) / std::abs(basis_(im, j));
        basis_.col(j).normalize();
    }
}

EvansPath::State EvansPath::save() const { return State{at_, split_, basis_, log_rescale_}; }

void EvansPath::restore(const State& s) {
    at_ = s.at;
    split_ = s.split;
    basis_ = s.basis;
    log_rescale_ = s.log_rescale;
}

namespace {

/// (I - X)^{-1/2} by binomial series; requires ||X|| well below 1
MatC inv_sqrt_series(const MatC& X) {
    const int n = static_cast<int>(X.rows());
    MatC S = MatC::Identity(n, n);
    MatC T = MatC::Identity(n, n);
    for (int k = 0; k < 64; ++k) {
        T = T * X * ((2.0 * k + 1.0) / (2.0 * k + 2.0));
        S += T;
        if (T.norm() < 1e-17) return S;
    }
    throw NumericError("projector distance too large for transport step");
}

} // namespace

void EvansPath::transport(const Frequency& to, int depth) {
    if ((to.lambda == at_.lambda) && (to.xi_tilde - at_.xi_tilde).norm() == 0.0) return;
    if (depth > 60)
        throw StiffnessFailure("frequency transport bisection exceeded maximum depth");
    const MatC p_old = split_.stable_projector();
    Splitting next = limiting_split(*prob_, to);
    if (next.k_plus != split_.k_plus)
        throw DimensionMismatch("decaying-subspace dimension changed along the path");
    const MatC p_new = next.stable_projector();
    const MatC D = p_new - p_old;
    if (D.norm() > 0.2) {
        transport(Frequency::lerp(at_, to, 0.5), depth + 1);
        transport(to, depth + 1);
        return;
    }
    // direct-rotation pair transform: maps ran(p_old) onto ran(p_new) and
    // agrees with parallel transport to second order in the step
    const MatC W = inv_sqrt_series(D * D) *
                   (p_new * p_old + (MatC::Identity(D.rows(), D.cols()) - p_new) *
                                        (MatC::Identity(D.rows(), D.cols()) - p_old));
    basis_ = W * basis_;
    for (int j = 0; j < basis_.cols(); ++j) {
        const double s = basis_.col(j).norm();
        if (s < 0.2 || s > 5.0) { // rescale folded back into eval() for analyticity
            basis_.col(j) /= s;
            log_rescale_ += std::log(s);
        }
    }
    at_ = to;
    split_ = std::move(next);
}

ScaledComplex EvansPath::eval(const Frequency& f) {
    transport(f);
    ManifoldResult mr = integrate_manifold(*prob_, at_, split_, basis_, ode_);
    ScaledComplex d = evans_det_from_frame(*prob_, mr);
    d.log_scale += log_rescale_;
    d.rebalance();
    return d;
}

// ---------------------------------------------------------------------------
// Contours and winding

std::vector<Complex> semicircle_contour(double radius, double indent, int axis_points,
                                        int arc_points) {
    std::vector<Complex> c;
    const double pi = std::numbers::pi;
    for (int i = 0; i <= arc_points; ++i) // right arc, angle 0 -> pi/2
        c.push_back(radius * std::exp(Complex(0.0, pi / 2 * i / arc_points)));
    const double low = (indent > 0) ? indent : radius * 1e-4;
    const double g = std::pow(low / radius, 1.0 / axis_points);
    for (int i = 1; i <= axis_points; ++i) // imaginary axis descending
        c.push_back(Complex(0.0, radius * std::pow(g, i)));
    if (indent > 0) {
        for (int i = 1; i < arc_points; ++i) // half-circle through Re > 0
            c.push_back(indent * std::exp(Complex(0.0, pi / 2 - pi * i / arc_points)));
    } else {
        c.push_back(Complex(0.0, 0.0));
    }
    for (int i = axis_points; i >= 1; --i)
        c.push_back(Complex(0.0, -radius * std::pow(g, i)));
    for (int i = 1; i < arc_points; ++i) // closing arc back to +radius
        c.push_back(radius * std::exp(Complex(0.0, -pi / 2 + pi / 2 * i / arc_points)));
    return c;
}

WindingResult winding_number(const EvansProblem& prob, const Vec& xi_tilde,
                             const std::vector<Complex>& contour, const WindingOptions& opt) {
    if (contour.size() < 3) throw std::invalid_argument("winding contour needs >= 3 points");
    WindingResult wr;
    const double pi = std::numbers::pi;

    auto freq_at = [&](Complex lam) { return Frequency{xi_tilde, lam}; };

    // anchor, with essential-spectrum dodge
    Complex lam0 = contour[0];
    std::unique_ptr<EvansPath> path;
    for (int attempt = 0;; ++attempt) {
        try {
            path = std::make_unique<EvansPath>(prob, freq_at(lam0), opt.ode);
            break;
        } catch (const CenterEigenvalue&) {
            if (attempt >= 3) throw;
            lam0 += opt.center_shift * std::max(1.0, std::abs(lam0));
            ++wr.center_shifts;
        }
    }

    auto eval_shifted = [&](Complex lam) -> std::pair<Complex, ScaledComplex> {
        for (int attempt = 0;; ++attempt) {
            try {
                return {lam, path->eval(freq_at(lam))};
            } catch (const CenterEigenvalue&) {
                if (attempt >= 3) throw;
                lam += opt.center_shift * std::max(1.0, std::abs(lam));
                ++wr.center_shifts;
            }
        }
    };

    double total_arg = 0.0;
    double max_log = -std::numeric_limits<double>::infinity();
    double min_log = std::numeric_limits<double>::infinity();

    auto record = [&](Complex lam, const ScaledComplex& d) {
        wr.contour.push_back(lam);
        const double la = d.log_abs();
        wr.log_abs_d.push_back(la);
        wr.arg_d.push_back(total_arg);
        max_log = std::max(max_log, la);
        min_log = std::min(min_log, la);
    };

    auto [lam_a, d_a] = eval_shifted(lam0);
    const double arg0 = std::arg(d_a.value);
    record(lam_a, d_a);

    std::function<ScaledComplex(Complex, ScaledComplex, int)> advance =
        [&](Complex target, ScaledComplex d_prev, int depth) -> ScaledComplex {
        auto st = path->save();
        auto [lam_t, d_t] = eval_shifted(target);
        const double dphi = std::arg(d_t.value / d_prev.value);
        if (std::abs(dphi) < pi / 2) {
            wr.refinement_depth = std::max(wr.refinement_depth, depth);
            total_arg += dphi;
            record(lam_t, d_t);
            return d_t;
        }
        if (depth >= opt.max_depth) {
            const double lo = std::min(d_t.log_abs(), d_prev.log_abs());
            throw ZeroOnContour("argument jump unresolved at max refinement near lambda = (" +
                                std::to_string(target.real()) + ", " +
                                std::to_string(target.imag()) + "), log|D| = " +
                                std::to_string(lo));
        }
        path->restore(st);
        const Complex mid = 0.5 * (path->position().lambda + target);
        ScaledComplex d_mid = advance(mid, d_prev, depth + 1);
        return advance(target, d_mid, depth + 1);
    };

    ScaledComplex d_prev = d_a;
    for (std::size_t i = 1; i < contour.size(); ++i) d_prev = advance(contour[i], d_prev, 0);
    d_prev = advance(lam_a, d_prev, 0); // close the loop

    // relative zero detection over all refined samples
    if (min_log < std::log(opt.zero_rel_tol) + max_log)
        throw ZeroOnContour("contour sample within zero threshold, log|D| = " +
                            std::to_string(min_log));

    wr.winding = static_cast<int>(std::lround(total_arg / (2 * pi)));
    wr.closure_defect = std::abs(total_arg - 2 * pi * wr.winding);
    wr.min_abs_d = std::exp(min_log);
    wr.max_abs_d = std::exp(max_log);
    // absolute argument record for plotting
    for (double& a : wr.arg_d) a += arg0;
    return wr;
}

nlohmann::json WindingResult::to_json() const {
    nlohmann::json j;
    j["schema"] = 1;
    j["winding"] = winding;
    j["min_abs_D"] = min_abs_d;
    j["max_abs_D"] = max_abs_d;
    j["refinement_depth"] = refinement_depth;
    j["closure_defect"] = closure_defect;
    j["center_shifts"] = center_shifts;
    nlohmann::json pts = nlohmann::json::array();
    for (std::size_t i = 0; i < contour.size(); ++i)
        pts.push_back({{"re", contour[i].real()},
                       {"im", contour[i].imag()},
                       {"log_abs_D", log_abs_d[i]},
                       {"arg_D", arg_d[i]}});
    j["contour"] = pts;
    return j;
}

// ---------------------------------------------------------------------------
// Condition (D) sweep

ConditionDReport check_condition_D(const EvansProblem& prob, const std::vector<Vec>& xi_grid,
                                   const ConditionDOptions& opt) {
    ConditionDReport rep;
    rep.pass = true;
    rep.min_margin = std::numeric_limits<double>::infinity();
    rep.xi_grid = xi_grid;
    for (const Vec& xi : xi_grid) {
        const double xin = xi.norm();
        const double indent =
            (xin < opt.origin_exclusion)
                ? std::sqrt(opt.origin_exclusion * opt.origin_exclusion - xin * xin)
                : 0.0;
        const auto contour = semicircle_contour(opt.radius, indent);
        try {
            WindingResult wr = winding_number(prob, xi, contour, opt.winding);
            if (wr.winding != 0) {
                rep.pass = false;
                rep.issues.push_back("nonzero winding " + std::to_string(wr.winding) +
                                     " at |xi| = " + std::to_string(xin));
            }
            if (wr.min_abs_d < rep.min_margin) {
                rep.min_margin = wr.min_abs_d;
                rep.worst_xi = xi;
                const auto it = std::min_element(wr.log_abs_d.begin(), wr.log_abs_d.end());
                rep.worst_lambda = wr.contour[std::distance(wr.log_abs_d.begin(), it)];
            }
            if (wr.min_abs_d <= opt.margin_tol) rep.pass = false;
            rep.results.push_back(std::move(wr));
        } catch (const NumericError& e) {
            rep.pass = false;
            rep.issues.push_back("|xi| = " + std::to_string(xin) + ": " + e.what());
            rep.results.push_back(WindingResult{});
            if (rep.min_margin == std::numeric_limits<double>::infinity()) {
                rep.min_margin = 0.0;
                rep.worst_xi = xi;
            }
        }
    }
    return rep;
}

nlohmann::json ConditionDReport::to_json() const {
    nlohmann::json j;
    j["schema"] = 1;
    j["pass"] = pass;
    j["min_margin"] = min_margin;
    j["worst_lambda"] = {{"re", worst_lambda.real()}, {"im", worst_lambda.imag()}};
    nlohmann::json wx = nlohmann::json::array();
    for (int i = 0; i < worst_xi.size(); ++i) wx.push_back(worst_xi[i]);
    j["worst_xi"] = wx;
    j["issues"] = issues;
    nlohmann::json res = nlohmann::json::array();
    for (std::size_t i = 0; i < results.size(); ++i) {
        nlohmann::json r = results[i].to_json();
        nlohmann::json xg = nlohmann::json::array();
        for (int k = 0; k < xi_grid[i].size(); ++k) xg.push_back(xi_grid[i][k]);
        r["xi_tilde"] = xg;
        r.erase("contour"); // keep the report compact
        res.push_back(r);
    }
    j["results"] = res;
    return j;
}

// ---------------------------------------------------------------------------
// Resolvent two-point BVP

ResolventResult resolvent_solve(const EvansProblem& prob, const Frequency& freq,
                                const MatC& f_values, const Vec& grid) {
    const int size = prob.size;
    const int N = static_cast<int>(grid.size());
    if (f_values.rows() != N || f_values.cols() != prob.n_out)
        throw DimensionMismatch("forcing shape does not match grid and problem");
    if (!prob.forcing) throw std::invalid_argument("problem has no forcing map");

    Splitting split = limiting_split(prob, freq);
    const int kp = split.k_plus;
    if (static_cast<int>(prob.phi_zero.cols()) + kp != size)
        throw DimensionMismatch("boundary subspace incompatible with splitting");

    // constraint rows vanish exactly on the boundary subspace
    Eigen::JacobiSVD<MatC> svd(prob.phi_zero, Eigen::ComputeFullU);
    const MatC constraints = svd.matrixU().rightCols(kp).adjoint();
    const MatC far_rows = split.unstable_left_rows();

    std::vector<MatC> A(N);
    std::vector<VecC> G(N);
    for (int i = 0; i < N; ++i) {
        const Frequency fr = freq;
        A[i] = prob.coeff(grid[i], fr);
        G[i] = prob.forcing(grid[i], fr, f_values.row(i).transpose());
    }

    using Trip = Eigen::Triplet<Complex>;
    std::vector<Trip> trips;
    trips.reserve(static_cast<std::size_t>(N) * size * size * 2);
    VecC rhs = VecC::Zero(static_cast<Eigen::Index>(N) * size);

    int row = 0;
    for (int i = 0; i < kp; ++i, ++row)
        for (int c = 0; c < size; ++c)
            if (constraints(i, c) != Complex(0.0)) trips.emplace_back(row, c, constraints(i, c));
    for (int i = 0; i + 1 < N; ++i) {
        const double h = grid[i + 1] - grid[i];
        for (int rr = 0; rr < size; ++rr, ++row) {
            for (int cc = 0; cc < size; ++cc) {
                Complex left = -0.5 * A[i](rr, cc);
                Complex right = -0.5 * A[i + 1](rr, cc);
                if (rr == cc) {
                    left -= 1.0 / h;
                    right += 1.0 / h;
                }
                trips.emplace_back(row, i * size + cc, left);
                trips.emplace_back(row, (i + 1) * size + cc, right);
            }
            rhs[row] = 0.5 * (G[i][rr] + G[i + 1][rr]);
        }
    }
    for (int i = 0; i < size - kp; ++i, ++row)
        for (int c = 0; c < size; ++c)
            trips.emplace_back(row, (N - 1) * size + c, far_rows(i, c));

    Eigen::SparseMatrix<Complex> M(N * size, N * size);
    M.setFromTriplets(trips.begin(), trips.end());
    Eigen::SparseLU<Eigen::SparseMatrix<Complex>> lu(M);
    if (lu.info() != Eigen::Success)
        throw NumericError("resolvent system factorization failed");
    const VecC Z = lu.solve(rhs);

    ResolventResult res;
    res.solution = MatC(N, prob.n_out);
    for (int i = 0; i < N; ++i)
        res.solution.row(i) = Z.segment(static_cast<Eigen::Index>(i) * size, prob.n_out);

    const Vec w = trapezoid_weights(grid);
    double u2 = 0.0, f2 = 0.0, fx2 = 0.0;
    const MatC fx = grid_derivative(grid, f_values);
    for (int i = 0; i < N; ++i) {
        u2 += w[i] * res.solution.row(i).squaredNorm();
        f2 += w[i] * f_values.row(i).squaredNorm();
        fx2 += w[i] * fx.row(i).squaredNorm();
    }
    res.u_l2 = std::sqrt(u2);
    res.f_h1 = std::sqrt(f2 + fx2 + freq.xi_tilde.squaredNorm() * f2);
    res.ratio = (res.f_h1 > 0) ? res.u_l2 / res.f_h1 : 0.0;
    res.cond_estimate = res.u_l2 / std::max(std::sqrt(f2), 1e-300);
    res.near_singular = res.cond_estimate > 1e8;
    return res;
}

} // namespace blstab
