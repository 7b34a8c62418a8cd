#include "blstab/energy.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <random>

#include "blstab/errors.hpp"

namespace blstab {

namespace {

Mat sym(const Mat& m) { return 0.5 * (m + m.transpose()); }

/// Compensated dissipation S(c) = sym(Bxi) - sum_a c_a sym(E_a G) for the
/// skew basis E_a = e_p e_q^T - e_q e_p^T, p < q.
struct CompensatedForm {
    Mat S0;
    std::vector<Mat> Ma; ///< sym(E_a G), ordered by (p, q)
    std::vector<std::pair<int, int>> idx;

    Mat at(const Vec& c) const {
        Mat S = S0;
        for (size_t a = 0; a < Ma.size(); ++a) S -= c[a] * Ma[a];
        return S;
    }
    double min_eig(const Vec& c) const {
        Eigen::SelfAdjointEigenSolver<Mat> es(at(c), Eigen::EigenvaluesOnly);
        return es.eigenvalues().minCoeff();
    }
};

CompensatedForm build_form(const SystemDefinition& sys, const Vec& W_plus, const Vec& xi) {
    const int n = sys.n;
    if (xi.size() != sys.d) throw DimensionMismatch("xi dimension does not match system");
    Mat Bxi = Mat::Zero(n, n);
    for (int j = 1; j <= sys.d; ++j)
        for (int k = 1; k <= sys.d; ++k)
            Bxi += xi[j - 1] * xi[k - 1] * sys.b_sym(j, k, W_plus);
    Mat Axi = Mat::Zero(n, n);
    for (int k = 1; k <= sys.d; ++k) Axi += xi[k - 1] * sys.a_sym(k, W_plus);
    Mat G = sys.a0(W_plus).llt().solve(Axi);

    CompensatedForm f;
    f.S0 = sym(Bxi);
    for (int p = 0; p < n; ++p)
        for (int q = p + 1; q < n; ++q) {
            Mat E = Mat::Zero(n, n);
            E(p, q) = 1.0;
            E(q, p) = -1.0;
            f.Ma.push_back(sym(E * G));
            f.idx.emplace_back(p, q);
        }
    return f;
}

/// Smoothed minimum eigenvalue and its gradient in the skew parameters.
double softmin_grad(const CompensatedForm& f, const Vec& c, double beta, Vec& grad) {
    Eigen::SelfAdjointEigenSolver<Mat> es(f.at(c));
    const Vec lam = es.eigenvalues();
    const Mat V = es.eigenvectors();
    const double lmin = lam.minCoeff();
    Vec w = (-(lam.array() - lmin) * beta).exp();
    const double Z = w.sum();
    w /= Z;
    grad = Vec::Zero(c.size());
    for (int i = 0; i < lam.size(); ++i) {
        const Vec v = V.col(i);
        for (size_t a = 0; a < f.Ma.size(); ++a)
            grad[a] += w[i] * (-v.dot(f.Ma[a] * v));
    }
    return lmin - std::log(Z) / beta;
}

/// Golden-section maximization of g on [lo, hi].
template <class F>
double golden_max(F&& g, double lo, double hi, int evals = 60) {
    const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
    double a = lo, b = hi;
    double x1 = b - gr * (b - a), x2 = a + gr * (b - a);
    double g1 = g(x1), g2 = g(x2);
    for (int it = 0; it < evals; ++it) {
        if (g1 < g2) {
            a = x1; x1 = x2; g1 = g2;
            x2 = a + gr * (b - a); g2 = g(x2);
        } else {
            b = x2; x2 = x1; g2 = g1;
            x1 = b - gr * (b - a); g1 = g(x1);
        }
    }
    return g1 > g2 ? x1 : x2;
}

} // namespace

double compensated_margin(const SystemDefinition& sys, const Vec& W_plus, const Vec& xi,
                          const Mat& K) {
    CompensatedForm f = build_form(sys, W_plus, xi);
    Mat S = f.S0;
    Mat Axi = Mat::Zero(sys.n, sys.n);
    for (int k = 1; k <= sys.d; ++k) Axi += xi[k - 1] * sys.a_sym(k, W_plus);
    S -= sym(K * sys.a0(W_plus).llt().solve(Axi));
    Eigen::SelfAdjointEigenSolver<Mat> es(S, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff() / xi.squaredNorm();
}

KawashimaMatrix kawashima_K(const SystemDefinition& sys, const Vec& W_plus, const Vec& xi,
                            const CompensatorOptions& opt) {
    if (xi.norm() == 0.0) throw std::invalid_argument("xi must be nonzero");
    CompensatedForm f = build_form(sys, W_plus, xi);
    const int m = static_cast<int>(f.Ma.size());
    const double xi2 = xi.squaredNorm();

    double ma_scale = 0.0;
    for (const Mat& M : f.Ma) ma_scale = std::max(ma_scale, M.norm());
    const double c_scale = (ma_scale > 0) ? (f.S0.norm() + 1.0) / ma_scale : 1.0;

    std::mt19937_64 rng(opt.seed + 0x9e3779b97f4a7c15ULL);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);

    Vec best_c = Vec::Zero(m);
    double best = f.min_eig(best_c);
    for (int r = 0; r < std::max(1, opt.restarts); ++r) {
        Vec c = Vec::Zero(m);
        if (r > 0)
            for (int a = 0; a < m; ++a) c[a] = c_scale * unif(rng);
        // annealed smoothed ascent toward the nonsmooth max-min optimum
        for (double beta : {8.0, 32.0, 128.0, 512.0, 2048.0, 8192.0}) {
            for (int it = 0; it < opt.max_iter / 6; ++it) {
                Vec g;
                const double f0 = softmin_grad(f, c, beta / std::max(1.0, f.S0.norm()), g);
                const double gn = g.norm();
                if (gn < opt.tol) break;
                double step = 0.25 * c_scale / (1.0 + gn);
                bool moved = false;
                for (int h = 0; h < 10; ++h, step *= 0.5) {
                    Vec cand = c + step * g;
                    Vec gt;
                    if (softmin_grad(f, cand, beta / std::max(1.0, f.S0.norm()), gt) > f0) {
                        c = cand;
                        moved = true;
                        break;
                    }
                }
                if (!moved) break;
            }
        }
        // exact polish: cyclic golden search on the true minimum eigenvalue
        double width = 0.25 * c_scale;
        for (int sweep = 0; sweep < 10; ++sweep, width *= 0.35) {
            for (int a = 0; a < m; ++a) {
                const double ca = c[a];
                c[a] = golden_max(
                    [&](double v) {
                        Vec cc = c;
                        cc[a] = v;
                        return f.min_eig(cc);
                    },
                    ca - width, ca + width);
            }
        }
        const double val = f.min_eig(c);
        if (val > best) {
            best = val;
            best_c = c;
        }
    }

    KawashimaMatrix out;
    out.xi = xi;
    out.K = Mat::Zero(sys.n, sys.n);
    for (int a = 0; a < m; ++a) {
        auto [p, q] = f.idx[a];
        out.K(p, q) += best_c[a];
        out.K(q, p) -= best_c[a];
    }
    out.theta2 = best / xi2;
    if (out.theta2 <= 1e-12 * (1.0 + f.S0.norm()))
        throw Infeasible("no skew compensator restores dissipation at this direction",
                         out.theta2);
    return out;
}

// ---------------------------------------------------------------------------
// Layer weight

namespace {

/// Eigenvalues of sign * sym(A1_11) along the layer; positive iff the
/// noncharacteristic sign convention of the case holds at that node.
double a111_signed_min(const SystemDefinition& sys, const Vec& W, int sign) {
    const int h = sys.hyp();
    Mat block = sys.a_sym(1, W).topLeftCorner(h, h);
    Eigen::SelfAdjointEigenSolver<Mat> es(static_cast<double>(sign) * sym(block),
                                          Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

} // namespace

WeightProfile weight_alpha(const SystemDefinition& sys, const Profile& prof,
                           double c_star, const std::string& boundary_case) {
    if (c_star <= 0) throw std::invalid_argument("c_star must be positive");
    int sign;
    if (boundary_case == "outflow") sign = -1;
    else if (boundary_case == "inflow") sign = 1;
    else throw std::invalid_argument("boundary_case must be inflow or outflow");

    const int N = prof.n_nodes();
    WeightProfile w;
    w.grid = prof.grid;
    w.c_star = c_star;
    w.wbar_x1 = Vec::Zero(N);
    for (int i = 0; i < N; ++i) {
        const Vec U = prof.values.row(i);
        w.wbar_x1[i] = (sys.w_jacobian(U) * prof.derivative.row(i).transpose()).norm();
    }

    if (sys.hyp() == 0) {
        w.sign_a111 = 0;
        w.theta1 = 0.0;
        w.alpha = Vec::Ones(N);
        w.omega = Vec::Zero(N);
        return w;
    }

    w.sign_a111 = sign;
    w.theta1 = std::numeric_limits<double>::infinity();
    for (int i = 0; i < N; ++i) {
        const Vec W = sys.to_w(prof.values.row(i));
        w.theta1 = std::min(w.theta1, a111_signed_min(sys, W, sign));
    }
    if (!(w.theta1 > 0))
        throw NumericError("A1_11 is not uniformly definite with the case sign along the layer");

    // alpha = exp(-sign c* int_0^x |Wbar_x1|), cumulative trapezoid
    w.alpha = Vec::Zero(N);
    w.omega = c_star * w.theta1 * w.wbar_x1;
    double acc = 0.0;
    w.alpha[0] = 1.0;
    for (int i = 1; i < N; ++i) {
        acc += 0.5 * (w.wbar_x1[i - 1] + w.wbar_x1[i]) * (w.grid[i] - w.grid[i - 1]);
        w.alpha[i] = std::exp(-sign * c_star * acc);
    }
    return w;
}

double WeightProfile::eval_alpha(double x) const {
    const int N = static_cast<int>(grid.size());
    if (x <= grid[0]) return alpha[0];
    if (x >= grid[N - 1]) return alpha[N - 1];
    int i = static_cast<int>(std::upper_bound(grid.data(), grid.data() + N, x) - grid.data()) - 1;
    const double t = (x - grid[i]) / (grid[i + 1] - grid[i]);
    return (1.0 - t) * alpha[i] + t * alpha[i + 1];
}

double weight_defect(const SystemDefinition& sys, const Profile& prof,
                     const WeightProfile& w) {
    if (sys.hyp() == 0) return 0.0;
    const int h = sys.hyp();
    double worst = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < prof.n_nodes(); ++i) {
        const Vec W = sys.to_w(prof.values.row(i));
        const double ratio = -w.sign_a111 * w.c_star * w.wbar_x1[i]; // alpha'/alpha
        Mat M = ratio * sym(Mat(sys.a_sym(1, W).topLeftCorner(h, h)))
                + w.omega[i] * Mat::Identity(h, h);
        Eigen::SelfAdjointEigenSolver<Mat> es(M, Eigen::EigenvaluesOnly);
        worst = std::max(worst, es.eigenvalues().maxCoeff());
    }
    return worst;
}

// ---------------------------------------------------------------------------
// Energy functional

EnergyDefaults energy_defaults(const SystemDefinition& sys, const Profile& prof,
                               const KawashimaMatrix& comp) {
    EnergyDefaults d;
    d.a0_min = std::numeric_limits<double>::infinity();
    d.a0_max = 0.0;
    for (int i = 0; i < prof.n_nodes(); ++i) {
        const Vec W = sys.to_w(prof.values.row(i));
        Eigen::SelfAdjointEigenSolver<Mat> es(sym(sys.a0(W)), Eigen::EigenvaluesOnly);
        d.a0_min = std::min(d.a0_min, es.eigenvalues().minCoeff());
        d.a0_max = std::max(d.a0_max, es.eigenvalues().maxCoeff());
    }
    const double knorm = comp.K.operatorNorm();
    d.eps = std::min(comp.theta2, 1.0) * d.a0_min / (4.0 * std::max(knorm, 1e-30));
    d.M = 10.0 * (d.a0_max / d.a0_min) * std::max(1.0, knorm);
    return d;
}

double energy_functional(const SystemDefinition& sys, const Profile& prof,
                         const WeightProfile& weight, const Mat& K1, const MatC& W,
                         int s, double M, double eps, double* hs_norm2) {
    const int N = prof.n_nodes();
    if (W.rows() != N || W.cols() != sys.n)
        throw DimensionMismatch("field shape does not match profile grid and system");
    if (s < 0) throw std::invalid_argument("s must be >= 0");

    const Vec wt = trapezoid_weights(prof.grid);
    std::vector<Mat> A0(N);
    for (int i = 0; i < N; ++i) A0[i] = sys.a0(sys.to_w(prof.values.row(i)));

    auto quad = [&](const MatC& f, const MatC& g, bool with_a0) {
        double acc = 0.0;
        for (int i = 0; i < N; ++i) {
            const VecC fi = f.row(i), gi = g.row(i);
            const Complex v = with_a0 ? gi.dot(A0[i] * fi) : gi.dot(K1 * fi);
            acc += wt[i] * weight.alpha[i] * v.real();
        }
        return acc;
    };

    MatC prev = W;
    double E = quad(W, W, true);
    double hs2 = 0.0;
    for (int i = 0; i < N; ++i) hs2 += wt[i] * W.row(i).squaredNorm();
    for (int k = 1; k <= s; ++k) {
        MatC dk = grid_derivative(prof.grid, prev);
        E = quad(dk, dk, true) + M * E + eps * quad(dk, prev, false);
        for (int i = 0; i < N; ++i) hs2 += wt[i] * dk.row(i).squaredNorm();
        prev = dk;
    }
    if (hs_norm2) *hs_norm2 = hs2;
    return E;
}

// ---------------------------------------------------------------------------
// Boundary measure

namespace {

/// Order-m derivative of a time series at every sample, 4th-order-accurate
/// windows (centered where possible, one-sided at the ends).
std::vector<MatC> series_derivative(const Vec& t, const std::vector<MatC>& h, int m) {
    const int N = static_cast<int>(t.size());
    if (m == 0) return h;
    const int L = std::min(N, m + 5);
    if (L < m + 2)
        throw InsufficientSampling("time series too short for derivative order " +
                                   std::to_string(m));
    std::vector<MatC> out(N);
    for (int j = 0; j < N; ++j) {
        int lo = std::clamp(j - L / 2, 0, N - L);
        Vec xs = t.segment(lo, L);
        Vec wts = fd_weights(t[j], xs, m);
        MatC acc = MatC::Zero(h[0].rows(), h[0].cols());
        for (int k = 0; k < L; ++k) acc += wts[k] * h[lo + k];
        out[j] = acc;
    }
    return out;
}

/// Order-m spatial derivative with 4th-order windows per node.
MatC space_derivative(const Vec& x, const MatC& v, int m) {
    const int N = static_cast<int>(x.size());
    const int L = std::min(N, m + 5);
    if (L < m + 2)
        throw InsufficientSampling("transverse grid too short for derivative order " +
                                   std::to_string(m));
    MatC out(N, v.cols());
    for (int j = 0; j < N; ++j) {
        int lo = std::clamp(j - L / 2, 0, N - L);
        Vec wts = fd_weights(x[j], x.segment(lo, L), m);
        out.row(j).setZero();
        for (int k = 0; k < L; ++k) out.row(j) += wts[k] * v.row(lo + k);
    }
    return out;
}

double l2x(const Vec& wt, const MatC& v, int col_lo, int col_n) {
    double acc = 0.0;
    for (int i = 0; i < v.rows(); ++i)
        acc += wt[i] * v.row(i).segment(col_lo, col_n).squaredNorm();
    return std::sqrt(acc);
}

} // namespace

BoundaryMeasure boundary_measure(const Vec& t_grid, const Vec& x_grid,
                                 const std::vector<MatC>& h, int n_hyp,
                                 const std::string& boundary_case, int s) {
    const int NT = static_cast<int>(t_grid.size());
    if (static_cast<int>(h.size()) != NT)
        throw DimensionMismatch("trace series length does not match time grid");
    if (NT == 0) throw std::invalid_argument("empty time grid");
    const int NX = static_cast<int>(h[0].rows());
    const int nc = static_cast<int>(h[0].cols());
    if (x_grid.size() != NX) throw DimensionMismatch("trace rows do not match x grid");
    const bool inflow = boundary_case == "inflow";
    if (!inflow && boundary_case != "outflow")
        throw std::invalid_argument("boundary_case must be inflow or outflow");
    if (inflow && (n_hyp < 0 || n_hyp > nc))
        throw std::invalid_argument("hyperbolic split out of range");

    const int i_par = (s + 1) / 2;
    const int i_max = inflow ? std::max(i_par, s) : i_par;
    if (NT < i_max + 5)
        throw InsufficientSampling("need at least " + std::to_string(i_max + 5) +
                                   " time samples for s = " + std::to_string(s));

    const Vec wt = (NX > 1) ? trapezoid_weights(x_grid) : Vec::Ones(1);
    std::vector<std::vector<MatC>> dt(i_max + 1);
    for (int i = 0; i <= i_max; ++i) dt[i] = series_derivative(t_grid, h, i);

    BoundaryMeasure bm;
    bm.t = t_grid;
    bm.B = Vec::Zero(NT);
    for (int j = 0; j < NT; ++j) {
        double hs2 = 0.0;
        for (int i = 0; i <= s; ++i) {
            if (i > 0 && NX == 1) break;
            const MatC di = (i == 0) ? h[j] : space_derivative(x_grid, h[j], i);
            const double nrm = l2x(wt, di, 0, nc);
            hs2 += nrm * nrm;
        }
        double B = std::sqrt(hs2);
        if (inflow) {
            for (int i = 0; i <= i_par; ++i) B += l2x(wt, dt[i][j], n_hyp, nc - n_hyp);
            for (int i = 0; i <= s; ++i) B += l2x(wt, dt[i][j], 0, n_hyp);
        } else {
            for (int i = 0; i <= i_par; ++i) B += l2x(wt, dt[i][j], 0, nc);
        }
        bm.B[j] = B;
    }
    return bm;
}

// ---------------------------------------------------------------------------
// Gronwall audit

GronwallReport gronwall_audit(const Vec& t, const Vec& E, const Vec& l2sq, const Vec& Bh,
                              const GronwallOptions& opt) {
    const int N = static_cast<int>(t.size());
    if (E.size() != N || l2sq.size() != N)
        throw DimensionMismatch("trajectory series lengths disagree");
    if (Bh.size() != 0 && Bh.size() != N)
        throw DimensionMismatch("boundary measure length disagrees");
    if (N < 2) throw InsufficientSampling("need at least two samples");

    Vec g(N);
    for (int i = 0; i < N; ++i)
        g[i] = l2sq[i] + (Bh.size() ? Bh[i] * Bh[i] : 0.0);

    GronwallReport rep;
    rep.c_cap = opt.c_cap;
    rep.theta_grid = Vec(opt.n_theta);
    rep.c_min = Vec(opt.n_theta);
    const double lr = std::log(opt.theta_max / opt.theta_min) / (opt.n_theta - 1);
    const double floor_abs = opt.floor_rel * (E[0] + g.maxCoeff());

    rep.c_best = std::numeric_limits<double>::infinity();
    for (int k = 0; k < opt.n_theta; ++k) {
        const double th = opt.theta_min * std::exp(lr * k);
        rep.theta_grid[k] = th;
        double I = 0.0, C = 0.0;
        for (int i = 0; i < N; ++i) {
            if (i > 0) {
                const double dt = t[i] - t[i - 1];
                I = std::exp(-th * dt) * I +
                    0.5 * dt * (std::exp(-th * dt) * g[i - 1] + g[i]);
            }
            const double denom = std::exp(-th * t[i]) * E[0] + I + floor_abs;
            if (E[i] <= 0) continue;
            C = (denom > 0) ? std::max(C, E[i] / denom)
                            : std::numeric_limits<double>::infinity();
        }
        rep.c_min[k] = C;
        if (C < rep.c_best) {
            rep.c_best = C;
            rep.theta_best = th;
        }
    }
    rep.feasible = rep.c_best <= opt.c_cap;
    return rep;
}

void require_feasible(const GronwallReport& rep) {
    if (!rep.feasible)
        throw NoFeasiblePair("no (C, theta) with C <= " + std::to_string(rep.c_cap) +
                             " satisfies the energy inequality (best C = " +
                             std::to_string(rep.c_best) + ")");
}

nlohmann::json GronwallReport::to_json() const {
    nlohmann::json j;
    j["theta_grid"] = std::vector<double>(theta_grid.data(), theta_grid.data() + theta_grid.size());
    j["c_min"] = std::vector<double>(c_min.data(), c_min.data() + c_min.size());
    j["theta_best"] = theta_best;
    j["c_best"] = c_best;
    j["feasible"] = feasible;
    j["c_cap"] = c_cap;
    return j;
}

} // namespace blstab
