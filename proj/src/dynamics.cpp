#include "blstab/dynamics.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <algorithm>
#include <cmath>
#include <sstream>

#include "blstab/errors.hpp"
#include "blstab/evans.hpp"

namespace blstab {

namespace {

using SpMatC = Eigen::SparseMatrix<Complex>;
using SpMat = Eigen::SparseMatrix<double>;
using TripC = Eigen::Triplet<Complex>;
using Trip = Eigen::Triplet<double>;

/// Row classification of the discretized operator.
enum class RowKind : char { Dynamic, Constraint, Far };

/// Discrete linearization about the profile for one transverse mode:
/// dynamic rows carry L, node-0 rows carry the case constraints (plus
/// one-sided transport rows for the outgoing hyperbolic components), the
/// last node carries quadratic extrapolation.
struct LinearOperator {
    int N = 0, n = 0, size = 0, n_tr = 0;
    SpMatC L; ///< dynamic rows only; constraint/far rows are zero here
    std::vector<RowKind> kind;
    MatC C;      ///< n_tr x n constraint block at node 0
    Vec far_w;   ///< quadratic extrapolation weights on the last 3 interior nodes
    Vec quad_w;  ///< trapezoid weights of the grid

    VecC apply(const VecC& z) const { return L * z; }
};

LinearOperator build_linear_operator(const SystemDefinition& sys, const Profile& prof,
                                     const Vec& xi, const std::string& boundary_case) {
    const bool inflow = boundary_case == "inflow";
    if (!inflow && boundary_case != "outflow")
        throw std::invalid_argument("boundary_case must be inflow or outflow");
    if (xi.size() != sys.d - 1)
        throw DimensionMismatch("transverse frequency has wrong dimension");

    const int N = prof.n_nodes(), n = sys.n, r = sys.r, hyp = sys.hyp();
    const Vec& x = prof.grid;
    LinearOperator op;
    op.N = N;
    op.n = n;
    op.size = N * n;
    op.quad_w = trapezoid_weights(x);
    op.kind.assign(op.size, RowKind::Dynamic);

    // per-node coefficients
    std::vector<MatC> a1eff(N), z0(N), bj1(N);
    for (int i = 0; i < N; ++i) {
        const Vec U = prof.values.row(i), Up = prof.derivative.row(i);
        MatC A1 = convected_jacobian(sys, U, Up, 1).cast<Complex>();
        MatC Z = MatC::Zero(n, n);
        MatC B1 = MatC::Zero(n, n);
        for (int j = 2; j <= sys.d; ++j) {
            const double xj = xi[j - 2];
            A1 -= Complex(0, xj) * sys.viscosity(1, j, U).cast<Complex>();
            Z -= Complex(0, xj) * convected_jacobian(sys, U, Up, j).cast<Complex>();
            B1 += Complex(0, xj) * sys.viscosity(j, 1, U).cast<Complex>();
            for (int k = 2; k <= sys.d; ++k)
                Z -= xj * xi[k - 2] * sys.viscosity(j, k, U).cast<Complex>();
        }
        a1eff[i] = A1;
        z0[i] = Z;
        bj1[i] = B1;
    }
    // interface viscosity on the profile
    std::vector<Mat> b_half(N - 1);
    for (int i = 0; i + 1 < N; ++i)
        b_half[i] = sys.viscosity(1, 1, prof.eval(0.5 * (x[i] + x[i + 1])));

    std::vector<TripC> trips;
    auto add_block = [&](int row_node, int row_lo, int n_rows, int col_node,
                         const MatC& M, Complex scale) {
        for (int a = 0; a < n_rows; ++a)
            for (int b = 0; b < n; ++b) {
                const Complex v = scale * M(row_lo + a, b);
                if (v != 0.0)
                    trips.emplace_back(row_node * n + row_lo + a, col_node * n + b, v);
            }
    };

    for (int i = 1; i + 1 < N; ++i) {
        const double hbar = 0.5 * (x[i + 1] - x[i - 1]);
        Vec w1 = fd_weights(x[i], x.segment(i - 1, 3), 1);
        // -(A1eff U)_x + Bj1 U_x + Z0 U
        for (int t = 0; t < 3; ++t) {
            add_block(i, 0, n, i - 1 + t, a1eff[i - 1 + t], -w1[t]);
            add_block(i, 0, n, i - 1 + t, bj1[i], w1[t]);
        }
        add_block(i, 0, n, i, z0[i], 1.0);
        // (B11 U_x)_x in flux form
        const double dr = x[i + 1] - x[i], dl = x[i] - x[i - 1];
        MatC Br = b_half[i].cast<Complex>() / (hbar * dr);
        MatC Bl = b_half[i - 1].cast<Complex>() / (hbar * dl);
        add_block(i, 0, n, i + 1, Br, 1.0);
        add_block(i, 0, n, i, Br, -1.0);
        add_block(i, 0, n, i, Bl, -1.0);
        add_block(i, 0, n, i - 1, Bl, 1.0);
    }

    // node 0: constraints in W coordinates; outgoing hyperbolic transport rows
    const Vec U0 = prof.values.row(0);
    op.n_tr = inflow ? n : r;
    const Mat WJ = sys.w_jacobian(U0);
    op.C = (inflow ? Mat(WJ) : Mat(WJ.bottomRows(r))).cast<Complex>();
    const int c_lo = inflow ? 0 : hyp;
    for (int a = 0; a < op.n_tr; ++a) {
        op.kind[c_lo + a] = RowKind::Constraint;
    }
    if (!inflow && hyp > 0) {
        Vec w1 = fd_weights(x[0], x.segment(0, 3), 1);
        for (int t = 0; t < 3; ++t) add_block(0, 0, hyp, t, a1eff[t], -w1[t]);
        add_block(0, 0, hyp, 0, z0[0], 1.0);
    }

    // far end: quadratic extrapolation through the last three interior nodes
    op.far_w = fd_weights(x[N - 1], x.segment(N - 4, 3), 0);
    for (int c = 0; c < n; ++c) op.kind[(N - 1) * n + c] = RowKind::Far;

    op.L.resize(op.size, op.size);
    op.L.setFromTriplets(trips.begin(), trips.end());
    return op;
}

struct StepScheme {
    Eigen::SparseLU<SpMatC> lu;
    SpMatC L;
    const LinearOperator* op = nullptr;
    double dt = 0.0;

    VecC rhs_dynamic(const VecC& u, const VecC& fsum) const {
        VecC z = u + (0.5 * dt) * (op->L * u) + (0.5 * dt) * fsum;
        return z;
    }
};

/// Crank-Nicolson system matrix with constraint and extrapolation rows.
void build_step(StepScheme& s, const LinearOperator& op, double dt) {
    s.op = &op;
    s.dt = dt;
    std::vector<TripC> trips;
    for (int k = 0; k < op.L.outerSize(); ++k)
        for (SpMatC::InnerIterator it(op.L, k); it; ++it)
            if (op.kind[it.row()] == RowKind::Dynamic)
                trips.emplace_back(it.row(), it.col(), -0.5 * dt * it.value());
    const int n = op.n, N = op.N;
    for (int row = 0; row < op.size; ++row)
        if (op.kind[row] == RowKind::Dynamic) trips.emplace_back(row, row, 1.0);
    // constraints at node 0
    int a = 0;
    for (int row = 0; row < n; ++row)
        if (op.kind[row] == RowKind::Constraint) {
            for (int b = 0; b < n; ++b)
                if (op.C(a, b) != 0.0) trips.emplace_back(row, b, op.C(a, b));
            ++a;
        }
    for (int c = 0; c < n; ++c) {
        const int row = (N - 1) * n + c;
        trips.emplace_back(row, row, 1.0);
        for (int t = 0; t < 3; ++t)
            trips.emplace_back(row, (N - 4 + t) * n + c, -op.far_w[t]);
    }
    SpMatC A(op.size, op.size);
    A.setFromTriplets(trips.begin(), trips.end());
    A.makeCompressed();
    s.L = op.L;
    s.lu.analyzePattern(A);
    s.lu.factorize(A);
    if (s.lu.info() != Eigen::Success)
        throw NumericError("time-step system factorization failed");
}

double grid_l2(const Vec& w, const VecC& z, int n) {
    double acc = 0.0;
    for (int i = 0; i < w.size(); ++i) acc += w[i] * z.segment(i * n, n).squaredNorm();
    return std::sqrt(acc);
}

/// Record times: n_records samples on a uniform step grid; steps is rounded
/// so the record spacing is an integer number of steps.
struct StepPlan {
    int steps = 0;
    int per_record = 0;
    double dt = 0.0;
};

StepPlan plan_steps(double T, double dt_req, int n_records) {
    if (T <= 0) throw std::invalid_argument("T must be positive");
    StepPlan p;
    const int gaps = std::max(1, n_records - 1);
    double dt = (dt_req > 0) ? dt_req : T / 2000.0;
    p.per_record = std::max(1, static_cast<int>(std::ceil(T / (gaps * dt) - 1e-12)));
    p.steps = gaps * p.per_record;
    p.dt = T / p.steps;
    return p;
}

} // namespace

// ---------------------------------------------------------------------------
// Linearized evolution

TrajectoryRecord linearized_evolve(const SystemDefinition& sys, const Profile& prof,
                                   const Vec& xi_tilde, const MatC& U0,
                                   const std::function<VecC(double)>& h_of_t,
                                   const std::function<MatC(double)>& f_of_t, double T,
                                   const std::string& boundary_case,
                                   const EvolveOptions& opt) {
    const int N = prof.n_nodes(), n = sys.n;
    if (U0.rows() != N || U0.cols() != n)
        throw DimensionMismatch("initial data shape does not match grid and system");

    LinearOperator op = build_linear_operator(sys, prof, xi_tilde, boundary_case);
    auto trace = [&](double t) -> VecC {
        if (!h_of_t) return VecC::Zero(op.n_tr);
        VecC h = h_of_t(t);
        if (h.size() != op.n_tr) throw DimensionMismatch("trace size does not match case");
        return h;
    };
    auto forcing = [&](double t) -> VecC {
        if (!f_of_t) return VecC::Zero(op.size);
        MatC f = f_of_t(t);
        if (f.rows() != N || f.cols() != n) throw DimensionMismatch("forcing shape mismatch");
        VecC z(op.size);
        for (int i = 0; i < N; ++i) z.segment(i * n, n) = f.row(i);
        return z;
    };

    {
        const VecC defect = op.C * U0.row(0).transpose() - trace(0.0);
        if (defect.norm() > opt.compat_tol * (1.0 + trace(0.0).norm()))
            throw CompatibilityViolation("initial data does not match the trace at t=0");
    }

    StepPlan plan = plan_steps(T, opt.dt, opt.n_records);
    StepScheme scheme;
    build_step(scheme, op, plan.dt);

    VecC u(op.size);
    for (int i = 0; i < N; ++i) u.segment(i * n, n) = U0.row(i);

    TrajectoryRecord rec;
    const int R = plan.steps / plan.per_record + 1;
    rec.t = Vec(R);
    rec.l2 = Vec(R);
    rec.linf = Vec(R);
    rec.conserved = Mat(R, n);
    const bool with_energy = opt.energy.weight != nullptr;
    if (with_energy) rec.es = Vec(R);
    if (opt.store_snapshots) rec.snapshots.resize(R);

    // blow-up reference: size of the problem data, not just the initial state
    double data_scale = 1e-30;
    int out = 0;
    auto record = [&](double t) {
        rec.t[out] = t;
        rec.l2[out] = grid_l2(op.quad_w, u, n);
        rec.linf[out] = u.cwiseAbs().maxCoeff();
        for (int c = 0; c < n; ++c) {
            Complex tot = 0.0;
            for (int i = 0; i < N; ++i) tot += op.quad_w[i] * u[i * n + c];
            rec.conserved(out, c) = std::abs(tot);
        }
        if (with_energy) {
            MatC W(N, n);
            for (int i = 0; i < N; ++i) W.row(i) = u.segment(i * n, n);
            rec.es[out] = energy_functional(sys, prof, *opt.energy.weight, opt.energy.K1,
                                            W, opt.energy.s, opt.energy.M, opt.energy.eps);
        }
        if (opt.store_snapshots) {
            MatC W(N, n);
            for (int i = 0; i < N; ++i) W.row(i) = u.segment(i * n, n);
            rec.snapshots[out] = W;
        }
        if (out == 0) data_scale = std::max(data_scale, rec.linf[out]);
        else if (rec.linf[out] > opt.blowup_factor * data_scale)
            throw BlowUp("evolution norm exceeded the blow-up guard at t = " +
                         std::to_string(t), rec.linf[out]);
        ++out;
    };

    record(0.0);
    VecC f_now = forcing(0.0);
    if (f_of_t) data_scale = std::max(data_scale, T * f_now.cwiseAbs().maxCoeff());
    for (int m = 0; m < plan.steps; ++m) {
        const double t1 = (m + 1) * plan.dt;
        VecC f_next = forcing(t1);
        if (f_of_t) data_scale = std::max(data_scale, T * f_next.cwiseAbs().maxCoeff());
        VecC rhs = scheme.rhs_dynamic(u, f_now + f_next);
        const VecC h1 = trace(t1);
        if (h_of_t && h1.size())
            data_scale = std::max(data_scale, h1.cwiseAbs().maxCoeff());
        int a = 0;
        for (int row = 0; row < n; ++row)
            if (op.kind[row] == RowKind::Constraint) rhs[row] = h1[a++];
        for (int c = 0; c < n; ++c) rhs[(N - 1) * n + c] = 0.0;
        u = scheme.lu.solve(rhs);
        f_now.swap(f_next);
        if ((m + 1) % plan.per_record == 0) record(t1);
    }
    return rec;
}

// ---------------------------------------------------------------------------
// Nonlinear 1D evolution

namespace {

/// Gershgorin bound on |eigs(dF^1)|.
double speed_bound(const SystemDefinition& sys, const Vec& U) {
    return sys.flux_jacobian(1, U).cwiseAbs().rowwise().sum().maxCoeff();
}

struct NonlinearWorkspace {
    const SystemDefinition* sys;
    const Profile* prof;
    Vec x;
    std::vector<Vec> ub_half, ubp_half; ///< profile state/slope at interfaces
    Vec hbar;                           ///< dual cell widths (interior nodes)

    /// Explicit flux-difference right side; fills the interface fluxes
    /// H (hyperbolic, Rusanov on reconstructed states) and Gexp (profile-slope
    /// part of the viscous flux). Node 0 hyperbolic rows use one-sided
    /// transport; constrained and far rows are left zero.
    Mat rhs(const Mat& U, Mat& H_if, Mat& Gexp_if, double* max_speed) const {
        const int N = static_cast<int>(x.size()), n = sys->n, hyp = sys->hyp();
        Mat slope(N, n);
        slope.row(0) = (U.row(1) - U.row(0)) / (x[1] - x[0]);
        slope.row(N - 1) = (U.row(N - 1) - U.row(N - 2)) / (x[N - 1] - x[N - 2]);
        for (int i = 1; i + 1 < N; ++i)
            slope.row(i) = (U.row(i + 1) - U.row(i - 1)) / (x[i + 1] - x[i - 1]);

        double amax = 0.0;
        for (int i = 0; i + 1 < N; ++i) {
            const double xh = 0.5 * (x[i] + x[i + 1]);
            const Vec UL = U.row(i).transpose() + (xh - x[i]) * slope.row(i).transpose();
            const Vec UR =
                U.row(i + 1).transpose() + (xh - x[i + 1]) * slope.row(i + 1).transpose();
            const Vec& Ub = ub_half[i];
            const Vec FL = sys->flux(1, Ub + UL) - sys->flux(1, Ub);
            const Vec FR = sys->flux(1, Ub + UR) - sys->flux(1, Ub);
            const double a =
                std::max(speed_bound(*sys, Ub + UL), speed_bound(*sys, Ub + UR));
            amax = std::max(amax, a);
            H_if.row(i) = 0.5 * (FL + FR) - 0.5 * a * (UR - UL);
            const Vec Um = Ub + 0.5 * (UL + UR);
            Gexp_if.row(i) =
                ((sys->viscosity(1, 1, Um) - sys->viscosity(1, 1, Ub)) * ubp_half[i]);
        }
        if (max_speed) *max_speed = amax;

        Mat out = Mat::Zero(N, n);
        for (int i = 1; i + 1 < N; ++i)
            out.row(i) = (-(H_if.row(i) - H_if.row(i - 1)) +
                          (Gexp_if.row(i) - Gexp_if.row(i - 1))) /
                         hbar[i - 1];
        if (hyp > 0) {
            // one-sided transport for the outgoing components at the wall
            Vec w1 = fd_weights(x[0], x.segment(0, 3), 1);
            for (int t = 0; t < 3; ++t) {
                const Vec Ut = prof->values.row(t).transpose() + U.row(t).transpose();
                const Vec g = sys->flux(1, Ut) - sys->flux(1, Vec(prof->values.row(t)));
                out.row(0).head(hyp) -= w1[t] * g.head(hyp);
            }
        }
        return out;
    }

    /// Implicit viscous operator with coefficients at Ubase; interface
    /// coefficient matrices are returned for flux accounting.
    SpMat viscous_matrix(const Mat& Ubase, std::vector<Mat>& B_if) const {
        const int N = static_cast<int>(x.size()), n = sys->n;
        std::vector<Trip> trips;
        B_if.resize(N - 1);
        for (int i = 0; i + 1 < N; ++i) {
            const Vec Um =
                ub_half[i] + 0.5 * (Ubase.row(i) + Ubase.row(i + 1)).transpose();
            B_if[i] = sys->viscosity(1, 1, Um) / (x[i + 1] - x[i]);
        }
        for (int i = 1; i + 1 < N; ++i) {
            const double hb = hbar[i - 1];
            for (int a = 0; a < n; ++a)
                for (int b = 0; b < n; ++b) {
                    // zeros kept so the pattern is state-independent
                    const double vr = B_if[i](a, b) / hb, vl = B_if[i - 1](a, b) / hb;
                    trips.emplace_back(i * n + a, (i + 1) * n + b, vr);
                    trips.emplace_back(i * n + a, i * n + b, -vr - vl);
                    trips.emplace_back(i * n + a, (i - 1) * n + b, vl);
                }
        }
        SpMat V(N * n, N * n);
        V.setFromTriplets(trips.begin(), trips.end());
        return V;
    }
};

/// Solve the parabolic trace condition W_II(U0bar + u) = W_II(U0bar) + h for
/// the parabolic components of u, hyperbolic components held fixed.
Vec solve_trace(const SystemDefinition& sys, const Vec& U0bar, const Vec& u_hyp,
                const Vec& h) {
    const int n = sys.n, r = sys.r, hyp = sys.hyp();
    const Vec w0 = sys.to_w(U0bar);
    Vec p = Vec::Zero(r);
    for (int it = 0; it < 30; ++it) {
        Vec u(n);
        u.head(hyp) = u_hyp;
        u.tail(r) = p;
        const Vec F = sys.to_w(U0bar + u).tail(r) - w0.tail(r) - h;
        if (F.norm() < 1e-13 * (1.0 + h.norm())) break;
        const Mat J = sys.w_jacobian(U0bar + u).bottomRightCorner(r, r);
        p -= J.partialPivLu().solve(F);
    }
    return p;
}

} // namespace

TrajectoryRecord nonlinear_evolve_1d(const SystemDefinition& sys, const Profile& prof,
                                     const Mat& U0, const std::function<Vec(double)>& h_of_t,
                                     double T, const std::string& boundary_case,
                                     const EvolveOptions& opt) {
    const int N = prof.n_nodes(), n = sys.n, r = sys.r, hyp = sys.hyp();
    if (U0.rows() != N || U0.cols() != n)
        throw DimensionMismatch("initial data shape does not match grid and system");
    const bool inflow = boundary_case == "inflow";
    if (!inflow && boundary_case != "outflow")
        throw std::invalid_argument("boundary_case must be inflow or outflow");

    NonlinearWorkspace ws;
    ws.sys = &sys;
    ws.prof = &prof;
    ws.x = prof.grid;
    ws.hbar = Vec(N - 2);
    for (int i = 1; i + 1 < N; ++i) ws.hbar[i - 1] = 0.5 * (ws.x[i + 1] - ws.x[i - 1]);
    ws.ub_half.resize(N - 1);
    ws.ubp_half.resize(N - 1);
    for (int i = 0; i + 1 < N; ++i) {
        const double xh = 0.5 * (ws.x[i] + ws.x[i + 1]);
        ws.ub_half[i] = prof.eval(xh);
        ws.ubp_half[i] = prof.eval_derivative(xh);
    }

    auto trace = [&](double t) -> Vec {
        if (!h_of_t) return Vec::Zero(inflow ? n : r);
        Vec h = h_of_t(t);
        if (h.size() != (inflow ? n : r))
            throw DimensionMismatch("trace size does not match case");
        return h;
    };

    const Vec U0bar = prof.values.row(0);
    auto apply_wall = [&](Mat& U, double t) {
        const Vec h = trace(t);
        if (inflow) {
            const Vec w0 = sys.to_w(U0bar);
            U.row(0) = (sys.from_w(w0 + h) - U0bar).transpose();
        } else {
            U.row(0).tail(r) =
                solve_trace(sys, U0bar, U.row(0).head(hyp).transpose(), h).transpose();
        }
    };
    // far closure copies the last interior value; quadratic extrapolation
    // overshoots and couples back through the interface flux once outgoing
    // waves reach the boundary, so only the zeroth-order row is stable here
    auto apply_far = [&](Mat& U) { U.row(N - 1) = U.row(N - 2); };

    // step size: transport CFL with safety 0.5, parabolic part implicit
    Mat Uc = U0;
    Mat Hs(N - 1, n), Gs(N - 1, n);
    double a_now = 0;
    ws.rhs(Uc, Hs, Gs, &a_now);
    const double dt_cfl = 0.5 * ws.hbar.minCoeff() / std::max(a_now, 1e-12);
    if (opt.dt > 0 && opt.dt > 1.5 * dt_cfl)
        throw StepRejected("requested dt exceeds the transport stability bound");
    StepPlan plan = plan_steps(T, opt.dt > 0 ? opt.dt : dt_cfl, opt.n_records);

    const double gamma = 1.0 - 1.0 / std::sqrt(2.0);
    const int size = N * n;
    auto flatten = [&](const Mat& U) {
        Vec z(size);
        for (int i = 0; i < N; ++i) z.segment(i * n, n) = U.row(i);
        return z;
    };
    auto unflatten = [&](const Vec& z) {
        Mat U(N, n);
        for (int i = 0; i < N; ++i) U.row(i) = z.segment(i * n, n);
        return U;
    };

    /// stage solve (I - gamma dt V)u = rhs with wall/far row replacement;
    /// the sparsity pattern is fixed, so it is analyzed once
    Eigen::SparseLU<SpMat> stage_lu;
    bool stage_analyzed = false;
    auto stage_solve = [&](const SpMat& V, const Mat& rhs_field, double t_stage) {
        std::vector<Trip> trips;
        for (int k = 0; k < V.outerSize(); ++k)
            for (SpMat::InnerIterator it(V, k); it; ++it) {
                const int node = static_cast<int>(it.row()) / n;
                if (node == 0 || node == N - 1) continue;
                trips.emplace_back(it.row(), it.col(), -gamma * plan.dt * it.value());
            }
        for (int row = 0; row < size; ++row) trips.emplace_back(row, row, 1.0);
        for (int c = 0; c < n; ++c)
            trips.emplace_back((N - 1) * n + c, (N - 2) * n + c, -1.0);
        SpMat A(size, size);
        A.setFromTriplets(trips.begin(), trips.end());
        // wall rows: hyperbolic kept explicit (identity); parabolic pinned to
        // the trace value computed from the stage hyperbolic state
        Mat rhs = rhs_field;
        Vec u_hyp = rhs.row(0).head(hyp).transpose();
        const Vec h = trace(t_stage);
        Vec p;
        if (inflow) {
            const Vec w0 = sys.to_w(U0bar);
            Vec full = sys.from_w(w0 + h) - U0bar;
            rhs.row(0) = full.transpose();
        } else {
            p = solve_trace(sys, U0bar, u_hyp, h);
            rhs.row(0).tail(r) = p.transpose();
        }
        rhs.row(N - 1).setZero();
        A.makeCompressed();
        if (!stage_analyzed) {
            stage_lu.analyzePattern(A);
            stage_analyzed = true;
        }
        stage_lu.factorize(A);
        if (stage_lu.info() != Eigen::Success)
            throw NumericError("viscous stage factorization failed");
        return unflatten(stage_lu.solve(flatten(rhs)));
    };

    TrajectoryRecord rec;
    const int R = plan.steps / plan.per_record + 1;
    rec.t = Vec(R);
    rec.l2 = Vec(R);
    rec.linf = Vec(R);
    rec.conserved = Mat(R, n);
    if (opt.store_snapshots) rec.snapshots.resize(R);
    const Vec qw = trapezoid_weights(ws.x);

    double data_scale = 1e-30;
    int out = 0;
    auto record = [&](double t) {
        rec.t[out] = t;
        double l2 = 0;
        for (int i = 0; i < N; ++i) l2 += qw[i] * Uc.row(i).squaredNorm();
        rec.l2[out] = std::sqrt(l2);
        rec.linf[out] = Uc.cwiseAbs().maxCoeff();
        for (int c = 0; c < n; ++c) rec.conserved(out, c) = qw.dot(Uc.col(c));
        if (opt.store_snapshots) rec.snapshots[out] = Uc.cast<Complex>();
        if (out == 0) data_scale = std::max(data_scale, rec.linf[out]);
        else if (rec.linf[out] > opt.blowup_factor * data_scale)
            throw BlowUp("nonlinear evolution exceeded the blow-up guard at t = " +
                         std::to_string(t), rec.linf[out]);
        ++out;
    };
    record(0.0);

    Mat H1(N - 1, n), G1(N - 1, n), H2(N - 1, n), G2(N - 1, n);
    std::vector<Mat> B1_if, B2_if;
    for (int m = 0; m < plan.steps; ++m) {
        const double t0 = m * plan.dt;
        if (h_of_t) {
            const Vec ht = trace(t0 + plan.dt);
            if (ht.size()) data_scale = std::max(data_scale, ht.cwiseAbs().maxCoeff());
        }
        double amax = 0;
        // stage 1: pure implicit at gamma dt
        SpMat V1 = ws.viscous_matrix(Uc, B1_if);
        Mat Us1 = stage_solve(V1, Uc, t0 + gamma * plan.dt);
        Mat V1u = Mat::Zero(N, n);
        for (int i = 1; i + 1 < N; ++i) V1u.row(i) = (Us1.row(i) - Uc.row(i)) / (gamma * plan.dt);
        Mat E1 = ws.rhs(Us1, H1, G1, &amax);
        if (plan.dt > 1.5 * 0.5 * ws.hbar.minCoeff() / std::max(amax, 1e-12))
            throw StepRejected("transport speed outgrew the step size at t = " +
                               std::to_string(t0));
        // stage 2
        SpMat V2 = ws.viscous_matrix(Us1, B2_if);
        Mat rhs2 = Uc + plan.dt * E1 + (1.0 - 2.0 * gamma) * plan.dt * V1u;
        Mat Us2 = stage_solve(V2, rhs2, t0 + plan.dt);
        Mat V2u = Mat::Zero(N, n);
        for (int i = 1; i + 1 < N; ++i)
            V2u.row(i) = (Us2.row(i) - rhs2.row(i)) / (gamma * plan.dt);
        Mat E2 = ws.rhs(Us2, H2, G2, nullptr);

        Mat Unew = Uc + 0.5 * plan.dt * (E1 + E2 + V1u + V2u);
        apply_wall(Unew, t0 + plan.dt);
        apply_far(Unew);

        // conservation audit: interior totals vs effective interface fluxes
        {
            Vec before = Vec::Zero(n), after = Vec::Zero(n);
            for (int i = 1; i + 1 < N; ++i) {
                before += ws.hbar[i - 1] * Uc.row(i).transpose();
                after += ws.hbar[i - 1] * Unew.row(i).transpose();
            }
            auto imp_flux = [&](const std::vector<Mat>& B, const Mat& Us, int i) {
                return Vec(B[i] * (Us.row(i + 1) - Us.row(i)).transpose());
            };
            Vec right = 0.5 * plan.dt *
                        ((H1.row(N - 2) + H2.row(N - 2) - G1.row(N - 2) - G2.row(N - 2))
                             .transpose() -
                         imp_flux(B1_if, Us1, N - 2) - imp_flux(B2_if, Us2, N - 2));
            Vec left = 0.5 * plan.dt *
                       ((H1.row(0) + H2.row(0) - G1.row(0) - G2.row(0)).transpose() -
                        imp_flux(B1_if, Us1, 0) - imp_flux(B2_if, Us2, 0));
            const double scale = std::max(1.0, before.cwiseAbs().maxCoeff());
            const double drift = (after - before + right - left).cwiseAbs().maxCoeff() / scale;
            rec.max_drift = std::max(rec.max_drift, drift);
        }

        Uc = Unew;
        if ((m + 1) % plan.per_record == 0) record((m + 1) * plan.dt);
    }
    return rec;
}

// ---------------------------------------------------------------------------
// Integral identities

double duhamel_residual(const SystemDefinition& sys, const Profile& prof,
                        const Vec& xi_tilde, const MatC& U0,
                        const std::function<MatC(double)>& f_of_t, double T,
                        const std::string& boundary_case, const EvolveOptions& opt) {
    EvolveOptions o = opt;
    o.store_snapshots = true;
    o.energy = {};
    const auto direct = linearized_evolve(sys, prof, xi_tilde, U0, nullptr, f_of_t, T,
                                          boundary_case, o);
    const int R = static_cast<int>(direct.t.size());
    const double dT = direct.t[1] - direct.t[0];
    const int N = prof.n_nodes(), n = sys.n;

    // S(t) U0 and S(t) f(s_j) by homogeneous solves on the same step grid
    const auto free_part =
        linearized_evolve(sys, prof, xi_tilde, U0, nullptr, nullptr, T, boundary_case, o);
    std::vector<std::vector<MatC>> prop(R);
    if (f_of_t) prop[R - 1] = {f_of_t(direct.t[R - 1])}; // S(0) f = f
    if (f_of_t)
        for (int j = 0; j + 1 < R; ++j) {
            MatC fj = f_of_t(direct.t[j]);
            // propagate only as far as needed: S(tau) f(t_j), tau <= T - t_j
            const double span = T - direct.t[j];
            EvolveOptions oj = o;
            oj.n_records = R - j;
            oj.dt = dT; // keep the same step size so offsets align
            auto run = linearized_evolve(sys, prof, xi_tilde, fj, nullptr, nullptr,
                                         span, boundary_case, oj);
            prop[j] = std::move(run.snapshots);
        }

    const Vec qw = trapezoid_weights(prof.grid);
    auto l2 = [&](const MatC& W) {
        double acc = 0;
        for (int i = 0; i < N; ++i) acc += qw[i] * W.row(i).squaredNorm();
        return std::sqrt(acc);
    };

    double worst = 0.0, scale = 0.0;
    for (int i = 0; i < R; ++i) scale = std::max(scale, l2(direct.snapshots[i]));
    for (int i = 0; i < R; ++i) {
        MatC duh = free_part.snapshots[i];
        if (f_of_t && i > 0) {
            for (int j = 0; j <= i; ++j) {
                const double w = (j == 0 || j == i) ? 0.5 * dT : dT;
                duh += w * prop[j][i - j];
            }
        }
        worst = std::max(worst, l2(MatC(direct.snapshots[i] - duh)));
    }
    return worst / std::max(scale, 1e-300);
}

double boundary_homogenization_check(const SystemDefinition& sys, const Profile& prof,
                                     const Vec& xi_tilde,
                                     const std::function<VecC(double)>& h_of_t, double T,
                                     const std::string& boundary_case,
                                     const EvolveOptions& opt) {
    if (!h_of_t) throw std::invalid_argument("h must be supplied");
    const int N = prof.n_nodes(), n = sys.n;
    LinearOperator op = build_linear_operator(sys, prof, xi_tilde, boundary_case);
    const VecC h0 = h_of_t(0.0);
    if (h0.norm() > opt.compat_tol)
        throw CompatibilityViolation("boundary trace must vanish at t = 0");

    // lift g(x,t) = e^{-x} Lambda h(t), C Lambda = I
    const MatC Ct = op.C.adjoint();
    const MatC Lambda = Ct * (op.C * Ct).partialPivLu().inverse();
    MatC lift_cols(op.size, op.n_tr); // e^{-x} Lambda e_k stacked on the grid
    for (int i = 0; i < N; ++i)
        lift_cols.middleRows(i * n, n) = std::exp(-prof.grid[i]) * Lambda;
    MatC L_lift(op.size, op.n_tr);
    for (int k = 0; k < op.n_tr; ++k) L_lift.col(k) = op.apply(lift_cols.col(k));

    // dh/dt by five-point stencils on a fine uniform grid
    const double dq = T / 4096.0;
    auto dh_dt = [&](double t) -> VecC {
        VecC acc = VecC::Zero(op.n_tr);
        Vec xs(5);
        const double t0 = std::clamp(t - 2 * dq, 0.0, T - 4 * dq);
        for (int k = 0; k < 5; ++k) xs[k] = t0 + k * dq;
        const Vec w = fd_weights(t, xs, 1);
        for (int k = 0; k < 5; ++k) acc += w[k] * h_of_t(xs[k]);
        return acc;
    };

    auto g_field = [&](double t) -> MatC {
        const VecC z = lift_cols * h_of_t(t);
        MatC G(N, n);
        for (int i = 0; i < N; ++i) G.row(i) = z.segment(i * n, n);
        return G;
    };
    auto forcing = [&](double t) -> MatC {
        const VecC z = L_lift * h_of_t(t) - lift_cols * dh_dt(t);
        MatC F(N, n);
        for (int i = 0; i < N; ++i) F.row(i) = z.segment(i * n, n);
        return F;
    };

    EvolveOptions o = opt;
    o.store_snapshots = true;
    o.energy = {};
    const auto with_trace = linearized_evolve(sys, prof, xi_tilde, MatC::Zero(N, n),
                                              h_of_t, nullptr, T, boundary_case, o);
    const auto lifted = linearized_evolve(sys, prof, xi_tilde, MatC(-g_field(0.0)),
                                          nullptr, forcing, T, boundary_case, o);

    const Vec qw = trapezoid_weights(prof.grid);
    auto l2 = [&](const MatC& W) {
        double acc = 0;
        for (int i = 0; i < N; ++i) acc += qw[i] * W.row(i).squaredNorm();
        return std::sqrt(acc);
    };
    double worst = 0.0, scale = 0.0;
    for (int i = 0; i < static_cast<int>(with_trace.t.size()); ++i) {
        const MatC ub = g_field(with_trace.t[i]) + lifted.snapshots[i];
        scale = std::max(scale, l2(with_trace.snapshots[i]));
        worst = std::max(worst, l2(MatC(with_trace.snapshots[i] - ub)));
    }
    return worst / std::max(scale, 1e-300);
}

DecayFit measure_decay(const TrajectoryRecord& rec, const std::string& norm,
                       double t_lo, double t_hi) {
    const Vec* series = nullptr;
    if (norm == "l2") series = &rec.l2;
    else if (norm == "linf") series = &rec.linf;
    else if (norm == "es") series = &rec.es;
    else throw std::invalid_argument("norm must be l2, linf, or es");
    if (series->size() != rec.t.size())
        throw std::invalid_argument("requested norm was not recorded");

    std::vector<double> ts, ys;
    for (int i = 0; i < rec.t.size(); ++i)
        if (rec.t[i] >= t_lo && rec.t[i] <= t_hi) {
            ts.push_back(rec.t[i]);
            ys.push_back((*series)[i]);
        }
    Vec tv = Eigen::Map<Vec>(ts.data(), static_cast<Eigen::Index>(ts.size()));
    Vec yv = Eigen::Map<Vec>(ys.data(), static_cast<Eigen::Index>(ys.size()));
    const double floor = yv.size() ? 1e3 * std::numeric_limits<double>::epsilon() *
                                         yv.maxCoeff()
                                   : 0.0;
    return fit_log_linear(tv, yv, floor);
}

Profile constant_profile(const SystemDefinition& sys, const EndState& plus,
                         const Vec& grid) {
    Profile p;
    p.grid = grid;
    p.values = plus.U_plus.transpose().replicate(grid.size(), 1);
    p.derivative = Mat::Zero(grid.size(), sys.n);
    p.end_state = plus;
    p.wall_value = plus.U_plus;
    p.theta_fit = 0.0;
    return p;
}

std::string TrajectoryRecord::to_csv() const {
    std::ostringstream os;
    os << "# schema=1\n";
    os << "t,l2,linf,es,bh";
    for (int c = 0; c < conserved.cols(); ++c) os << ",conserved_" << c;
    os << "\n";
    char buf[64];
    auto put = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        os << buf;
    };
    for (int i = 0; i < t.size(); ++i) {
        put(t[i]);
        os << ',';
        put(l2[i]);
        os << ',';
        put(linf[i]);
        os << ',';
        put(es.size() ? es[i] : 0.0);
        os << ',';
        put(bh.size() ? bh[i] : 0.0);
        for (int c = 0; c < conserved.cols(); ++c) {
            os << ',';
            put(conserved(i, c));
        }
        os << '\n';
    }
    return os.str();
}

} // namespace blstab
