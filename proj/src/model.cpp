#include "blstab/model.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace blstab {

using nlohmann::json;

// ---------------------------------------------------------------------------
// SystemDefinition helpers

Mat SystemDefinition::b_block(int j, int k, const Vec& U) const {
    return viscosity(j, k, U).bottomRows(r);
}

Mat SystemDefinition::b2_block(int j, int k, const Vec& U) const {
    return viscosity(j, k, U).bottomRightCorner(r, r);
}

// ---------------------------------------------------------------------------
// Small local helpers

namespace {

double sym_defect(const Mat& m) {
    double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    return (m - m.transpose()).cwiseAbs().maxCoeff() / scale;
}

double min_eig_sym(const Mat& m) {
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (m + m.transpose()));
    return es.eigenvalues().minCoeff();
}

double min_pair_gap(const VecC& vals) {
    double g = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < vals.size(); ++i)
        for (Eigen::Index j = i + 1; j < vals.size(); ++j)
            g = std::min(g, std::abs(vals[i] - vals[j]));
    return g;
}

Mat sum_a_sym(const SystemDefinition& sys, const Vec& W, const Vec& xi) {
    Mat m = Mat::Zero(sys.n, sys.n);
    for (int j = 1; j <= sys.d; ++j) m += xi[j - 1] * sys.a_sym(j, W);
    return m;
}

Mat sum_b_sym(const SystemDefinition& sys, const Vec& W, const Vec& xi) {
    Mat m = Mat::Zero(sys.n, sys.n);
    for (int j = 1; j <= sys.d; ++j)
        for (int k = 1; k <= sys.d; ++k)
            m += xi[j - 1] * xi[k - 1] * sys.b_sym(j, k, W);
    return m;
}

std::string eig_string(const VecC& v) {
    std::ostringstream os;
    os.precision(6);
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (i) os << ", ";
        os << v[i].real();
        if (std::abs(v[i].imag()) > 1e-14) os << (v[i].imag() > 0 ? "+" : "") << v[i].imag() << "i";
    }
    return os.str();
}

} // namespace

// ---------------------------------------------------------------------------
// check_structure: (A1) symmetry + SPD A0, (A3) block form + parabolicity,
// quadratic source

HypothesisReport check_structure(const SystemDefinition& sys,
                                 const std::vector<Vec>& states,
                                 const SamplingOptions& opt) {
    HypothesisReport rep;
    if (states.empty()) throw InsufficientSampling("check_structure: no states");

    double worst_sym = 0.0, theta0 = std::numeric_limits<double>::infinity();
    double block_defect = 0.0;
    for (const Vec& U : states) {
        const Vec W = sys.to_w(U);
        const Mat A0 = sys.a0(W);
        worst_sym = std::max(worst_sym, sym_defect(A0));
        theta0 = std::min(theta0, min_eig_sym(A0));
        for (int j = 1; j <= sys.d; ++j)
            worst_sym = std::max(worst_sym, sym_defect(sys.a_sym(j, W)));
        // A1_11 symmetry is implied by A1 symmetry; recorded via worst_sym.
        for (int j = 1; j <= sys.d; ++j)
            for (int k = 1; k <= sys.d; ++k) {
                const Mat Bs = sys.b_sym(j, k, W);
                double scale = std::max(1.0, Bs.cwiseAbs().maxCoeff());
                // top rows and left hyperbolic columns must vanish (A3 block form)
                double defect = 0.0;
                defect = std::max(defect, Bs.topRows(sys.hyp()).cwiseAbs().maxCoeff());
                defect = std::max(defect, Bs.leftCols(sys.hyp()).cwiseAbs().maxCoeff());
                block_defect = std::max(block_defect, defect / scale);
            }
    }

    // parabolicity: min over sampled unit xi of lambda_min(Sym sum xi xi bs)
    double theta = std::numeric_limits<double>::infinity();
    auto dirs = unit_directions(sys.d, std::max(opt.directions, 64), opt.seed);
    for (const Vec& U : states) {
        const Vec W = sys.to_w(U);
        for (const Vec& xi : dirs) {
            Mat bs = sum_b_sym(sys, W, xi).bottomRightCorner(sys.r, sys.r);
            theta = std::min(theta, min_eig_sym(bs));
        }
    }

    // quadratic source bound: |G| <= C |W_x|^2 on sampled small gradients
    double src_ratio = 0.0;
    {
        std::mt19937_64 rng(opt.seed + 17);
        std::normal_distribution<double> g(0.0, 1.0);
        for (const Vec& U : states) {
            const Vec W = sys.to_w(U);
            for (double s : {1e-2, 1e-4}) {
                Mat Wx(sys.n, sys.d);
                for (int i = 0; i < sys.n; ++i)
                    for (int j = 0; j < sys.d; ++j) Wx(i, j) = s * g(rng);
                const Vec G = sys.source(W, Wx);
                double wx2 = Wx.squaredNorm();
                if (wx2 > 0) src_ratio = std::max(src_ratio, G.norm() / wx2);
            }
        }
    }

    rep.theta0 = theta0;
    rep.theta = theta;
    rep.a1_symmetry.pass = (worst_sym <= 1e-10) && (theta0 > 0.0);
    rep.a1_symmetry.margin = theta0;
    {
        std::ostringstream os;
        os << "max symmetry defect " << worst_sym << ", theta0 " << theta0;
        rep.a1_symmetry.detail = os.str();
    }
    rep.a3_parabolic.pass = (block_defect <= 1e-12) && (theta > 0.0);
    rep.a3_parabolic.margin = theta;
    {
        std::ostringstream os;
        os << "block defect " << block_defect << ", theta " << theta
           << ", source ratio " << src_ratio;
        rep.a3_parabolic.detail = os.str();
    }
    rep.smoothness_s = (sys.d - 1) / 2 + 7;
    return rep;
}

// ---------------------------------------------------------------------------
// (H1)

Verdict check_noncharacteristic(const SystemDefinition& sys, const EndState& plus,
                                const Vec& wall_state, std::string* case_out,
                                double* theta1_out) {
    (void)plus;
    const Vec W = sys.to_w(wall_state);
    const Mat A1 = sys.a_sym(1, W);
    const Mat block = A1.topLeftCorner(sys.hyp(), sys.hyp());
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (block + block.transpose()));
    const Vec ev = es.eigenvalues();
    const double lo = ev.minCoeff(), hi = ev.maxCoeff();
    Verdict v;
    std::string bc;
    if (lo > 0.0) {
        bc = "inflow";
        v.pass = true;
        v.margin = lo;
    } else if (hi < 0.0) {
        bc = "outflow";
        v.pass = true;
        v.margin = -hi;
    } else {
        bc = "characteristic";
        v.pass = false;
        v.margin = ev.cwiseAbs().minCoeff();
    }
    v.detail = "A1_11 eigenvalues in [" + std::to_string(lo) + ", " + std::to_string(hi) +
               "] -> " + bc;
    if (case_out) *case_out = bc;
    if (theta1_out) *theta1_out = ev.cwiseAbs().minCoeff();
    return v;
}

// ---------------------------------------------------------------------------
// (H2)

Verdict check_hyperbolicity(const SystemDefinition& sys, const EndState& plus,
                            VecC* eigs_out) {
    const Mat dF1 = sys.flux_jacobian(1, plus.U_plus);
    Eigen::EigenSolver<Mat> es(dF1);
    VecC ev = es.eigenvalues();
    if (eigs_out) *eigs_out = ev;
    const double radius = std::max(ev.cwiseAbs().maxCoeff(), 1e-300);
    const double gap = min_pair_gap(ev);
    const double min_abs = ev.cwiseAbs().minCoeff();
    Verdict v;
    const double tol = 1e-8 * radius;
    v.pass = (gap > tol) && (min_abs > tol);
    v.margin = std::min(gap, min_abs);
    v.detail = "dF1(U+) eigenvalues {" + eig_string(ev) + "}, min gap " +
               std::to_string(gap) + ", min |.| " + std::to_string(min_abs);
    return v;
}

// ---------------------------------------------------------------------------
// (H3)

Verdict check_constant_multiplicity(const SystemDefinition& sys, const EndState& plus,
                                    const std::vector<Vec>& directions,
                                    const SamplingOptions& opt) {
    if (static_cast<int>(directions.size()) < 100)
        throw InsufficientSampling("check_constant_multiplicity: need >= 100 directions");
    std::vector<int> signature;
    Verdict v;
    v.pass = true;
    double min_split = std::numeric_limits<double>::infinity();
    for (const Vec& xi : directions) {
        Mat m = Mat::Zero(sys.n, sys.n);
        for (int j = 1; j <= sys.d; ++j) m += xi[j - 1] * sys.flux_jacobian(j, plus.U_plus);
        Eigen::EigenSolver<Mat> es(m);
        VecC ev = es.eigenvalues();
        const double radius = std::max(ev.cwiseAbs().maxCoeff(), 1e-300);
        auto sig = cluster_multiplicities(ev, opt.collision_tol_factor * radius);
        // distance to the nearest *different* signature: min inter-cluster gap
        double g = min_pair_gap(ev);
        if (std::isfinite(g)) min_split = std::min(min_split, g);
        if (signature.empty()) {
            signature = sig;
        } else if (sig != signature) {
            v.pass = false;
            std::ostringstream os;
            os << "multiplicity signature changed at xi = (";
            for (int k = 0; k < sys.d; ++k) os << (k ? "," : "") << xi[k];
            os << ")";
            v.detail = os.str();
            v.margin = 0.0;
            return v;
        }
    }
    v.margin = std::isfinite(min_split) ? min_split : 1.0;
    std::ostringstream os;
    os << "signature (";
    for (std::size_t i = 0; i < signature.size(); ++i) os << (i ? "," : "") << signature[i];
    os << ") constant over " << directions.size() << " directions";
    v.detail = os.str();
    return v;
}

// ---------------------------------------------------------------------------
// (H4)

std::vector<BranchPoint> find_branch_points(const SystemDefinition& sys,
                                            const EndState& plus, const Vec& xi_tilde,
                                            double tau_max, const SamplingOptions& opt) {
    const Vec& W = plus.W_plus;
    const Mat A1 = sys.a_sym(1, W);
    Eigen::PartialPivLU<Mat> lu(A1);
    if (std::abs(lu.determinant()) < 1e-12 * std::pow(A1.norm(), sys.n))
        throw SingularReduction("find_branch_points: A1 singular at W+");
    const Mat A0 = sys.a0(W);
    Mat Atan = Mat::Zero(sys.n, sys.n);
    for (int j = 2; j <= sys.d; ++j) Atan += xi_tilde[j - 2] * sys.a_sym(j, W);

    auto eigs_at = [&](double tau) -> VecC {
        Mat m = lu.solve(tau * A0 + Atan);
        return Eigen::EigenSolver<Mat>(m).eigenvalues();
    };
    auto gap_at = [&](double tau) { return min_pair_gap(eigs_at(tau)); };

    const bool xi_zero = (xi_tilde.size() == 0) || (xi_tilde.norm() == 0.0);
    const int n_scan = 2001;
    std::vector<double> taus, gaps;
    taus.reserve(n_scan);
    for (int i = 0; i < n_scan; ++i) {
        double t = -tau_max + 2.0 * tau_max * i / (n_scan - 1);
        // the frequency origin is not a branch point: the symbol vanishes there
        if (xi_zero && std::abs(t) < 1e-6 * tau_max) continue;
        taus.push_back(t);
        gaps.push_back(gap_at(t));
    }

    std::vector<BranchPoint> out;
    const double rad_scale = std::max(eigs_at(tau_max).cwiseAbs().maxCoeff(), 1e-300);
    const double tol = opt.collision_tol_factor * rad_scale;
    // a collision candidate is a local minimum of the gap dipping below 1e-3*scale
    const double candidate_tol = 1e-3 * rad_scale;
    for (std::size_t i = 1; i + 1 < taus.size(); ++i) {
        if (gaps[i] > candidate_tol) continue;
        if (!(gaps[i] <= gaps[i - 1] && gaps[i] <= gaps[i + 1])) continue;
        // golden-section refine the local minimum
        double a = taus[i - 1], b = taus[i + 1];
        const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
        double c = b - gr * (b - a), dd = a + gr * (b - a);
        double fc = gap_at(c), fd = gap_at(dd);
        for (int it = 0; it < 80 && (b - a) > 1e-12 * std::max(1.0, tau_max); ++it) {
            if (fc < fd) {
                b = dd;
                dd = c;
                fd = fc;
                c = b - gr * (b - a);
                fc = gap_at(c);
            } else {
                a = c;
                c = dd;
                fc = fd;
                dd = a + gr * (b - a);
                fd = gap_at(dd);
            }
        }
        double tstar = 0.5 * (a + b);
        double gstar = gap_at(tstar);
        if (gstar > tol) continue; // dip but no collision
        VecC ev = eigs_at(tstar);
        auto sig = cluster_multiplicities(ev, std::max(tol, 10 * gstar));
        BranchPoint bp;
        bp.tau = tstar;
        bp.multiplicity = sig.empty() ? 0 : sig.front();
        // unresolved: the gap stays below tol on a neighbourhood (not isolated)
        double spread = 0.05 * std::max(1.0, tau_max);
        bp.resolved = (gap_at(tstar + spread) > 10 * tol) && (gap_at(tstar - spread) > 10 * tol);
        // dedupe
        bool dup = false;
        for (const auto& q : out)
            if (std::abs(q.tau - bp.tau) < 1e-6 * std::max(1.0, tau_max)) dup = true;
        if (!dup) out.push_back(bp);
    }
    std::sort(out.begin(), out.end(),
              [](const BranchPoint& x, const BranchPoint& y) { return x.tau < y.tau; });
    return out;
}

// ---------------------------------------------------------------------------
// (A2)

Verdict check_genuine_coupling(const SystemDefinition& sys, const EndState& plus,
                               const std::vector<Vec>& directions) {
    const Vec& W = plus.W_plus;
    const Mat A0 = sys.a0(W);
    Eigen::PartialPivLU<Mat> a0lu(A0);
    double margin = std::numeric_limits<double>::infinity();
    Vec worst_xi;
    double bscale = 0.0;
    for (const Vec& xi : directions) {
        const Mat M = sum_a_sym(sys, W, xi) * a0lu.inverse();
        const Mat N = sum_b_sym(sys, W, xi) * a0lu.inverse();
        bscale = std::max(bscale, N.norm());
        Eigen::EigenSolver<Mat> es(M);
        const MatC vecs = es.eigenvectors();
        for (Eigen::Index c = 0; c < vecs.cols(); ++c) {
            VecC w = vecs.col(c);
            double nv = (N * w).norm() / w.norm();
            if (nv < margin) {
                margin = nv;
                worst_xi = xi;
            }
        }
    }
    Verdict v;
    v.margin = margin;
    v.pass = margin > 1e-10 * std::max(bscale, 1e-300);
    std::ostringstream os;
    os << "min |Bs(A0)^-1 w| over eigenvectors = " << margin;
    if (worst_xi.size()) {
        os << " at xi = (";
        for (int k = 0; k < worst_xi.size(); ++k) os << (k ? "," : "") << worst_xi[k];
        os << ")";
    }
    v.detail = os.str();
    return v;
}

// ---------------------------------------------------------------------------
// Full report

HypothesisReport hypothesis_report(const SystemDefinition& sys, const EndState& plus,
                                   const Vec& wall_state, const SamplingOptions& opt) {
    // deterministic state cloud around U+
    std::vector<Vec> states;
    states.push_back(plus.U_plus);
    {
        std::mt19937_64 rng(opt.seed + 1);
        std::normal_distribution<double> g(0.0, 1.0);
        for (int i = 0; i < opt.states; ++i) {
            Vec U = plus.U_plus;
            for (int k = 0; k < sys.n; ++k)
                U[k] += opt.state_radius * std::max(1.0, std::abs(U[k])) * g(rng);
            if (U[0] > 0.1 * plus.U_plus[0]) states.push_back(U);
        }
    }
    auto dirs = unit_directions(sys.d, std::max(100, opt.directions), opt.seed);

    HypothesisReport rep = check_structure(sys, states, opt);
    rep.h1_noncharacteristic =
        check_noncharacteristic(sys, plus, wall_state, &rep.boundary_case, &rep.theta1);
    rep.h2_hyperbolic = check_hyperbolicity(sys, plus);
    rep.h3_const_multiplicity = check_constant_multiplicity(sys, plus, dirs, opt);
    rep.a2_coupling = check_genuine_coupling(sys, plus, dirs);

    // H4 scan: normal-only frequencies plus one transverse direction
    rep.branch_points.clear();
    std::vector<Vec> xts;
    if (sys.d >= 2) {
        Vec z = Vec::Zero(sys.d - 1);
        xts.push_back(z);
        Vec e = Vec::Zero(sys.d - 1);
        e[0] = 1.0;
        xts.push_back(e);
    } else {
        xts.push_back(Vec::Zero(0));
    }
    bool all_resolved = true;
    for (const Vec& xt : xts) {
        auto bps = find_branch_points(sys, plus, xt, 5.0, opt);
        for (const auto& b : bps) {
            rep.branch_points.push_back(b);
            all_resolved = all_resolved && b.resolved;
        }
    }
    rep.h4_branch_structure.pass = all_resolved;
    rep.h4_branch_structure.margin = all_resolved ? 1.0 : 0.0;
    rep.h4_branch_structure.detail =
        std::to_string(rep.branch_points.size()) + " branch point(s), " +
        (all_resolved ? "all resolved" : "unresolved clusters present");
    return rep;
}

bool HypothesisReport::all_pass() const {
    return a1_symmetry.pass && a2_coupling.pass && a3_parabolic.pass &&
           h1_noncharacteristic.pass && h2_hyperbolic.pass &&
           h3_const_multiplicity.pass && h4_branch_structure.pass;
}

static json verdict_json(const Verdict& v) {
    return json{{"pass", v.pass}, {"margin", v.margin}, {"detail", v.detail}};
}

json HypothesisReport::to_json() const {
    json bp = json::array();
    for (const auto& b : branch_points)
        bp.push_back({{"tau", b.tau}, {"multiplicity", b.multiplicity}, {"resolved", b.resolved}});
    return json{{"schema", 1},
                {"A1", verdict_json(a1_symmetry)},
                {"A2", verdict_json(a2_coupling)},
                {"A3", verdict_json(a3_parabolic)},
                {"H1", verdict_json(h1_noncharacteristic)},
                {"H2", verdict_json(h2_hyperbolic)},
                {"H3", verdict_json(h3_const_multiplicity)},
                {"H4", verdict_json(h4_branch_structure)},
                {"case", boundary_case},
                {"theta0", theta0},
                {"theta", theta},
                {"theta1", theta1},
                {"smoothness_s", smoothness_s},
                {"branch_points", bp},
                {"all_pass", all_pass()}};
}

// ---------------------------------------------------------------------------
// Custom tabulated system (constant coefficients; used by audits and tests)

SystemDefinition make_custom_tabulated(const Mat& a0s, const std::vector<Mat>& asym,
                                       const std::vector<std::vector<Mat>>& bsym,
                                       int r) {
    SystemDefinition sys;
    sys.d = static_cast<int>(asym.size());
    sys.n = static_cast<int>(a0s.rows());
    sys.r = r;
    sys.name = "custom-tabulated";
    if (sys.d < 1 || sys.n < 1 || r < 0 || r > sys.n)
        throw std::invalid_argument("make_custom_tabulated: bad dimensions");
    // In W = U coordinates the conservative coefficients are A0^-1-weighted.
    Eigen::PartialPivLU<Mat> a0lu(a0s);
    std::vector<Mat> aflux(asym.size());
    for (std::size_t j = 0; j < asym.size(); ++j) aflux[j] = a0lu.solve(asym[j]);
    std::vector<std::vector<Mat>> bflux(bsym.size());
    for (std::size_t j = 0; j < bsym.size(); ++j) {
        bflux[j].resize(bsym[j].size());
        for (std::size_t k = 0; k < bsym[j].size(); ++k)
            bflux[j][k] = a0lu.solve(bsym[j][k]);
    }

    sys.flux = [aflux](int j, const Vec& U) -> Vec { return aflux[j - 1] * U; };
    sys.flux_jacobian = [aflux](int j, const Vec&) -> Mat { return aflux[j - 1]; };
    sys.viscosity = [bflux](int j, int k, const Vec&) -> Mat { return bflux[j - 1][k - 1]; };
    sys.viscosity_deriv = [n = sys.n](int, int, const Vec&, const Vec&) -> Mat {
        return Mat::Zero(n, n);
    };
    sys.to_w = [](const Vec& U) -> Vec { return U; };
    sys.from_w = [](const Vec& W) -> Vec { return W; };
    sys.w_jacobian = [n = sys.n](const Vec&) -> Mat { return Mat::Identity(n, n); };
    sys.a0 = [a0s](const Vec&) -> Mat { return a0s; };
    sys.a_sym = [asym](int j, const Vec&) -> Mat { return asym[j - 1]; };
    sys.b_sym = [bsym](int j, int k, const Vec&) -> Mat { return bsym[j - 1][k - 1]; };
    sys.source = [n = sys.n](const Vec&, const Mat&) -> Vec { return Vec::Zero(n); };
    return sys;
}

// ---------------------------------------------------------------------------
// JSON input

static Mat mat_from_json(const json& j) {
    const auto rows = j.size();
    Mat m(rows, j.at(0).size());
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t k = 0; k < j.at(i).size(); ++k)
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
                j.at(i).at(k).get<double>();
    return m;
}

SystemDefinition system_from_json(const json& j, std::optional<IsentropicParams>* params_out) {
    const std::string model = j.at("model").get<std::string>();
    if (model == "isentropic2d") {
        IsentropicParams p;
        const json& q = j.at("params");
        p.rho0 = q.value("rho0", 1.0);
        p.V = q.value("V", -0.1);
        p.u_inf = q.value("u_inf", 0.0);
        p.mu = q.value("mu", 0.1);
        p.eta = q.value("eta", 0.0);
        p.a = q.value("a", 1.0);
        p.gamma = q.value("gamma", 2.0);
        if (params_out) *params_out = p;
        return build_isentropic_2d(p);
    }
    if (model == "custom-tabulated") {
        const json& q = j.at("params");
        Mat a0s = mat_from_json(q.at("a0"));
        std::vector<Mat> asym;
        for (const auto& m : q.at("a")) asym.push_back(mat_from_json(m));
        std::vector<std::vector<Mat>> bsym;
        for (const auto& row : q.at("b")) {
            std::vector<Mat> rr;
            for (const auto& m : row) rr.push_back(mat_from_json(m));
            bsym.push_back(rr);
        }
        if (params_out) params_out->reset();
        return make_custom_tabulated(a0s, asym, bsym, q.at("r").get<int>());
    }
    throw std::invalid_argument("system_from_json: unknown model '" + model + "'");
}

} // namespace blstab
