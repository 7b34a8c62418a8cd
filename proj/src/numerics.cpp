#include "blstab/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace blstab {

// ---------------------------------------------------------------------------
// ScaledComplex

void ScaledComplex::rebalance() {
    double a = std::abs(value);
    if (a == 0.0) return;
    if (a > 1e-8 && a < 1e8) return;
    value /= a;
    log_scale += std::log(a);
}

ScaledComplex ScaledComplex::operator*(const ScaledComplex& o) const {
    ScaledComplex r{value * o.value, log_scale + o.log_scale};
    r.rebalance();
    return r;
}

ScaledComplex ScaledComplex::operator/(const ScaledComplex& o) const {
    ScaledComplex r{value / o.value, log_scale - o.log_scale};
    r.rebalance();
    return r;
}

// ---------------------------------------------------------------------------
// Cash-Karp 4(5)

namespace {
const double ck_a2 = 1.0 / 5.0;
const double ck_a3[] = {3.0 / 40.0, 9.0 / 40.0};
const double ck_a4[] = {3.0 / 10.0, -9.0 / 10.0, 6.0 / 5.0};
const double ck_a5[] = {-11.0 / 54.0, 5.0 / 2.0, -70.0 / 27.0, 35.0 / 27.0};
const double ck_a6[] = {1631.0 / 55296.0, 175.0 / 512.0, 575.0 / 13824.0,
                        44275.0 / 110592.0, 253.0 / 4096.0};
const double ck_b5[] = {37.0 / 378.0, 0.0, 250.0 / 621.0, 125.0 / 594.0,
                        0.0, 512.0 / 1771.0};
const double ck_b4[] = {2825.0 / 27648.0, 0.0, 18575.0 / 48384.0,
                        13525.0 / 55296.0, 277.0 / 14336.0, 1.0 / 4.0};

struct Stepper {
    const OdeRhs& f;
    explicit Stepper(const OdeRhs& fn) : f(fn) {}

    // One trial step of size h from (x, y) with known f0 = f(x, y).
    // Returns 5th-order y and the embedded error estimate.
    void step(double x, const VecC& y, const VecC& f0, double h, VecC& y5,
              double& err, double rtol, double atol) const {
        const VecC k1 = f0;
        const VecC k2 = f(x + ck_a2 * h, y + h * (ck_a2 * k1));
        const VecC k3 = f(x + 0.3 * h, y + h * (ck_a3[0] * k1 + ck_a3[1] * k2));
        const VecC k4 = f(x + 0.6 * h,
                          y + h * (ck_a4[0] * k1 + ck_a4[1] * k2 + ck_a4[2] * k3));
        const VecC k5 = f(x + h, y + h * (ck_a5[0] * k1 + ck_a5[1] * k2 +
                                          ck_a5[2] * k3 + ck_a5[3] * k4));
        const VecC k6 =
            f(x + 0.875 * h, y + h * (ck_a6[0] * k1 + ck_a6[1] * k2 +
                                      ck_a6[2] * k3 + ck_a6[3] * k4 +
                                      ck_a6[4] * k5));
        y5 = y + h * (ck_b5[0] * k1 + ck_b5[2] * k3 + ck_b5[3] * k4 +
                      ck_b5[5] * k6);
        const VecC y4 = y + h * (ck_b4[0] * k1 + ck_b4[2] * k3 + ck_b4[3] * k4 +
                                 ck_b4[4] * k5 + ck_b4[5] * k6);
        err = 0.0;
        for (Eigen::Index i = 0; i < y.size(); ++i) {
            double sc = atol + rtol * std::max(std::abs(y[i]), std::abs(y5[i]));
            err = std::max(err, std::abs(y5[i] - y4[i]) / sc);
        }
    }
};

} // namespace

static void integrate_core(const OdeRhs& f, VecC& y, double x0, double x1,
                           const OdeOptions& opt,
                           const std::function<void(double, const VecC&, const VecC&)>& on_accept) {
    const double dir = (x1 >= x0) ? 1.0 : -1.0;
    double x = x0;
    double h = std::min(opt.h_init, std::abs(x1 - x0)) * dir;
    if (h == 0.0) return;
    Stepper st(f);
    VecC fx = f(x, y);
    on_accept(x, y, fx);
    std::size_t steps = 0;
    while (dir * (x1 - x) > 0.0) {
        if (++steps > opt.max_steps)
            throw StiffnessFailure("integrate_ode: step budget exhausted");
        if (dir * (x + h) > dir * x1) h = x1 - x;
        VecC y5;
        double err;
        st.step(x, y, fx, h, y5, err, opt.rtol, opt.atol);
        if (err <= 1.0) {
            x += h;
            y = y5;
            fx = f(x, y);
            on_accept(x, y, fx);
            double grow = (err == 0.0) ? 5.0 : 0.9 * std::pow(err, -0.2);
            h *= std::clamp(grow, 0.2, 5.0);
        } else {
            h *= std::max(0.1, 0.9 * std::pow(err, -0.25));
            if (std::abs(h) < opt.h_min)
                throw StiffnessFailure("integrate_ode: step underflow");
        }
    }
}

OdeSolution integrate_ode(const OdeRhs& f, const VecC& y0, double x0, double x1,
                          const OdeOptions& opt) {
    OdeSolution sol;
    VecC y = y0;
    integrate_core(f, y, x0, x1, opt,
                   [&sol](double x, const VecC& yy, const VecC& ff) {
                       sol.x.push_back(x);
                       sol.y.push_back(yy);
                       sol.f.push_back(ff);
                   });
    return sol;
}

void integrate_ode_observed(const OdeRhs& f, VecC& y, double x0, double x1,
                            const std::function<void(double, VecC&)>& observer,
                            const OdeOptions& opt) {
    integrate_core(f, y, x0, x1, opt,
                   [&](double x, const VecC&, const VecC&) { observer(x, y); });
}

VecC OdeSolution::eval(double xq) const {
    if (x.empty()) throw NumericError("OdeSolution::eval on empty solution");
    const bool increasing = x.back() >= x.front();
    // locate bracketing interval (x may be decreasing)
    std::size_t i = 0;
    if (increasing) {
        if (xq <= x.front()) return y.front();
        if (xq >= x.back()) return y.back();
        while (i + 2 < x.size() && x[i + 1] < xq) ++i;
    } else {
        if (xq >= x.front()) return y.front();
        if (xq <= x.back()) return y.back();
        while (i + 2 < x.size() && x[i + 1] > xq) ++i;
    }
    const double h = x[i + 1] - x[i];
    const double t = (xq - x[i]) / h;
    const double t2 = t * t, t3 = t2 * t;
    // cubic Hermite basis
    const double h00 = 2 * t3 - 3 * t2 + 1, h10 = t3 - 2 * t2 + t;
    const double h01 = -2 * t3 + 3 * t2, h11 = t3 - t2;
    return h00 * y[i] + (h10 * h) * f[i] + h01 * y[i + 1] + (h11 * h) * f[i + 1];
}

// ---------------------------------------------------------------------------
// Grids

Vec layer_grid(double x_max, int n, double x_layer, double cluster_frac) {
    if (n < 4) throw InsufficientSampling("layer_grid: need at least 4 nodes");
    x_layer = std::min(std::max(x_layer, 1e-6 * x_max), 0.9 * x_max);
    int n_layer = std::max(2, static_cast<int>(cluster_frac * n));
    int n_tail = n - n_layer;
    Vec g(n);
    // geometric spacing in the layer: nodes at x_layer * (q^i - 1)/(q^m - 1)
    const double q = 1.06;
    const int m = n_layer;
    for (int i = 0; i < m; ++i)
        g[i] = x_layer * (std::pow(q, i) - 1.0) / (std::pow(q, m) - 1.0);
    double h_tail = (x_max - g[m - 1]) / n_tail;
    for (int i = 0; i < n_tail; ++i) g[m + i] = g[m - 1] + h_tail * (i + 1);
    g[n - 1] = x_max;
    return g;
}

Vec uniform_grid(double x_max, int n) {
    return Vec::LinSpaced(n, 0.0, x_max);
}

// Fornberg's algorithm, standard form.
Vec fd_weights(double z, const Vec& xs, int m) {
    const int nd = static_cast<int>(xs.size()) - 1;
    if (m > nd) throw InsufficientSampling("fd_weights: too few nodes");
    Mat c = Mat::Zero(nd + 1, m + 1);
    double c1 = 1.0;
    double c4 = xs[0] - z;
    c(0, 0) = 1.0;
    for (int i = 1; i <= nd; ++i) {
        int mn = std::min(i, m);
        double c2 = 1.0;
        double c5 = c4;
        c4 = xs[i] - z;
        for (int j = 0; j < i; ++j) {
            double c3 = xs[i] - xs[j];
            c2 *= c3;
            if (j == i - 1) {
                for (int k = mn; k >= 1; --k)
                    c(i, k) = c1 * (k * c(i - 1, k - 1) - c5 * c(i - 1, k)) / c2;
                c(i, 0) = -c1 * c5 * c(i - 1, 0) / c2;
            }
            for (int k = mn; k >= 1; --k)
                c(j, k) = (c4 * c(j, k) - k * c(j, k - 1)) / c3;
            c(j, 0) = c4 * c(j, 0) / c3;
        }
        c1 = c2;
    }
    return c.col(m);
}

template <typename MatT>
static MatT grid_derivative_impl(const Vec& x, const MatT& values) {
    const int n = static_cast<int>(x.size());
    if (values.rows() != n) throw DimensionMismatch("grid_derivative: rows != nodes");
    if (n < 3) throw InsufficientSampling("grid_derivative: need 3 nodes");
    MatT d(values.rows(), values.cols());
    for (int i = 0; i < n; ++i) {
        int j0 = std::clamp(i - 1, 0, n - 3);
        Vec xs(3);
        xs << x[j0], x[j0 + 1], x[j0 + 2];
        Vec w = fd_weights(x[i], xs, 1);
        d.row(i) = w[0] * values.row(j0) + w[1] * values.row(j0 + 1) +
                   w[2] * values.row(j0 + 2);
    }
    return d;
}

Mat grid_derivative(const Vec& x, const Mat& values) {
    return grid_derivative_impl(x, values);
}
MatC grid_derivative(const Vec& x, const MatC& values) {
    return grid_derivative_impl(x, values);
}

Vec trapezoid_weights(const Vec& x) {
    const int n = static_cast<int>(x.size());
    Vec w = Vec::Zero(n);
    for (int i = 0; i + 1 < n; ++i) {
        double h = x[i + 1] - x[i];
        w[i] += 0.5 * h;
        w[i + 1] += 0.5 * h;
    }
    return w;
}

// ---------------------------------------------------------------------------
// Fits and sampling

DecayFit fit_log_linear(const Vec& x, const Vec& y, double floor, int min_points) {
    std::vector<double> xs, ys;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        if (y[i] > floor) {
            xs.push_back(x[i]);
            ys.push_back(std::log(y[i]));
        }
    }
    const int n = static_cast<int>(xs.size());
    if (n < min_points)
        throw FitFailed("fit_log_linear: only " + std::to_string(n) +
                        " samples above floor");
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (int i = 0; i < n; ++i) {
        sx += xs[i];
        sy += ys[i];
        sxx += xs[i] * xs[i];
        sxy += xs[i] * ys[i];
    }
    double denom = n * sxx - sx * sx;
    if (denom <= 0.0) throw FitFailed("fit_log_linear: degenerate abscissae");
    double slope = (n * sxy - sx * sy) / denom;
    double icept = (sy - slope * sx) / n;
    double ss_res = 0, ss_tot = 0, ybar = sy / n;
    for (int i = 0; i < n; ++i) {
        double e = ys[i] - (icept + slope * xs[i]);
        ss_res += e * e;
        ss_tot += (ys[i] - ybar) * (ys[i] - ybar);
    }
    DecayFit fit;
    fit.rate = -slope;
    fit.log_c = icept;
    fit.r2 = (ss_tot > 0) ? 1.0 - ss_res / ss_tot : 1.0;
    fit.n_used = n;
    return fit;
}

std::vector<Vec> unit_directions(int d, int count, std::uint64_t seed) {
    if (count < 1) throw InsufficientSampling("unit_directions: count < 1");
    std::vector<Vec> dirs;
    dirs.reserve(count);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> jit(-0.5, 0.5);
    if (d == 1) {
        for (int i = 0; i < count; ++i) {
            Vec v(1);
            v << (i % 2 == 0 ? 1.0 : -1.0);
            dirs.push_back(v);
        }
    } else if (d == 2) {
        const double dth = 2.0 * M_PI / count;
        double off = jit(rng) * dth * 0.1;
        for (int i = 0; i < count; ++i) {
            double th = off + i * dth;
            Vec v(2);
            v << std::cos(th), std::sin(th);
            dirs.push_back(v);
        }
    } else if (d == 3) {
        // Fibonacci sphere
        const double ga = M_PI * (3.0 - std::sqrt(5.0));
        double off = jit(rng) * 1e-3;
        for (int i = 0; i < count; ++i) {
            double zc = 1.0 - 2.0 * (i + 0.5) / count + off / count;
            zc = std::clamp(zc, -1.0, 1.0);
            double rad = std::sqrt(1.0 - zc * zc);
            double th = ga * i;
            Vec v(3);
            v << rad * std::cos(th), rad * std::sin(th), zc;
            v.normalize();
            dirs.push_back(v);
        }
    } else {
        std::normal_distribution<double> g(0.0, 1.0);
        for (int i = 0; i < count; ++i) {
            Vec v(d);
            for (int k = 0; k < d; ++k) v[k] = g(rng);
            v.normalize();
            dirs.push_back(v);
        }
    }
    return dirs;
}

std::vector<int> cluster_multiplicities(const VecC& vals, double tol) {
    const int n = static_cast<int>(vals.size());
    std::vector<int> parent(n);
    std::iota(parent.begin(), parent.end(), 0);
    std::function<int(int)> find = [&](int a) {
        while (parent[a] != a) a = parent[a] = parent[parent[a]];
        return a;
    };
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            if (std::abs(vals[i] - vals[j]) <= tol) parent[find(i)] = find(j);
    std::vector<int> size(n, 0);
    for (int i = 0; i < n; ++i) size[find(i)]++;
    std::vector<int> out;
    for (int i = 0; i < n; ++i)
        if (size[i] > 0) out.push_back(size[i]);
    std::sort(out.rbegin(), out.rend());
    return out;
}

double rel_diff(double a, double b, double floor) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

Complex log_det_triangular(const MatC& r) {
    Complex s = 0.0;
    for (Eigen::Index i = 0; i < r.rows(); ++i) s += std::log(r(i, i));
    return s;
}

} // namespace blstab
