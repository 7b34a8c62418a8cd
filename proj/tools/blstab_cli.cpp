// Batch front-end: hypothesis audits, profiles, Evans sweeps, stability maps,
// dynamics experiments, energy audits. Config-driven, CSV/JSON artifacts,
// deterministic for fixed config and seed.
#include <atomic>
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "blstab/dynamics.hpp"
#include "blstab/energy.hpp"
#include "blstab/errors.hpp"
#include "blstab/evans.hpp"
#include "blstab/model.hpp"
#include "blstab/numerics.hpp"
#include "blstab/profile.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace blstab;

namespace {

constexpr int kExitPass = 0;
constexpr int kExitAudit = 2;
constexpr int kExitConfig = 64;
constexpr int kExitNumeric = 70;

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Ctx {
    json cfg;
    fs::path out;
    bool strict = false;
    int threads = 1;
    std::uint64_t seed = 0;
};

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) {
        q += c;
        if (c == '"') q += '"';
    }
    return q + "\"";
}

void write_file(const fs::path& path, const std::string& body) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("output path not writable: " + path.string());
    os << body;
}

void write_json(const fs::path& path, json j) {
    j["schema"] = 1;
    write_file(path, j.dump(2) + "\n");
}

const json& at(const json& j, const std::string& key) {
    auto it = j.find(key);
    if (it == j.end()) throw ConfigError("missing config field: " + key);
    return *it;
}

double num_or(const json& j, const std::string& key, double dflt) {
    auto it = j.find(key);
    return it == j.end() ? dflt : it->get<double>();
}

Vec vec_from(const json& j) {
    Vec v(j.size());
    int i = 0;
    for (const auto& e : j) v[i++] = e.get<double>();
    return v;
}

std::vector<Vec> xi_list(const json& j) {
    std::vector<Vec> out;
    for (const auto& e : j) {
        if (e.is_array()) out.push_back(vec_from(e));
        else out.push_back(Vec::Constant(1, e.get<double>()));
    }
    return out;
}

struct Loaded {
    SystemDefinition sys;
    std::optional<IsentropicParams> params;
    EndState plus;
    Vec grid;
    std::string boundary_case;
};

Loaded load_model(const Ctx& ctx) {
    Loaded L{.sys = system_from_json(ctx.cfg, nullptr)};
    std::optional<IsentropicParams> p;
    L.sys = system_from_json(ctx.cfg, &p);
    L.params = p;
    if (p) {
        L.plus = isentropic_end_state(*p);
        L.boundary_case = p->V < 0 ? "outflow" : "inflow";
    } else {
        const json& ej = at(ctx.cfg, "end_state");
        L.plus.U_plus = vec_from(ej);
        L.plus.W_plus = L.sys.to_w(L.plus.U_plus);
        L.boundary_case = "outflow";
    }
    if (ctx.cfg.contains("boundary_case"))
        L.boundary_case = ctx.cfg["boundary_case"].get<std::string>();

    json g = ctx.cfg.value("grid", json::object());
    const int n_nodes = static_cast<int>(num_or(g, "n_nodes", 400));
    double x_max = num_or(g, "x_max", 0.0);
    if (x_max <= 0) {
        double rate = 1.0;
        if (p && p->V < 0) rate = -p->rho0 * p->V / p->mu;
        x_max = 30.0 / rate;
    }
    if (n_nodes < 8) throw ConfigError("grid.n_nodes: need at least 8 nodes");
    if (g.value("uniform", false)) L.grid = uniform_grid(x_max, n_nodes);
    else L.grid = layer_grid(x_max, n_nodes, num_or(g, "x_layer", x_max / 6.0));
    return L;
}

Profile load_profile(const Ctx& ctx, const Loaded& L) {
    json pj = ctx.cfg.value("profile", json::object());
    const std::string mode = pj.value("mode", L.params ? "explicit" : "constant");
    if (mode == "constant") return constant_profile(L.sys, L.plus, L.grid);
    if (mode == "explicit") {
        if (!L.params) throw ConfigError("profile.mode=explicit needs the isentropic model");
        return explicit_transverse(*L.params, L.grid);
    }
    if (mode != "shoot") throw ConfigError("profile.mode: expected constant|explicit|shoot");

    Vec wall_w;
    if (pj.contains("wall_w")) {
        wall_w = vec_from(pj["wall_w"]);
    } else if (L.boundary_case == "outflow") {
        // no-slip transverse wall, normal velocity of the end state
        wall_w = L.plus.W_plus.tail(L.sys.r);
        wall_w[0] = 0.0;
    } else {
        wall_w = L.plus.W_plus;
        wall_w[L.sys.hyp()] = 0.0;
    }
    WallConstraints wc = L.boundary_case == "outflow"
                             ? WallConstraints::outflow(L.sys, wall_w)
                             : WallConstraints::inflow(wall_w);
    ProfileOptions opt;
    opt.n_nodes = static_cast<int>(L.grid.size());
    opt.x_max = L.grid[L.grid.size() - 1];
    auto branches = solve_profile(L.sys, L.plus, wc, opt);
    return branches.front();
}

// ---------------------------------------------------------------------------

int cmd_check(const Ctx& ctx) {
    Loaded L = load_model(ctx);
    Profile prof = load_profile(ctx, L);
    SamplingOptions opt;
    opt.seed = ctx.seed;
    HypothesisReport rep = hypothesis_report(L.sys, L.plus, prof.wall_value, opt);
    json j = rep.to_json();
    j["boundary_case_config"] = L.boundary_case;
    write_json(ctx.out / "check.json", j);
    const bool ok = rep.all_pass();
    std::printf("check: %s (theta0=%s theta=%s case=%s)\n", ok ? "pass" : "FAIL",
                fmt(rep.theta0).c_str(), fmt(rep.theta).c_str(),
                rep.boundary_case.c_str());
    return ok || !ctx.strict ? kExitPass : kExitAudit;
}

int cmd_profile(const Ctx& ctx) {
    Loaded L = load_model(ctx);
    Profile prof = load_profile(ctx, L);
    const int N = prof.n_nodes(), n = L.sys.n;
    std::ostringstream os;
    os << "# schema=1\nx";
    for (int c = 0; c < n; ++c) os << ",u" << c;
    for (int c = 0; c < n; ++c) os << ",du" << c;
    os << "\n";
    for (int i = 0; i < N; ++i) {
        os << fmt(prof.grid[i]);
        for (int c = 0; c < n; ++c) os << ',' << fmt(prof.values(i, c));
        for (int c = 0; c < n; ++c) os << ',' << fmt(prof.derivative(i, c));
        os << "\n";
    }
    write_file(ctx.out / "profile.csv", os.str());

    json j{{"theta_fit", prof.theta_fit},
           {"x_max", prof.grid[N - 1]},
           {"n_nodes", N},
           {"boundary_case", L.boundary_case}};
    for (int c = 0; c < n; ++c) j["wall_value"].push_back(prof.wall_value[c]);
    if (L.params) j["drag"] = drag(*L.params);
    write_json(ctx.out / "profile.json", j);
    std::printf("profile: %d nodes, theta_fit=%s\n", N, fmt(prof.theta_fit).c_str());
    return kExitPass;
}

WindingOptions winding_options(const json& fj) {
    WindingOptions w;
    w.zero_rel_tol = num_or(fj, "zero_rel_tol", w.zero_rel_tol);
    w.max_depth = static_cast<int>(num_or(fj, "max_depth", w.max_depth));
    return w;
}

int cmd_evans_map(const Ctx& ctx) {
    Loaded L = load_model(ctx);
    Profile prof = load_profile(ctx, L);
    EvansProblem prob = make_evans_problem(L.sys, prof, L.boundary_case);
    const json& fj = at(ctx.cfg, "frequencies");
    auto xis = xi_list(at(fj, "xi"));
    const double radius = num_or(fj, "radius", 10.0);
    const double indent = num_or(fj, "origin_exclusion", 1e-3);
    if (radius <= 0 || indent <= 0 || indent >= radius)
        throw ConfigError("frequencies: need 0 < origin_exclusion < radius");
    auto contour =
        semicircle_contour(radius, indent, static_cast<int>(num_or(fj, "axis_points", 14)),
                           static_cast<int>(num_or(fj, "arc_points", 12)));

    std::ostringstream os;
    os << "# schema=1\nxi_index";
    for (int c = 0; c < (L.sys.d - 1); ++c) os << ",xi" << c;
    os << ",re_lambda,im_lambda,log_abs_d,arg_d\n";
    json summary = json::array();
    for (std::size_t k = 0; k < xis.size(); ++k) {
        WindingResult wr = winding_number(prob, xis[k], contour, winding_options(fj));
        for (std::size_t i = 0; i < wr.contour.size(); ++i) {
            os << k;
            for (int c = 0; c < xis[k].size(); ++c) os << ',' << fmt(xis[k][c]);
            os << ',' << fmt(wr.contour[i].real()) << ',' << fmt(wr.contour[i].imag())
               << ',' << fmt(wr.log_abs_d[i]) << ',' << fmt(wr.arg_d[i]) << "\n";
        }
        json e = wr.to_json();
        e["xi_index"] = k;
        summary.push_back(std::move(e));
    }
    write_file(ctx.out / "evans_map.csv", os.str());
    write_json(ctx.out / "evans_map.json", json{{"results", summary}});
    std::printf("evans-map: %zu frequencies sampled\n", xis.size());
    return kExitPass;
}

int cmd_condition_d(const Ctx& ctx) {
    Loaded L = load_model(ctx);
    Profile prof = load_profile(ctx, L);
    EvansProblem prob = make_evans_problem(L.sys, prof, L.boundary_case);
    const json& fj = at(ctx.cfg, "frequencies");
    auto xis = xi_list(at(fj, "xi"));
    ConditionDOptions opt;
    opt.radius = num_or(fj, "radius", 10.0);
    opt.origin_exclusion = num_or(fj, "origin_exclusion", 1e-3);
    opt.winding = winding_options(fj);
    if (opt.radius <= 0 || opt.origin_exclusion <= 0)
        throw ConfigError("frequencies: radius and origin_exclusion must be positive");
    ConditionDReport rep = check_condition_D(prob, xis, opt);
    write_json(ctx.out / "condition_d.json", rep.to_json());
    std::printf("condition-d: %s min|D|=%s\n", rep.pass ? "pass" : "FAIL",
                fmt(rep.min_margin).c_str());
    if (!rep.pass) return ctx.strict ? kExitAudit : kExitPass;
    return kExitPass;
}

MatC gaussian_initial(const json& sj, const Vec& grid, int n) {
    const json init = sj.value("initial", json::object());
    const double amp = num_or(init, "amplitude", 1e-3);
    const double center = num_or(init, "center", grid[grid.size() - 1] / 3.0);
    const double width = num_or(init, "width", 1.0);
    std::vector<int> comps;
    if (init.contains("components"))
        for (const auto& e : init["components"]) comps.push_back(e.get<int>());
    else
        for (int c = 0; c < n; ++c) comps.push_back(c);
    MatC U0 = MatC::Zero(grid.size(), n);
    for (int i = 0; i < grid.size(); ++i) {
        const double g = amp * std::exp(-std::pow((grid[i] - center) / width, 2));
        for (int c : comps) U0(i, c) = g;
    }
    return U0;
}

int cmd_simulate(const Ctx& ctx) {
    Loaded L = load_model(ctx);
    Profile prof = load_profile(ctx, L);
    const json sj = ctx.cfg.value("simulate", json::object());
    const std::string kind = sj.value("kind", "linearized");
    const double T = num_or(sj, "T", 10.0);
    EvolveOptions opt;
    opt.dt = num_or(sj, "dt", 0.0);
    opt.n_records = static_cast<int>(num_or(sj, "n_records", 81));
    opt.blowup_factor = num_or(sj, "blowup_factor", 1e6);
    if (T <= 0 || opt.n_records < 2) throw ConfigError("simulate: T > 0, n_records >= 2");

    TrajectoryRecord rec;
    bool blew_up = false;
    std::string blow_msg;
    try {
        if (kind == "linearized") {
            Vec xi = sj.contains("xi") ? vec_from(sj["xi"]) : Vec::Zero(L.sys.d - 1);
            MatC U0 = gaussian_initial(sj, prof.grid, L.sys.n);
            rec = linearized_evolve(L.sys, prof, xi, U0, nullptr, nullptr, T,
                                    L.boundary_case, opt);
        } else if (kind == "nonlinear") {
            MatC U0c = gaussian_initial(sj, prof.grid, L.sys.n);
            rec = nonlinear_evolve_1d(L.sys, prof, U0c.real(), nullptr, T,
                                      L.boundary_case, opt);
        } else {
            throw ConfigError("simulate.kind: expected linearized|nonlinear");
        }
    } catch (const BlowUp& b) {
        blew_up = true;
        blow_msg = b.what();
    }

    json j{{"kind", kind}, {"T", T}, {"blowup", blew_up}};
    if (!blew_up) {
        write_file(ctx.out / "trajectory.csv", rec.to_csv());
        j["l2_initial"] = rec.l2[0];
        j["l2_final"] = rec.l2[rec.l2.size() - 1];
        j["max_drift"] = rec.max_drift;
        try {
            DecayFit fit = measure_decay(rec, "l2", T / 2, T);
            j["decay_rate"] = fit.rate;
            j["decay_r2"] = fit.r2;
        } catch (const FitFailed&) {
            j["decay_rate"] = nullptr;
        }
    } else {
        j["message"] = blow_msg;
    }
    write_json(ctx.out / "simulate.json", j);
    std::printf("simulate[%s]: %s\n", kind.c_str(),
                blew_up ? "BLOWUP" : "completed");
    return blew_up ? kExitAudit : kExitPass;
}

int cmd_energy_audit(const Ctx& ctx) {
    Loaded L = load_model(ctx);
    Profile prof = load_profile(ctx, L);
    const json ej = ctx.cfg.value("energy", json::object());
    const int s = static_cast<int>(num_or(ej, "s", 1));
    const double c_star = num_or(ej, "c_star", 1.0);
    if (s < 1) throw ConfigError("energy.s: need s >= 1");

    Vec xi_k = Vec::Unit(L.sys.d, 0);
    if (ej.contains("xi_k")) xi_k = vec_from(ej["xi_k"]);
    CompensatorOptions copt;
    copt.seed = ctx.seed;
    KawashimaMatrix comp = kawashima_K(L.sys, L.plus.W_plus, xi_k, copt);
    WeightProfile weight = weight_alpha(L.sys, prof, c_star, L.boundary_case);
    EnergyDefaults defs = energy_defaults(L.sys, prof, comp);

    const json sj = ctx.cfg.value("simulate", json::object());
    const double T = num_or(sj, "T", 10.0);
    EvolveOptions opt;
    opt.dt = num_or(sj, "dt", 0.0);
    opt.n_records = static_cast<int>(num_or(sj, "n_records", 81));
    opt.energy.weight = &weight;
    opt.energy.K1 = comp.K;
    opt.energy.M = num_or(ej, "M", defs.M);
    opt.energy.eps = num_or(ej, "eps", defs.eps);
    opt.energy.s = s;
    Vec xi = sj.contains("xi") ? vec_from(sj["xi"]) : Vec::Zero(L.sys.d - 1);
    MatC U0 = gaussian_initial(sj, prof.grid, L.sys.n);
    TrajectoryRecord rec =
        linearized_evolve(L.sys, prof, xi, U0, nullptr, nullptr, T, L.boundary_case, opt);

    Vec Bh = Vec::Zero(rec.t.size()); // homogeneous trace in this front-end
    Vec l2sq = rec.l2.array().square();
    GronwallOptions gopt;
    gopt.c_cap = num_or(ej, "c_cap", gopt.c_cap);
    GronwallReport rep = gronwall_audit(rec.t, rec.es, l2sq, Bh, gopt);

    std::ostringstream os;
    os << "# schema=1\nt,es,l2,bh\n";
    for (int i = 0; i < rec.t.size(); ++i)
        os << fmt(rec.t[i]) << ',' << fmt(rec.es[i]) << ',' << fmt(rec.l2[i]) << ','
           << fmt(Bh[i]) << "\n";
    write_file(ctx.out / "energy_series.csv", os.str());

    json j = rep.to_json();
    j["theta1"] = weight.theta1;
    j["theta2"] = comp.theta2;
    j["M"] = opt.energy.M;
    j["eps"] = opt.energy.eps;
    write_json(ctx.out / "energy_audit.json", j);
    std::printf("energy-audit: %s (theta=%s C=%s)\n", rep.feasible ? "feasible" : "FAIL",
                fmt(rep.theta_best).c_str(), fmt(rep.c_best).c_str());
    return rep.feasible || !ctx.strict ? kExitPass : kExitAudit;
}

struct SweepRow {
    double V = 0, u_inf = 0, gamma = 0, mu = 0;
    double drag_v = 0, theta = 0, min_abs_d = 0;
    int winding_total = 0;
    bool pass = false;
    std::string status;
};

int cmd_sweep(const Ctx& ctx) {
    const json sw = at(ctx.cfg, "sweep");
    IsentropicParams base;
    if (ctx.cfg.contains("params")) {
        std::optional<IsentropicParams> p;
        system_from_json(ctx.cfg, &p);
        if (p) base = *p;
    }
    auto axis = [&](const char* key, double dflt) {
        std::vector<double> v;
        if (sw.contains(key))
            for (const auto& e : sw[key]) v.push_back(e.get<double>());
        else v.push_back(dflt);
        return v;
    };
    const auto Vs = axis("V", base.V);
    const auto Us = axis("u_inf", base.u_inf);
    const auto Gs = axis("gamma", base.gamma);
    const bool run_d = sw.value("condition_d", false);
    const double radius = num_or(sw, "radius", 10.0);
    const int n_nodes = static_cast<int>(num_or(sw, "n_nodes", 400));
    std::vector<Vec> xis;
    if (sw.contains("xi")) xis = xi_list(sw["xi"]);
    else xis.push_back(Vec::Zero(1));

    struct Point {
        IsentropicParams p;
    };
    std::vector<Point> points;
    for (double g : Gs)
        for (double u : Us)
            for (double v : Vs) {
                IsentropicParams p = base;
                p.V = v;
                p.u_inf = u;
                p.gamma = g;
                points.push_back({p});
            }

    std::vector<SweepRow> rows(points.size());
    std::atomic<std::size_t> cursor{0};
    auto worker = [&]() {
        for (;;) {
            const std::size_t i = cursor.fetch_add(1);
            if (i >= points.size()) return;
            const IsentropicParams& p = points[i].p;
            SweepRow& r = rows[i];
            r.V = p.V;
            r.u_inf = p.u_inf;
            r.gamma = p.gamma;
            r.mu = p.mu;
            try {
                auto sys = build_isentropic_2d(p);
                const double rate = -p.rho0 * p.V / p.mu;
                if (p.V >= 0)
                    throw NoConnection("inflow sweep point: no transverse layer", p.V);
                Vec grid = layer_grid(30.0 / rate, n_nodes, 5.0 / rate);
                Profile prof = explicit_transverse(p, grid);
                r.drag_v = drag(p);
                r.theta = prof.theta_fit;
                if (run_d) {
                    auto prob = make_evans_problem(sys, prof, "outflow");
                    ConditionDOptions opt;
                    opt.radius = radius;
                    opt.origin_exclusion = num_or(sw, "origin_exclusion", 1e-3);
                    opt.winding = winding_options(sw);
                    auto rep = check_condition_D(prob, xis, opt);
                    r.min_abs_d = rep.min_margin;
                    for (const auto& wres : rep.results) r.winding_total += wres.winding;
                    r.pass = rep.pass;
                } else {
                    r.pass = true;
                }
            } catch (const std::exception& e) {
                r.status = e.what();
                r.pass = false;
            }
        }
    };
    const int nthreads = std::max(1, ctx.threads);
    std::vector<std::thread> pool;
    for (int t = 1; t < nthreads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    std::ostringstream os;
    os << "# schema=1\nV,u_inf,gamma,mu,drag,theta,winding_total,min_abs_d,pass,status\n";
    for (const auto& r : rows) {
        os << fmt(r.V) << ',' << fmt(r.u_inf) << ',' << fmt(r.gamma) << ',' << fmt(r.mu)
           << ',' << fmt(r.drag_v) << ',' << fmt(r.theta) << ',' << r.winding_total << ','
           << fmt(r.min_abs_d) << ',' << (r.pass ? 1 : 0) << ','
           << csv_escape(r.status) << "\n";
    }
    write_file(ctx.out / "sweep.csv", os.str());
    std::size_t failures = 0;
    for (const auto& r : rows)
        if (!r.status.empty()) ++failures;
    std::printf("sweep: %zu points, %zu failures\n", rows.size(), failures);
    return kExitPass;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"noncharacteristic boundary-layer stability toolkit"};
    app.require_subcommand(1);

    std::string config_path, out_dir = ".";
    bool strict = false;
    int threads = 1;
    std::uint64_t seed = 0;
    app.add_option("--config", config_path, "JSON config file")->required();
    app.add_option("--out", out_dir, "output directory");
    app.add_flag("--strict", strict, "nonzero exit on failed audits");
    app.add_option("--threads", threads, "sweep parallelism");
    app.add_option("--seed", seed, "sampling seed");
    app.fallthrough();

    const char* names[] = {"check",    "profile",      "evans-map", "condition-d",
                           "simulate", "energy-audit", "sweep"};
    for (const char* n : names) app.add_subcommand(n, "");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitConfig;
    }

    Ctx ctx;
    ctx.out = out_dir;
    ctx.strict = strict;
    ctx.threads = threads;
    ctx.seed = seed;
    try {
        std::ifstream is(config_path);
        if (!is) {
            std::fprintf(stderr, "config: cannot open %s\n", config_path.c_str());
            return kExitConfig;
        }
        ctx.cfg = json::parse(is);
        std::error_code ec;
        fs::create_directories(ctx.out, ec);
        if (ec) throw ConfigError("output dir: " + ec.message());

        const std::string sub = app.get_subcommands().front()->get_name();
        if (sub == "check") return cmd_check(ctx);
        if (sub == "profile") return cmd_profile(ctx);
        if (sub == "evans-map") return cmd_evans_map(ctx);
        if (sub == "condition-d") return cmd_condition_d(ctx);
        if (sub == "simulate") return cmd_simulate(ctx);
        if (sub == "energy-audit") return cmd_energy_audit(ctx);
        if (sub == "sweep") return cmd_sweep(ctx);
        return kExitConfig;
    } catch (const json::parse_error& e) {
        std::fprintf(stderr, "config parse error at byte %zu: %s\n", e.byte, e.what());
        return kExitConfig;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const json::exception& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const NoConnection& e) {
        std::fprintf(stderr, "profile: %s\n", e.what());
        return kExitAudit;
    } catch (const CompatibilityViolation& e) {
        std::fprintf(stderr, "consistency: %s\n", e.what());
        return kExitAudit;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric failure: %s\n", e.what());
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return kExitNumeric;
    }
}
