#pragma once

#include "nscert/certificates.hpp"
#include "nscert/config.hpp"
#include "nscert/io.hpp"
#include "nscert/objective.hpp"

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

namespace nscert {

// exit codes: 0 certified/converged, 2 completed-with-violations,
// 3 solver failure, 4 config error
enum ExitCode : int { ExitOk = 0, ExitViolations = 2, ExitSolverFailure = 3, ExitConfig = 4 };

struct CliOptions {
    std::string config_path;
    std::string out_dir = ".";
    std::uint64_t seed = 1;
    int jobs = 1;
    bool best_effort = false;
};

namespace detail {

inline std::string out_path(const CliOptions& o, const std::string& name) {
    std::filesystem::create_directories(o.out_dir);
    return (std::filesystem::path(o.out_dir) / name).string();
}

inline CertifyOpts certify_opts(const RunConfig& c, const CliOptions& o,
                                const std::string& section) {
    CertifyOpts co;
    co.vi_samples = static_cast<int>(c.integer_or(section + ".vi_samples", 1000));
    co.seed = o.seed;
    co.jobs = o.jobs;
    co.tols.tol_p = c.number_or(section + ".tol_p", co.tols.tol_p);
    co.tols.tol_w = c.number_or(section + ".tol_w", co.tols.tol_w);
    co.tols.tol_sys = c.number_or(section + ".tol_sys", co.tols.tol_sys);
    co.tols.tol_kkt = c.number_or(section + ".tol_kkt", co.tols.tol_kkt);
    co.tols.vi_accept = c.number_or(section + ".vi_accept", co.tols.vi_accept);
    return co;
}

inline void write_certificate(const CliOptions& o, const ProblemParams& p,
                              const StationarityReport& r, const Field* worst) {
    write_text(out_path(o, "report.txt"), report_kv(r));
    write_text(out_path(o, "report.csv"), report_csv(r));
    if (worst && worst->size() == p.grid.num_nodes())
        dump_field(out_path(o, "vi_worst_direction.dat"), p.grid, *worst,
                   "field vi_worst_direction");
}

}  // namespace detail

inline int run_solve(const RunConfig& cfg, const CliOptions& opts) {
    const ProblemParams p = problem_from_config(cfg);
    const Field g = cfg.field_or("solve.g", p.grid, p.epsilon, 0.0);
    auto [y, rep] = solve_state(p.grid, p.beta, p.epsilon, g, p.f, p.solver);
    dump_field(detail::out_path(opts, "y.dat"), p.grid, y, "field y (state)");
    write_text(detail::out_path(opts, "solve_report.csv"), solve_report_csv(rep));
    if (!rep.converged) {
        std::cerr << "solve: state solver did not converge (residual " << rep.final_residual
                  << ")\n";
        return opts.best_effort ? ExitViolations : ExitSolverFailure;
    }
    return ExitOk;
}

inline int run_optimize(const RunConfig& cfg, const CliOptions& opts) {
    const ProblemParams p = problem_from_config(cfg);
    const Field g0 = project_F(cfg.field_or("optimize.g0", p.grid, p.epsilon, 0.0), p.grid);

    OptimizeOpts oo;
    oo.step0 = cfg.number_or("optimize.step0", 1.0);
    oo.max_iter = static_cast<int>(cfg.integer_or("optimize.max_iter", 20000));
    oo.cert_tol = cfg.number_or("optimize.cert_tol", 1e-6);
    const int probe_n = static_cast<int>(cfg.integer_or("optimize.opt_vi_samples", 48));

    ViProbe probe = [&](const Field& g) {
        return check_vi(p, g, probe_n, opts.seed, opts.jobs).vi_min;
    };

    OptimizeResult res;
    try {
        res = optimize(p, g0, oo, probe);
    } catch (const std::runtime_error& e) {
        std::cerr << "optimize: " << e.what() << '\n';
        if (!opts.best_effort) return ExitSolverFailure;
        return ExitViolations;
    }

    const CertifyOpts co = detail::certify_opts(cfg, opts, "optimize");
    Field worst;
    const FirstVariation fv = first_variation_density(p, res.g);
    const StationarityReport rep =
        certify(p, res.g, &fv.y, &fv.p, &fv.zeta, co, &worst);

    dump_field(detail::out_path(opts, "g.dat"), p.grid, res.g, "field g (control)");
    dump_field(detail::out_path(opts, "y.dat"), p.grid, fv.y, "field y (state)");
    dump_field(detail::out_path(opts, "p.dat"), p.grid, fv.p, "field p (adjoint)");
    dump_field(detail::out_path(opts, "zeta.dat"), p.grid, fv.zeta, "field zeta (multiplier)");
    write_text(detail::out_path(opts, "trace.csv"), trace_csv(res.trace));
    detail::write_certificate(opts, p, rep, &worst);

    if (res.stalled) std::cerr << "optimize: line search stalled, best iterate returned\n";
    return rep.certified ? ExitOk : ExitViolations;
}

inline int run_certify(const RunConfig& cfg, const CliOptions& opts) {
    const ProblemParams p = problem_from_config(cfg);
    const Field g = cfg.field("certify.g", p.grid, p.epsilon);
    Field y, padj, zeta;
    const Field* yp = nullptr;
    const Field* pp = nullptr;
    const Field* zp = nullptr;
    if (cfg.has("certify.y")) {
        y = cfg.field("certify.y", p.grid, p.epsilon);
        yp = &y;
    }
    if (cfg.has("certify.p")) {
        padj = cfg.field("certify.p", p.grid, p.epsilon);
        pp = &padj;
    }
    if (cfg.has("certify.zeta")) {
        zeta = cfg.field("certify.zeta", p.grid, p.epsilon);
        zp = &zeta;
    }
    const CertifyOpts co = detail::certify_opts(cfg, opts, "certify");
    Field worst;
    StationarityReport rep;
    try {
        rep = certify(p, g, yp, pp, zp, co, &worst);
    } catch (const std::runtime_error& e) {
        std::cerr << "certify: " << e.what() << '\n';
        return opts.best_effort ? ExitViolations : ExitSolverFailure;
    }
    detail::write_certificate(opts, p, rep, &worst);
    return rep.certified ? ExitOk : ExitViolations;
}

inline int run_path(const RunConfig& cfg, const CliOptions& opts) {
    const ProblemParams p = problem_from_config(cfg);
    const Field g0 = project_F(cfg.field_or("path.g0", p.grid, p.epsilon, 0.0), p.grid);

    std::vector<double> gammas = cfg.numbers_or("path.gammas");
    if (gammas.empty()) gammas = default_gamma_schedule();

    PathOpts po;
    po.prox_weight = cfg.number_or("path.prox_weight", 1.0);
    po.inner.step0 = cfg.number_or("path.step0", 1.0);
    po.inner.max_iter = static_cast<int>(cfg.integer_or("path.max_iter", 20000));
    po.inner.cert_tol = cfg.number_or("path.cert_tol", 1e-6);
    const int leg_n = static_cast<int>(cfg.integer_or("path.leg_vi_samples", 64));

    LegProbeFactory factory = [&](const ProblemView& pv) -> ViProbe {
        return [&pv, leg_n, &opts](const Field& g) {
            return check_vi_view(pv, g, leg_n, opts.seed, opts.jobs).vi_min;
        };
    };

    PathResult pr;
    try {
        pr = solve_regularized_path(p, gammas, g0, po, factory);
    } catch (const std::runtime_error& e) {
        std::cerr << "path: " << e.what() << '\n';
        return opts.best_effort ? ExitViolations : ExitSolverFailure;
    }
    if (pr.points.empty()) {
        std::cerr << "path: no points computed\n";
        return ExitSolverFailure;
    }

    // reference: state of the non-smooth problem at the last path control
    const Field& g_last = pr.points.back().g;
    auto [y_ref, rep_ref] = solve_state(p.grid, p.beta, p.epsilon, g_last, p.f, p.solver);
    if (!rep_ref.converged && !opts.best_effort) {
        std::cerr << "path: reference state solve did not converge\n";
        return ExitSolverFailure;
    }

    CsvWriter w({"gamma", "j_gamma", "state_dist_to_ref", "zeta_slack", "certified"});
    for (const auto& pt : pr.points) {
        const double dist = norm_l2(p.grid, pt.y - y_ref);
        // multiplier slack against the limit-state interval, outside a
        // kink band of width 4 gamma
        double slack = 0.0;
        const double band = std::max(4.0 * pt.gamma, default_kink_tol(y_ref));
        for (int k = 0; k < p.grid.num_nodes(); ++k) {
            if (p.beta.dist_to_kinks(y_ref[k]) <= band) continue;
            const auto [lo, hi] = clarke_interval(p.beta, y_ref[k], band);
            slack = std::max(slack, std::max(lo - pt.zeta[k], pt.zeta[k] - hi));
        }
        w.row({fmt_full(pt.gamma), fmt_full(pt.j), fmt_full(dist), fmt_full(slack),
               fmt_int(pt.certified ? 1 : 0)});
    }
    w.write(detail::out_path(opts, "path.csv"));

    const CertifyOpts co = detail::certify_opts(cfg, opts, "path");
    Field worst;
    const StationarityReport rep = certify(p, g_last, nullptr, nullptr, nullptr, co, &worst);
    detail::write_certificate(opts, p, rep, &worst);
    dump_field(detail::out_path(opts, "g.dat"), p.grid, g_last, "field g (path final)");

    if (pr.truncated) {
        std::cerr << "path: a leg failed to certify, path truncated\n";
        return ExitViolations;
    }
    return rep.certified ? ExitOk : ExitViolations;
}

inline int run_mms(const RunConfig& cfg, const CliOptions& opts) {
    std::vector<double> levels = cfg.numbers_or("mms.levels");
    if (levels.empty()) levels = {16, 32, 64, 128};

    // manufactured solution y* = sin(pi x1) sin(pi x2) on the unit square,
    // f = 2 pi^2 y* + beta(y*), g = 0 (so the Heaviside term vanishes)
    std::vector<double> bps = cfg.numbers_or("beta.breakpoints");
    std::vector<double> slopes =
        cfg.has("beta.slopes") ? cfg.numbers("beta.slopes") : std::vector<double>{0.0, 1.0};
    if (!cfg.has("beta.breakpoints") && !cfg.has("beta.slopes")) bps = {0.0};
    const PiecewiseLinearBeta beta(bps, slopes, cfg.number_or("beta.value_at_zero", 0.0),
                                   cfg.number_or("beta.delta", 0.25));
    const double eps = cfg.number_or("problem.epsilon", 0.1);
    const double tol = cfg.number_or("solver.tol", 1e-10);

    CsvWriter w({"h", "sup_error", "observed_order"});
    double prev_err = 0.0;
    bool all_ok = true;
    std::cout << "h, sup_error, observed_order\n";
    for (std::size_t li = 0; li < levels.size(); ++li) {
        const int n = static_cast<int>(levels[li]);
        const Grid2D g = build_grid(n - 1, n - 1, Rect{0, 0, 1, 1}, Rect{0.25, 0.25, 0.75, 0.75});
        const Field y_star =
            field_from(g, [](double x, double y) { return std::sin(M_PI * x) * std::sin(M_PI * y); });
        Field f(g.num_nodes());
        for (int k = 0; k < g.num_nodes(); ++k)
            f[k] = 2.0 * M_PI * M_PI * y_star[k] + beta.value(y_star[k]);
        SolverOpts so;
        so.tol = tol;
        auto [y, rep] = solve_state(g, beta, eps, constant_field(g, 0.0), f, so);
        all_ok = all_ok && rep.converged;
        const double err = (y - y_star).lpNorm<Eigen::Infinity>();
        const double order = li == 0 ? std::numeric_limits<double>::quiet_NaN()
                                     : std::log2(prev_err / err);
        w.row({fmt_full(g.h), fmt_full(err), fmt_full(order)});
        std::cout << g.h << ", " << err << ", " << order << '\n';
        prev_err = err;
    }
    w.write(detail::out_path(opts, "mms.csv"));
    return all_ok ? ExitOk : ExitSolverFailure;
}

inline int run_command(const std::string& command, const CliOptions& opts) {
    RunConfig cfg;
    try {
        cfg = RunConfig::parse_file(opts.config_path);
    } catch (const std::exception& e) {
        std::cerr << e.what() << '\n';
        return ExitConfig;
    }
    try {
        if (command == "solve") return run_solve(cfg, opts);
        if (command == "optimize") return run_optimize(cfg, opts);
        if (command == "certify") return run_certify(cfg, opts);
        if (command == "path") return run_path(cfg, opts);
        if (command == "mms") return run_mms(cfg, opts);
        std::cerr << "unknown command: " << command << '\n';
        return ExitConfig;
    } catch (const ConfigError& e) {
        std::cerr << e.what() << '\n';
        return ExitConfig;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return ExitConfig;
    } catch (const std::runtime_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return ExitSolverFailure;
    }
}

}  // namespace nscert
