#pragma once

#include "nscert/beta.hpp"
#include "nscert/grid.hpp"
#include "nscert/heaviside.hpp"
#include "nscert/pde.hpp"
#include "nscert/wspace.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

namespace nscert {

/// One instance of the control problem: minimize over g in F
///   int_E (S(g)-y_d)^2 + alpha int_D (1 - H_eps(g)) + 1/2 |g - g_sh|_W^2
/// subject to the state equation, F = {g <= 0 on E}.
struct ProblemParams {
    Grid2D grid;
    PiecewiseLinearBeta beta;
    double epsilon = 0.1;
    double alpha = 0.0;
    double s = 0.5;  // W-smoothness order
    Field f;
    Field y_d;
    Field g_sh;
    SolverOpts solver;

    const WGram& wgram() const {
        if (!gram_cache_) gram_cache_ = std::make_shared<WGram>(build_w_gram(grid, s));
        return *gram_cache_;
    }

    void validate() const {
        require_eps(epsilon);
        require(alpha >= 0.0, "ProblemParams: alpha must be >= 0");
        check_field(grid, f, "ProblemParams.f");
        check_field(grid, y_d, "ProblemParams.y_d");
        check_field(grid, g_sh, "ProblemParams.g_sh");
        require(in_F(g_sh, grid), "ProblemParams: g_sh must lie in F (<= 0 on E)");
    }

    // lazily built W-Gram; kept public so the type stays an aggregate
    mutable std::shared_ptr<WGram> gram_cache_ = nullptr;
};

/// Internal view selecting the nonlinearity and an optional proximal term
/// 1/2 w |g - anchor|_W^2 (used by the mollified path legs).
struct ProblemView {
    const ProblemParams* p = nullptr;
    const Nonlinearity* beta = nullptr;  // defaults to p->beta
    const Field* prox_anchor = nullptr;
    double prox_weight = 0.0;

    ProblemView() = default;
    explicit ProblemView(const ProblemParams& params) : p(&params), beta(&params.beta) {}

    const Nonlinearity& nl() const { return *beta; }
};

namespace detail {

inline double objective_given_state(const ProblemView& pv, const Field& g, const Field& y) {
    const ProblemParams& p = *pv.p;
    Field track(p.grid.num_nodes());
    for (int k = 0; k < p.grid.num_nodes(); ++k) {
        const double d = y[k] - p.y_d[k];
        track[k] = d * d;
    }
    double j = integrate(p.grid, track, Region::E);
    if (p.alpha != 0.0) {
        Field one_minus(p.grid.num_nodes());
        for (int k = 0; k < p.grid.num_nodes(); ++k)
            one_minus[k] = 1.0 - h_eps(g[k], p.epsilon);
        j += p.alpha * integrate(p.grid, one_minus, Region::D);
    }
    const Field dg = g - p.g_sh;
    j += 0.5 * w_inner(p.wgram(), dg, dg);
    if (pv.prox_anchor && pv.prox_weight > 0.0) {
        const Field da = g - *pv.prox_anchor;
        j += 0.5 * pv.prox_weight * w_inner(p.wgram(), da, da);
    }
    return j;
}

inline std::pair<Field, SolveReport> state_of(const ProblemView& pv, const Field& g,
                                              const Field* warm = nullptr) {
    const ProblemParams& p = *pv.p;
    return solve_state(p.grid, pv.nl(), p.epsilon, g, p.f, p.solver, warm);
}

}  // namespace detail

/// Reduced objective j(g); solves the state internally and throws if the
/// state solver does not converge.
inline double eval_objective_view(const ProblemView& pv, const Field& g,
                                  const Field* warm = nullptr, Field* y_out = nullptr) {
    auto [y, rep] = detail::state_of(pv, g, warm);
    if (!rep.converged)
        throw std::runtime_error("eval_objective: state solver did not converge (residual " +
                                 std::to_string(rep.final_residual) + ")");
    if (y_out) *y_out = y;
    return detail::objective_given_state(pv, g, y);
}

inline double eval_objective(const ProblemParams& params, const Field& g) {
    params.validate();
    return eval_objective_view(ProblemView(params), g);
}

struct FirstVariation {
    Field q;     // L^2 density  p (eps - (1/eps) H'_eps(g) y) - alpha H'_eps(g)
    Field y;     // state
    Field p;     // adjoint
    Field zeta;  // multiplier selection
};

/// Exact discrete gradient of the tracking term w.r.t. the state,
/// 2 chi~_E (y - y_d) with the cell-corner weights of the E-quadrature.
inline Field tracking_rhs(const ProblemParams& p, const Field& y) {
    Field rhs(p.grid.num_nodes());
    for (int j = 0; j < p.grid.ny; ++j)
        for (int i = 0; i < p.grid.nx; ++i) {
            const int k = p.grid.node_index(i, j);
            rhs[k] = 2.0 * p.grid.e_weight(i, j) * (y[k] - p.y_d[k]);
        }
    return rhs;
}

/// First-variation L^2 density from given candidate fields.
inline Field q_density(const ProblemParams& p, const Field& g, const Field& y,
                       const Field& p_adj) {
    Field q(p.grid.num_nodes());
    for (int k = 0; k < p.grid.num_nodes(); ++k) {
        const double hp = h_eps_prime(g[k], p.epsilon);
        q[k] = p_adj[k] * (p.epsilon - hp * y[k] / p.epsilon) - p.alpha * hp;
    }
    return q;
}

/// Assembles the first-variation data at g.  The directional derivative of
/// j at smooth points is (q, h)_h + (g - g_sh, h)_W (+ prox term).
inline FirstVariation first_variation_view(const ProblemView& pv, const Field& g,
                                           const ZetaPolicy& zp = {},
                                           const Field* warm = nullptr) {
    const ProblemParams& p = *pv.p;
    auto [y, rep] = detail::state_of(pv, g, warm);
    if (!rep.converged)
        throw std::runtime_error("first_variation: state solver did not converge");

    Field zeta(y.size());
    if (pv.beta == &p.beta) {
        zeta = select_zeta(p.beta, y, zp);
    } else {
        for (Eigen::Index k = 0; k < y.size(); ++k) zeta[k] = pv.nl().d_plus(y[k]);
    }

    const Field rhs = tracking_rhs(p, y);
    Field padj = solve_adjoint(p.grid, p.epsilon, g, zeta, rhs, p.solver.tol);
    Field q = q_density(p, g, y, padj);
    return FirstVariation{std::move(q), std::move(y), std::move(padj), std::move(zeta)};
}

inline FirstVariation first_variation_density(const ProblemParams& params, const Field& g) {
    params.validate();
    return first_variation_view(ProblemView(params), g);
}

/// W-gradient of j at g given its first-variation density.
inline Field w_gradient(const ProblemView& pv, const Field& g, const FirstVariation& fv) {
    const ProblemParams& p = *pv.p;
    Field grad = riesz(p.wgram(), fv.q) + (g - p.g_sh);
    if (pv.prox_anchor && pv.prox_weight > 0.0) grad += pv.prox_weight * (g - *pv.prox_anchor);
    return grad;
}

struct TraceRow {
    int iter = 0;
    double j = 0.0;
    double step = 0.0;
    double stat = 0.0;    // norm of the projected W-gradient step
    double vi_min = std::numeric_limits<double>::quiet_NaN();
};

struct OptimizeOpts {
    double step0 = 1.0;
    int max_iter = 20000;
    double cert_tol = 1e-6;  // VI acceptance threshold (normalized)
    double armijo = 1e-4;
    double stat_floor_factor = 1e-4;  // hard stop at stat <= factor * cert_tol
};

struct OptimizeResult {
    Field g;
    Field y;
    double j = 0.0;
    double stat = 0.0;
    double vi_min = std::numeric_limits<double>::quiet_NaN();
    bool certified = false;
    bool stalled = false;
    int iterations = 0;
    std::vector<TraceRow> trace;
};

/// Sampled-VI callback: returns the normalized minimum over feasible
/// directions at the given candidate (certificates module supplies it).
using ViProbe = std::function<double(const Field&)>;

/// Projected W-gradient descent over F with Armijo backtracking.  The
/// certificate, not the optimizer, defines success: when a vi_probe is
/// given, the run stops as soon as the sampled VI minimum clears
/// -cert_tol; otherwise it stops on the projected-gradient measure.
inline OptimizeResult optimize_view(const ProblemView& pv, const Field& g0,
                                    const OptimizeOpts& opts, const ViProbe& vi_probe = {}) {
    const ProblemParams& p = *pv.p;
    require(in_F(g0, p.grid), "optimize: g0 must lie in F");

    OptimizeResult res;
    res.g = g0;
    Field y;
    double j = eval_objective_view(pv, res.g, nullptr, &y);
    double sigma = opts.step0;
    double vi_trigger = opts.cert_tol;
    const double stat_floor = std::max(1e-13, opts.stat_floor_factor * opts.cert_tol);

    for (int it = 0; it < opts.max_iter; ++it) {
        res.iterations = it;
        const FirstVariation fv = first_variation_view(pv, res.g, {}, &y);
        y = fv.y;
        const Field grad = w_gradient(pv, res.g, fv);
        const Field probe = project_F(res.g - grad, p.grid);
        const double stat = norm_w(p.wgram(), probe - res.g) / (1.0 + norm_w(p.wgram(), res.g));
        res.stat = stat;

        TraceRow row{it, j, 0.0, stat, std::numeric_limits<double>::quiet_NaN()};

        if (stat <= vi_trigger) {
            if (vi_probe) {
                const double vi = vi_probe(res.g);
                row.vi_min = vi;
                res.vi_min = vi;
                if (vi >= -opts.cert_tol) {
                    res.certified = true;
                    res.trace.push_back(row);
                    break;
                }
                vi_trigger *= 0.25;  // probe again only once meaningfully closer
            } else if (stat <= stat_floor) {
                res.trace.push_back(row);
                break;
            }
        }

        // Armijo backtracking on sigma along the projected arc
        bool accepted = false;
        while (sigma >= 1e-14) {
            const Field g_trial = project_F(res.g - sigma * grad, p.grid);
            const double pred = w_inner(p.wgram(), grad, g_trial - res.g);
            if (pred >= 0.0) {  // no feasible decrease along this arc length
                sigma *= 0.5;
                continue;
            }
            Field y_trial;
            double j_trial;
            try {
                j_trial = eval_objective_view(pv, g_trial, &y, &y_trial);
            } catch (const std::runtime_error&) {
                sigma *= 0.5;
                continue;
            }
            if (j_trial <= j + opts.armijo * pred) {
                res.g = g_trial;
                j = j_trial;
                y = y_trial;
                accepted = true;
                break;
            }
            sigma *= 0.5;
        }
        row.step = accepted ? sigma : 0.0;
        if (!accepted) {
            // no feasible decrease left along the projected arc; that is
            // convergence when the stationarity measure is already small
            if (vi_probe) {
                const double vi = vi_probe(res.g);
                row.vi_min = vi;
                res.vi_min = vi;
                res.certified = vi >= -opts.cert_tol;
                res.stalled = !res.certified;
            } else {
                res.stalled = stat > opts.cert_tol;
            }
            res.trace.push_back(row);
            break;
        }
        res.trace.push_back(row);
        sigma = std::min(sigma * 2.0, 1e6);
    }

    res.j = j;
    res.y = y;
    return res;
}

inline OptimizeResult optimize(const ProblemParams& params, const Field& g0,
                               const OptimizeOpts& opts = {}, const ViProbe& vi_probe = {}) {
    params.validate();
    return optimize_view(ProblemView(params), g0, opts, vi_probe);
}

struct PathPoint {
    double gamma = 0.0;
    Field g, y, p, zeta;
    double j = 0.0;
    bool certified = false;
};

struct PathOpts {
    OptimizeOpts inner;
    double prox_weight = 1.0;
    int psi_order = 64;
};

struct PathResult {
    std::vector<PathPoint> points;
    bool truncated = false;
};

/// Factory for per-leg VI probes; receives the leg's view so the sampled
/// VI is taken for the mollified functional.
using LegProbeFactory = std::function<ViProbe(const ProblemView&)>;

/// Warm-started homotopy over the mollified problems P_gamma: each leg
/// replaces beta by beta_gamma and anchors the proximal term at the
/// previous leg's solution.  A leg that fails to certify truncates the
/// path (flagged), keeping the points computed so far.
inline PathResult solve_regularized_path(const ProblemParams& params,
                                         const std::vector<double>& gammas, const Field& g0,
                                         const PathOpts& opts = {},
                                         const LegProbeFactory& probe_factory = {}) {
    params.validate();
    require(!gammas.empty(), "path: empty gamma schedule");
    for (std::size_t i = 0; i < gammas.size(); ++i) {
        require(gammas[i] > 0.0, "path: gamma values must be > 0");
        if (i > 0) require(gammas[i] < gammas[i - 1], "path: schedule must be strictly decreasing");
    }
    require(in_F(g0, params.grid), "path: g0 must lie in F");

    const MollifierPsi psi(opts.psi_order);
    PathResult out;
    Field anchor = g0;
    Field g_cur = g0;

    for (double gamma : gammas) {
        MollifiedBeta bg(params.beta, psi, gamma);
        ProblemView pv(params);
        pv.beta = &bg;
        pv.prox_anchor = &anchor;
        pv.prox_weight = opts.prox_weight;

        ViProbe probe = probe_factory ? probe_factory(pv) : ViProbe{};
        OptimizeResult leg = optimize_view(pv, g_cur, opts.inner, probe);

        PathPoint pt;
        pt.gamma = gamma;
        pt.g = leg.g;
        pt.y = leg.y;
        pt.j = leg.j;
        pt.certified = probe ? leg.certified : !leg.stalled;
        pt.zeta.resize(leg.y.size());
        for (Eigen::Index k = 0; k < leg.y.size(); ++k) pt.zeta[k] = bg.d_plus(leg.y[k]);

        pt.p = solve_adjoint(params.grid, params.epsilon, leg.g, pt.zeta,
                             tracking_rhs(params, leg.y), params.solver.tol);

        const bool ok = pt.certified;
        out.points.push_back(std::move(pt));
        if (!ok) {
            out.truncated = true;
            break;
        }
        anchor = out.points.back().g;
        g_cur = out.points.back().g;
    }
    return out;
}

}  // namespace nscert
