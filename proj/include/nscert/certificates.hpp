#pragma once

#include "nscert/beta.hpp"
#include "nscert/grid.hpp"
#include "nscert/heaviside.hpp"
#include "nscert/objective.hpp"
#include "nscert/pde.hpp"
#include "nscert/wspace.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace nscert {

/// Certificate tolerances, one order above the solver tolerance so solver
/// noise never triggers violations.  Non-positive tol_A / tol_N select the
/// scale-aware defaults.
struct CertTols {
    double tol_A = 0.0;       // default 1e-8 * (1 + |g|_inf)
    double tol_N = 0.0;       // default 1e-8 * (1 + |y|_inf)
    double tol_p = 1e-7;      // adjoint sign tolerance
    double tol_w = 1e-6;      // CQ denominator near-zero band
    double tol_sys = 1e-8;    // adjoint equation residual
    double tol_kkt = 1e-6;    // interior equality residual
    double vi_accept = 1e-6;  // normalized VI acceptance
};

struct ActiveSets {
    NodeMask A;          // {x in E : |g(x)| <= tol_A}
    NodeMask A_closure;  // dilation of A by 1.5 h (discrete closure)
    NodeMask Dn_convex;  // state within tol_N of a convex kink
    NodeMask Dn_concave;
    double tol_A = 0.0;
    double tol_N = 0.0;
};

inline ActiveSets detect_sets(const ProblemParams& params, const Field& g, const Field& y,
                              double tol_A = 0.0, double tol_N = 0.0) {
    require(tol_A >= 0.0 && tol_N >= 0.0, "detect_sets: tolerances must be >= 0");
    const Grid2D& gr = params.grid;
    check_field(gr, g, "detect_sets");
    check_field(gr, y, "detect_sets");
    ActiveSets s;
    s.tol_A = tol_A > 0.0 ? tol_A : 1e-8 * (1.0 + g.lpNorm<Eigen::Infinity>());
    s.tol_N = tol_N > 0.0 ? tol_N : default_kink_tol(y);
    // keep kink bands inside their disjoint neighborhoods so the convex and
    // concave sets cannot meet
    if (!params.beta.breakpoints().empty())
        s.tol_N = std::min(s.tol_N, 0.25 * params.beta.delta());

    auto blank = [&gr] {
        NodeMask m;
        m.nx = gr.nx;
        m.ny = gr.ny;
        m.on.assign(static_cast<std::size_t>(gr.nx) * gr.ny, 0);
        return m;
    };
    s.A = blank();
    s.Dn_convex = blank();
    s.Dn_concave = blank();

    const auto& bp = params.beta.breakpoints();
    const auto& sl = params.beta.slopes();
    for (int k = 0; k < gr.num_nodes(); ++k) {
        if (gr.node_in_E(k) && std::abs(g[k]) <= s.tol_A)
            s.A.on[static_cast<std::size_t>(k)] = 1;
        for (std::size_t b = 0; b < bp.size(); ++b)
            if (std::abs(y[k] - bp[b]) <= s.tol_N) {
                if (sl[b + 1] > sl[b])
                    s.Dn_convex.on[static_cast<std::size_t>(k)] = 1;
                else
                    s.Dn_concave.on[static_cast<std::size_t>(k)] = 1;
            }
    }
    s.A_closure = dilate_mask(gr, s.A, 1.5 * gr.h);
    return s;
}

// ---------------------------------------------------------------------------
// sampled B-stationarity
// ---------------------------------------------------------------------------

struct ViResult {
    double vi_min = 0.0;             // worst normalized VI value over the samples
    Field worst_direction;           // the h achieving it
    int worst_index = -1;
    int n_evaluated = 0;
    std::uint64_t seed = 0;
};

namespace detail {

inline double canonical_u01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline Field smooth_random_field(const Grid2D& g, std::mt19937_64& rng, double amplitude) {
    double c[4][4];
    for (auto& row : c)
        for (double& v : row) v = amplitude * (2.0 * canonical_u01(rng) - 1.0);
    const double lx = g.domain.width(), ly = g.domain.height();
    return field_from(g, [&](double x, double y) {
        const double xi = (x - g.domain.x0) / lx, eta = (y - g.domain.y0) / ly;
        double s = 0.0;
        for (int m = 1; m <= 4; ++m)
            for (int n = 1; n <= 4; ++n)
                s += c[m - 1][n - 1] * std::sin(m * M_PI * xi) * std::sin(n * M_PI * eta);
        return s;
    });
}

/// Deterministic mix of feasible candidate points h in F around g_bar:
/// anchors (0, g_sh), sign-flip and unit shifts of g_bar, gradient steps at
/// several lengths, then cycles of smooth random fields and node spikes.
inline std::vector<Field> sample_feasible_points(const Grid2D& gr, const Field& g_bar,
                                                 const Field& g_sh, const Field& grad,
                                                 int n_samples, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<Field> dirs;
    dirs.reserve(static_cast<std::size_t>(n_samples));
    auto push = [&](Field h) {
        if (static_cast<int>(dirs.size()) < n_samples) dirs.push_back(std::move(h));
    };

    push(Field::Zero(gr.num_nodes()));
    push(g_sh);
    push(project_F(-g_bar, gr));
    push(project_F(g_bar + constant_field(gr, 1.0), gr));
    push(project_F(g_bar - constant_field(gr, 1.0), gr));
    for (double t : {0.1, 1.0, 10.0, 100.0, 1e3, 1e4, 1e5})
        push(project_F(g_bar - t * grad, gr));

    const double spike_amps[] = {1.0, 10.0, 100.0, 1000.0};
    const double smooth_amps[] = {0.5, 2.0, 8.0};
    int family = 0, spike_i = 0, smooth_i = 0;
    while (static_cast<int>(dirs.size()) < n_samples) {
        switch (family % 3) {
            case 0: {
                const Field r = smooth_random_field(gr, rng, smooth_amps[smooth_i++ % 3]);
                push(project_F(g_bar + r, gr));
                break;
            }
            case 1: {
                const Field r = smooth_random_field(gr, rng, smooth_amps[smooth_i++ % 3]);
                push(project_F(r, gr));
                break;
            }
            case 2: {
                const int k = static_cast<int>(canonical_u01(rng) * gr.num_nodes());
                const double sgn = canonical_u01(rng) < 0.5 ? -1.0 : 1.0;
                Field h = g_bar;
                h[std::min(k, gr.num_nodes() - 1)] += sgn * spike_amps[spike_i++ % 4];
                push(project_F(h, gr));
                break;
            }
        }
        ++family;
    }
    return dirs;
}

}  // namespace detail

/// Samples the variational inequality
///   (2 chi~_E (y - y_d), S'(g; h-g))_h - (alpha H'_eps(g), h-g)_h
///     + (g - g_sh, h-g)_W  >= 0   for all h in F
/// over a deterministic mix of feasible directions and returns the
/// normalized minimum.  Directions: the anchors (0, g_sh), sign-flips and
/// constant shifts of g, first-variation (projected gradient) steps at
/// several lengths, smooth random fields and node spikes, all clamped
/// into F.  h = g contributes exactly 0 and is excluded from the minimum.
inline ViResult check_vi_view(const ProblemView& pv, const Field& g_bar, int n_samples,
                              std::uint64_t seed, int jobs = 1) {
    const ProblemParams& p = *pv.p;
    const Grid2D& gr = p.grid;
    check_field(gr, g_bar, "check_vi");
    require(n_samples >= 1, "check_vi: need at least one sample");
    require(in_F(g_bar, gr, 1e-12 * (1.0 + g_bar.lpNorm<Eigen::Infinity>())),
            "check_vi: candidate must lie in F");

    auto [y, rep] = detail::state_of(pv, g_bar);
    if (!rep.converged) throw std::runtime_error("check_vi: state solver did not converge");

    const Field track = tracking_rhs(p, y);
    const Field hp = h_eps_prime_field(g_bar, p.epsilon);
    const Field dg_sh = g_bar - p.g_sh;

    // first-variation data for the gradient-informed direction family
    const FirstVariation fv = first_variation_view(pv, g_bar, {}, &y);
    const Field grad = w_gradient(pv, g_bar, fv);

    const std::vector<Field> dirs =
        detail::sample_feasible_points(gr, g_bar, p.g_sh, grad, n_samples, seed);

    // Evaluate all sampled directions; the VI value of direction i is
    // order-independent, so the min-reduction below is deterministic for
    // any job count (ties break to the lowest index).
    const std::size_t n_dirs = dirs.size();
    std::vector<double> values(n_dirs, std::numeric_limits<double>::quiet_NaN());
    std::vector<std::uint8_t> is_zero(n_dirs, 0);
    std::string worker_error;
    std::mutex err_mutex;

    auto evaluate = [&](std::size_t begin, std::size_t end) {
        try {
            for (std::size_t idx = begin; idx < end; ++idx) {
                const Field dir = dirs[idx] - g_bar;
                if (dir.lpNorm<Eigen::Infinity>() == 0.0) {
                    is_zero[idx] = 1;
                    continue;  // h = g contributes exactly 0
                }
                auto [u, lrep] =
                    solve_linearized(gr, pv.nl(), p.epsilon, g_bar, y, dir, p.solver);
                if (!lrep.converged)
                    throw std::runtime_error("check_vi: linearized solver did not converge");
                double val = inner_h(gr, track, u);
                for (int k = 0; k < gr.num_nodes(); ++k)
                    val -= p.alpha * hp[k] * dir[k] * gr.h * gr.h;
                val += w_inner(p.wgram(), dg_sh, dir);
                if (pv.prox_anchor && pv.prox_weight > 0.0)
                    val += pv.prox_weight * w_inner(p.wgram(), g_bar - *pv.prox_anchor, dir);
                values[idx] = val / (1.0 + norm_w(p.wgram(), dir));
            }
        } catch (const std::exception& e) {
            std::lock_guard<std::mutex> lock(err_mutex);
            if (worker_error.empty()) worker_error = e.what();
        }
    };

    const int nthreads = std::max(1, std::min<int>(jobs, static_cast<int>(n_dirs)));
    if (nthreads <= 1) {
        evaluate(0, n_dirs);
    } else {
        std::vector<std::thread> pool;
        const std::size_t chunk = (n_dirs + nthreads - 1) / nthreads;
        for (int t = 0; t < nthreads; ++t) {
            const std::size_t b = static_cast<std::size_t>(t) * chunk;
            if (b >= n_dirs) break;
            pool.emplace_back(evaluate, b, std::min(n_dirs, b + chunk));
        }
        for (auto& th : pool) th.join();
    }
    if (!worker_error.empty()) throw std::runtime_error(worker_error);

    ViResult out;
    out.seed = seed;
    out.n_evaluated = static_cast<int>(n_dirs);
    out.vi_min = std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t idx = 0; idx < n_dirs; ++idx) {
        if (is_zero[idx]) {
            if (n_samples == 1) {
                out.vi_min = 0.0;
                out.worst_direction = dirs[idx];
                out.worst_index = static_cast<int>(idx);
                any = true;
            }
            continue;
        }
        if (!any || values[idx] < out.vi_min) {
            any = true;
            out.vi_min = values[idx];
            out.worst_direction = dirs[idx];
            out.worst_index = static_cast<int>(idx);
        }
    }
    if (!any) {
        out.vi_min = 0.0;
        out.worst_direction = g_bar;
    }
    return out;
}

inline ViResult check_vi(const ProblemParams& params, const Field& g_bar, int n_samples,
                         std::uint64_t seed, int jobs = 1) {
    params.validate();
    return check_vi_view(ProblemView(params), g_bar, n_samples, seed, jobs);
}

struct DualViResult {
    double vi_min = 0.0;
    Field worst_direction;
    int worst_index = -1;
    int n_evaluated = 0;
};

/// Sampled form of the gradient inequality of the optimality system for a
/// GIVEN first-variation density q: minimum over feasible h of
///   (q, h-g)_h + (g - g_sh, h-g)_W,  normalized by 1 + |h-g|_W.
/// Purely algebraic (no PDE solves); with the density of a true adjoint it
/// coincides with the primal VI wherever the chain rule is exact, and with
/// a corrupted adjoint its negative directions expose the breach.
inline DualViResult check_dual_vi(const ProblemParams& params, const Field& g_bar,
                                  const Field& q, int n_samples, std::uint64_t seed) {
    const Grid2D& gr = params.grid;
    check_field(gr, g_bar, "check_dual_vi");
    check_field(gr, q, "check_dual_vi");
    const WGram& gram = params.wgram();
    const Field dg_sh = g_bar - params.g_sh;
    const Field grad = riesz(gram, q) + dg_sh;
    const std::vector<Field> dirs =
        detail::sample_feasible_points(gr, g_bar, params.g_sh, grad, n_samples, seed);

    DualViResult out;
    out.vi_min = std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t idx = 0; idx < dirs.size(); ++idx) {
        const Field dir = dirs[idx] - g_bar;
        ++out.n_evaluated;
        if (dir.lpNorm<Eigen::Infinity>() == 0.0) continue;
        double val = inner_h(gr, q, dir) + w_inner(gram, dg_sh, dir);
        val /= 1.0 + norm_w(gram, dir);
        if (!any || val < out.vi_min) {
            any = true;
            out.vi_min = val;
            out.worst_direction = dirs[idx];
            out.worst_index = static_cast<int>(idx);
        }
    }
    if (!any) {
        out.vi_min = 0.0;
        out.worst_direction = g_bar;
    }
    return out;
}

// ---------------------------------------------------------------------------
// optimality-system residuals
// ---------------------------------------------------------------------------

struct SystemCheck {
    double sys_residual = 0.0;           // sup-norm adjoint equation residual
    double zeta_violation = 0.0;         // measure where the multiplier interval fails
    double zeta_violation_band = 0.0;
    double kkt_interior_residual = 0.0;  // sup of |q + (g - g_sh)| on E \ A
    double off_e_w_residual = 0.0;       // W-weak residual of the D\E component
    double sp_chain_violation = 0.0;     // measure of {x in A : eps p > g_sh + tol_p}
    double sp_chain_band = 0.0;
};

inline SystemCheck check_system(const ProblemParams& params, const Field& g_bar,
                                const Field& y_bar, const Field& p_adj, const Field& zeta,
                                const ActiveSets& sets, const CertTols& tols = {}) {
    const Grid2D& gr = params.grid;
    check_field(gr, g_bar, "check_system");
    check_field(gr, y_bar, "check_system");
    check_field(gr, p_adj, "check_system");
    check_field(gr, zeta, "check_system");

    SystemCheck out;

    // adjoint residual with the supplied fields
    {
        const Field lap = apply_laplacian(gr, p_adj);
        const Field c = h_eps_field(g_bar, params.epsilon) / params.epsilon;
        const Field rhs = tracking_rhs(params, y_bar);
        double r = 0.0;
        for (int k = 0; k < gr.num_nodes(); ++k)
            r = std::max(r, std::abs(lap[k] + zeta[k] * p_adj[k] + c[k] * p_adj[k] - rhs[k]));
        out.sys_residual = r;
    }

    const double tol_N = tols.tol_N > 0.0 ? tols.tol_N : default_kink_tol(y_bar);
    const double zslack = 1e-12 * (1.0 + params.beta.lipschitz());
    NodeMask zviol;
    zviol.nx = gr.nx;
    zviol.ny = gr.ny;
    zviol.on.assign(static_cast<std::size_t>(gr.num_nodes()), 0);
    for (int k = 0; k < gr.num_nodes(); ++k) {
        const auto [lo, hi] = clarke_interval(params.beta, y_bar[k], tol_N);
        if (zeta[k] < lo - zslack || zeta[k] > hi + zslack)
            zviol.on[static_cast<std::size_t>(k)] = 1;
    }
    out.zeta_violation = gr.measure(zviol);
    out.zeta_violation_band = gr.measure_band(zviol);

    const Field q = q_density(params, g_bar, y_bar, p_adj);

    // interior equality on E \ A
    for (int k = 0; k < gr.num_nodes(); ++k)
        if (gr.node_in_E(k) && !sets.A.on[static_cast<std::size_t>(k)])
            out.kkt_interior_residual =
                std::max(out.kkt_interior_residual, std::abs(q[k] + g_bar[k] - params.g_sh[k]));

    // weak residual of the off-E gradient equality against smooth probes
    {
        const WGram& gram = params.wgram();
        const Field dg = g_bar - params.g_sh;
        const double lx = gr.domain.width(), ly = gr.domain.height();
        for (int m = 1; m <= 4; ++m)
            for (int n = 1; n <= 4; ++n) {
                Field v = field_from(gr, [&](double x, double y) {
                    return std::sin(m * M_PI * (x - gr.domain.x0) / lx) *
                           std::sin(n * M_PI * (y - gr.domain.y0) / ly);
                });
                for (int k = 0; k < gr.num_nodes(); ++k)
                    if (gr.node_in_E(k)) v[k] = 0.0;
                const double nv = norm_w(gram, v);
                if (nv == 0.0) continue;
                const double r = std::abs(inner_h(gr, q, v) + w_inner(gram, dg, v)) / nv;
                out.off_e_w_residual = std::max(out.off_e_w_residual, r);
            }
    }

    // active-set inequality chain  eps p <= g_sh (<= 0)
    NodeMask spviol;
    spviol.nx = gr.nx;
    spviol.ny = gr.ny;
    spviol.on.assign(static_cast<std::size_t>(gr.num_nodes()), 0);
    for (int k = 0; k < gr.num_nodes(); ++k)
        if (sets.A.on[static_cast<std::size_t>(k)] &&
            params.epsilon * p_adj[k] > params.g_sh[k] + tols.tol_p)
            spviol.on[static_cast<std::size_t>(k)] = 1;
    out.sp_chain_violation = gr.measure(spviol);
    out.sp_chain_band = gr.measure_band(spviol);

    return out;
}

struct SignCheck {
    double violation_convex = 0.0;   // mu{p > tol_p on Dn_convex \ A_closure}
    double violation_concave = 0.0;  // mu{p < -tol_p on Dn_concave \ A_closure}
    double violation_active = 0.0;   // mu{p > tol_p on A}
    double band_convex = 0.0;
    double band_concave = 0.0;
    double band_active = 0.0;
    // strengthened variant on the full kink sets, evaluated when mu(A) <= h^2
    bool strengthened_evaluated = false;
    double violation_convex_full = 0.0;
    double violation_concave_full = 0.0;
};

inline SignCheck check_signs(const Grid2D& gr, const Field& p_adj, const ActiveSets& sets,
                             double tol_p = 1e-7) {
    require(tol_p > 0.0, "check_signs: tol_p must be > 0");
    check_field(gr, p_adj, "check_signs");
    SignCheck out;
    auto blank = [&gr] {
        NodeMask m;
        m.nx = gr.nx;
        m.ny = gr.ny;
        m.on.assign(static_cast<std::size_t>(gr.nx) * gr.ny, 0);
        return m;
    };
    NodeMask conv = blank(), conc = blank(), act = blank(), convf = blank(), concf = blank();
    for (int k = 0; k < gr.num_nodes(); ++k) {
        const auto ku = static_cast<std::size_t>(k);
        const bool in_closure = sets.A_closure.on[ku] != 0;
        if (sets.Dn_convex.on[ku] && !in_closure && p_adj[k] > tol_p) conv.on[ku] = 1;
        if (sets.Dn_concave.on[ku] && !in_closure && p_adj[k] < -tol_p) conc.on[ku] = 1;
        if (sets.A.on[ku] && p_adj[k] > tol_p) act.on[ku] = 1;
        if (sets.Dn_convex.on[ku] && p_adj[k] > tol_p) convf.on[ku] = 1;
        if (sets.Dn_concave.on[ku] && p_adj[k] < -tol_p) concf.on[ku] = 1;
    }
    out.violation_convex = gr.measure(conv);
    out.violation_concave = gr.measure(conc);
    out.violation_active = gr.measure(act);
    out.band_convex = gr.measure_band(conv);
    out.band_concave = gr.measure_band(conc);
    out.band_active = gr.measure_band(act);
    if (gr.measure(sets.A) <= gr.h * gr.h) {
        out.strengthened_evaluated = true;
        out.violation_convex_full = gr.measure(convf);
        out.violation_concave_full = gr.measure(concf);
    }
    return out;
}

struct CqHaCheck {
    double near_zero_measure = 0.0;  // mu{|(1/eps) H'_eps(g) y - eps| <= tol_w} on D\E-closure
    double integral_value = 0.0;     // h^2 sum of 1/w^2 over the remaining cells
    double band = 0.0;
    int excluded_cells = 0;  // cells inside the near-zero band (flagged)
};

/// First constraint qualification: the H'_eps-denominator must stay away
/// from zero on D minus closure(E) and its inverse square must integrate.
inline CqHaCheck check_cq_ha(const ProblemParams& params, const Field& g_bar,
                             const Field& y_bar, double tol_w = 1e-6) {
    require(tol_w > 0.0, "check_cq_ha: tol_w must be > 0");
    const Grid2D& gr = params.grid;
    check_field(gr, g_bar, "check_cq_ha");
    check_field(gr, y_bar, "check_cq_ha");

    // Interpolate the product H'_eps(g) y, which extends by zero across dD
    // exactly (the state does); w itself equals -eps there, not -eps/2.
    Field hy(gr.num_nodes());
    for (int k = 0; k < gr.num_nodes(); ++k)
        hy[k] = h_eps_prime(g_bar[k], params.epsilon) * y_bar[k] / params.epsilon;

    CqHaCheck out;
    CellMask near;
    near.cnx = gr.nx + 1;
    near.cny = gr.ny + 1;
    near.on.assign(static_cast<std::size_t>(near.cnx) * near.cny, 0);
    long double acc = 0.0L;
    for (int cj = 0; cj <= gr.ny; ++cj)
        for (int ci = 0; ci <= gr.nx; ++ci) {
            const std::size_t c = static_cast<std::size_t>(cj) * (gr.nx + 1) + ci;
            if (!gr.mask_DE.on[c]) continue;
            const double wc = detail::cell_center_value(gr, hy, ci, cj) - params.epsilon;
            if (std::abs(wc) <= tol_w) {
                near.on[c] = 1;
                ++out.excluded_cells;
            } else {
                acc += 1.0L / (static_cast<long double>(wc) * wc);
            }
        }
    out.near_zero_measure = gr.measure(near);
    out.band = gr.measure_band(near);
    out.integral_value = static_cast<double>(acc) * gr.h * gr.h;
    return out;
}

/// Second constraint qualification:
///   mu[(Dn_convex cap (A_closure \ A)) cup (Dn_concave cap A_closure)] = 0.
inline std::pair<double, double> check_cq_cc(const Grid2D& gr, const ActiveSets& sets) {
    NodeMask bad;
    bad.nx = gr.nx;
    bad.ny = gr.ny;
    bad.on.assign(static_cast<std::size_t>(gr.nx) * gr.ny, 0);
    for (int k = 0; k < gr.num_nodes(); ++k) {
        const auto ku = static_cast<std::size_t>(k);
        const bool ring = sets.A_closure.on[ku] && !sets.A.on[ku];
        if ((sets.Dn_convex.on[ku] && ring) ||
            (sets.Dn_concave.on[ku] && sets.A_closure.on[ku]))
            bad.on[ku] = 1;
    }
    return {gr.measure(bad), gr.measure_band(bad)};
}

struct DataConditionCheck {
    bool ok = false;
    bool ok_on_E = false;       // esssup_E f <= beta(0)
    bool ok_on_DE = false;      // esssup_{D \ E-closure} f < beta(0), strictly
    double margin_E = 0.0;      // beta(0) - max_E f
    double margin_DE = 0.0;     // beta(0) - max_{D \ E-closure} f
    double state_max = std::numeric_limits<double>::quiet_NaN();  // max node of S(g_sh)
    bool state_solved = false;
};

/// The sign condition on the data: if f <= beta(0) on E and
/// f < beta(0) off E-closure, the state at any feasible control is <= 0.
/// Solves the state at the anchor g_sh (feasible by construction) and
/// reports its maximum node value as the witness.
inline DataConditionCheck check_data_condition(const ProblemParams& params) {
    const Grid2D& gr = params.grid;
    DataConditionCheck out;
    const double b0 = params.beta.value_at_zero();
    double max_E = -std::numeric_limits<double>::infinity();
    double max_DE = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < gr.ny; ++j)
        for (int i = 0; i < gr.nx; ++i) {
            const int k = gr.node_index(i, j);
            const double x = gr.node_x(i), y = gr.node_y(j);
            if (gr.e_rect.contains_strict(x, y))
                max_E = std::max(max_E, params.f[k]);
            else if (!gr.e_rect.contains_closed(x, y))
                max_DE = std::max(max_DE, params.f[k]);
        }
    out.margin_E = b0 - max_E;
    out.margin_DE = b0 - max_DE;
    out.ok_on_E = max_E <= b0;
    out.ok_on_DE = max_DE < b0;
    out.ok = out.ok_on_E && out.ok_on_DE;
    if (out.ok && in_F(params.g_sh, gr)) {
        auto [y, rep] = solve_state(gr, params.beta, params.epsilon, params.g_sh, params.f,
                                    params.solver);
        if (rep.converged) {
            out.state_solved = true;
            out.state_max = y.maxCoeff();
        }
    }
    return out;
}

struct EquivalenceCheck {
    bool ok = false;
    double des_violation = 0.0;  // measure where zeta p leaves [beta'+ p, beta'- p]
    double des_band = 0.0;
    double sys_residual = 0.0;
    double kkt_interior_residual = 0.0;
    double cq_cc_measure = 0.0;
    double vi_min = std::numeric_limits<double>::quiet_NaN();       // primal, S'-based
    double dual_vi_min = std::numeric_limits<double>::quiet_NaN();  // gradient-inequality based
    Field dual_worst_direction;
    int vi_samples = 0;
};

/// Computable core of the equivalence theorem: the ordered bracket
///   beta'_+(y(x)) p(x) <= zeta(x) p(x) <= beta'_-(y(x)) p(x)
/// at every node (this encodes both the multiplier interval and the sign
/// conditions), plus the sampled B-stationarity it implies.  One-sided
/// slopes are taken from the kink hull inside the tol_N band.
inline EquivalenceCheck check_equivalence(const ProblemParams& params, const Field& g_bar,
                                          const Field& y_bar, const Field& p_adj,
                                          const Field& zeta, int n_samples,
                                          std::uint64_t seed = 1u, const CertTols& tols = {},
                                          int jobs = 1) {
    const Grid2D& gr = params.grid;
    EquivalenceCheck out;

    const ActiveSets sets = detect_sets(params, g_bar, y_bar, tols.tol_A, tols.tol_N);
    const SystemCheck sys = check_system(params, g_bar, y_bar, p_adj, zeta, sets, tols);
    out.sys_residual = sys.sys_residual;
    auto [ccm, ccb] = check_cq_cc(gr, sets);
    out.cq_cc_measure = ccm;

    const double tol_N = sets.tol_N;
    const double scale = tols.tol_p * (1.0 + params.beta.lipschitz()) *
                         (1.0 + p_adj.lpNorm<Eigen::Infinity>());
    NodeMask viol;
    viol.nx = gr.nx;
    viol.ny = gr.ny;
    viol.on.assign(static_cast<std::size_t>(gr.num_nodes()), 0);
    const auto& bp = params.beta.breakpoints();
    const auto& sl = params.beta.slopes();
    for (int k = 0; k < gr.num_nodes(); ++k) {
        double dplus, dminus;
        std::size_t nearest = 0;
        double dist = std::numeric_limits<double>::infinity();
        for (std::size_t b = 0; b < bp.size(); ++b)
            if (std::abs(y_bar[k] - bp[b]) < dist) {
                dist = std::abs(y_bar[k] - bp[b]);
                nearest = b;
            }
        if (dist <= tol_N) {
            dminus = sl[nearest];
            dplus = sl[nearest + 1];
        } else {
            dplus = dminus = params.beta.d_plus(y_bar[k]);
        }
        const double zp = zeta[k] * p_adj[k];
        if (zp < dplus * p_adj[k] - scale || zp > dminus * p_adj[k] + scale)
            viol.on[static_cast<std::size_t>(k)] = 1;
    }
    out.des_violation = gr.measure(viol);
    out.des_band = gr.measure_band(viol);

    const ViResult vi = check_vi(params, g_bar, n_samples, seed, jobs);
    out.vi_min = vi.vi_min;
    out.vi_samples = vi.n_evaluated;
    out.kkt_interior_residual = sys.kkt_interior_residual;

    const DualViResult dvi =
        check_dual_vi(params, g_bar, q_density(params, g_bar, y_bar, p_adj), n_samples, seed);
    out.dual_vi_min = dvi.vi_min;
    out.dual_worst_direction = dvi.worst_direction;

    out.ok = out.des_violation == 0.0 && sys.sys_residual <= tols.tol_sys &&
             sys.kkt_interior_residual <= tols.tol_kkt &&
             sys.sp_chain_violation == 0.0 && ccm <= gr.h * gr.h + ccb &&
             vi.vi_min >= -tols.vi_accept && dvi.vi_min >= -tols.vi_accept;
    return out;
}

// ---------------------------------------------------------------------------
// aggregate certificate
// ---------------------------------------------------------------------------

struct StationarityReport {
    // sampled primal condition
    double vi_min = std::numeric_limits<double>::quiet_NaN();
    int vi_samples = 0;
    std::uint64_t seed = 0;
    int vi_worst_index = -1;
    // optimality system residuals
    double sys_residual = 0.0;
    double zeta_violation = 0.0;
    double zeta_violation_band = 0.0;
    double kkt_interior_residual = 0.0;
    double off_e_w_residual = 0.0;
    double sp_chain_violation = 0.0;
    double sp_chain_band = 0.0;
    // adjoint sign conditions
    double sign_violation_convex = 0.0;
    double sign_violation_concave = 0.0;
    double sign_violation_active = 0.0;
    double sign_band_convex = 0.0;
    double sign_band_concave = 0.0;
    double sign_band_active = 0.0;
    // constraint qualifications
    double cq_ha_near_zero = 0.0;
    double cq_ha_integral = 0.0;
    double cq_ha_band = 0.0;
    double cq_cc_measure = 0.0;
    double cq_cc_band = 0.0;
    // data condition
    bool data_condition_ok = false;
    double data_margin_E = 0.0;
    double data_margin_DE = 0.0;
    double data_state_max = std::numeric_limits<double>::quiet_NaN();
    // set sizes (audit)
    double measure_A = 0.0;
    double measure_A_closure = 0.0;
    double measure_A_ring = 0.0;  // A_closure minus A
    double measure_Dn_convex = 0.0;
    double measure_Dn_concave = 0.0;
    double grid_band_unit = 0.0;  // h^2, the single-cell measure quantum
    // equivalence verdict
    bool equivalence_ok = false;
    double des_violation = 0.0;
    bool certified = false;
};

struct CertifyOpts {
    int vi_samples = 1000;
    std::uint64_t seed = 1;
    int jobs = 1;
    CertTols tols;
    bool run_vi = true;
    bool run_equivalence = true;
};

/// Runs every certificate component for a candidate control; y/p/zeta are
/// recomputed when not supplied.  Reports, never throws, on violations.
inline StationarityReport certify(const ProblemParams& params, const Field& g_bar,
                                  const Field* y_in = nullptr, const Field* p_in = nullptr,
                                  const Field* zeta_in = nullptr, const CertifyOpts& opts = {},
                                  Field* worst_direction_out = nullptr) {
    params.validate();
    const Grid2D& gr = params.grid;

    Field y;
    if (y_in) {
        y = *y_in;
    } else {
        auto [ys, rep] = solve_state(gr, params.beta, params.epsilon, g_bar, params.f,
                                     params.solver);
        if (!rep.converged) throw std::runtime_error("certify: state solver did not converge");
        y = ys;
    }
    Field zeta = zeta_in ? *zeta_in : select_zeta(params.beta, y);
    Field p = p_in ? *p_in
                   : solve_adjoint(gr, params.epsilon, g_bar, zeta, tracking_rhs(params, y),
                                   params.solver.tol);

    StationarityReport r;
    r.grid_band_unit = gr.h * gr.h;

    const ActiveSets sets = detect_sets(params, g_bar, y, opts.tols.tol_A, opts.tols.tol_N);
    r.measure_A = gr.measure(sets.A);
    r.measure_A_closure = gr.measure(sets.A_closure);
    r.measure_A_ring = r.measure_A_closure - r.measure_A;
    r.measure_Dn_convex = gr.measure(sets.Dn_convex);
    r.measure_Dn_concave = gr.measure(sets.Dn_concave);

    const SystemCheck sys = check_system(params, g_bar, y, p, zeta, sets, opts.tols);
    r.sys_residual = sys.sys_residual;
    r.zeta_violation = sys.zeta_violation;
    r.zeta_violation_band = sys.zeta_violation_band;
    r.kkt_interior_residual = sys.kkt_interior_residual;
    r.off_e_w_residual = sys.off_e_w_residual;
    r.sp_chain_violation = sys.sp_chain_violation;
    r.sp_chain_band = sys.sp_chain_band;

    const SignCheck sg = check_signs(gr, p, sets, opts.tols.tol_p);
    r.sign_violation_convex = sg.violation_convex;
    r.sign_violation_concave = sg.violation_concave;
    r.sign_violation_active = sg.violation_active;
    r.sign_band_convex = sg.band_convex;
    r.sign_band_concave = sg.band_concave;
    r.sign_band_active = sg.band_active;

    const CqHaCheck ha = check_cq_ha(params, g_bar, y, opts.tols.tol_w);
    r.cq_ha_near_zero = ha.near_zero_measure;
    r.cq_ha_integral = ha.integral_value;
    r.cq_ha_band = ha.band;

    auto [ccm, ccb] = check_cq_cc(gr, sets);
    r.cq_cc_measure = ccm;
    r.cq_cc_band = ccb;

    const DataConditionCheck dc = check_data_condition(params);
    r.data_condition_ok = dc.ok;
    r.data_margin_E = dc.margin_E;
    r.data_margin_DE = dc.margin_DE;
    r.data_state_max = dc.state_max;

    if (opts.run_vi) {
        const ViResult vi = check_vi(params, g_bar, opts.vi_samples, opts.seed, opts.jobs);
        r.vi_min = vi.vi_min;
        r.vi_samples = vi.n_evaluated;
        r.seed = vi.seed;
        r.vi_worst_index = vi.worst_index;
        if (worst_direction_out) *worst_direction_out = vi.worst_direction;
    }
    if (opts.run_equivalence) {
        const EquivalenceCheck eq = check_equivalence(params, g_bar, y, p, zeta,
                                                      opts.run_vi ? opts.vi_samples : 64,
                                                      opts.seed, opts.tols, opts.jobs);
        r.equivalence_ok = eq.ok;
        r.des_violation = eq.des_violation;
    }

    const double band = gr.h * gr.h;
    r.certified = r.sys_residual <= opts.tols.tol_sys &&
                  r.kkt_interior_residual <= opts.tols.tol_kkt &&
                  r.zeta_violation <= band && r.sign_violation_convex <= band &&
                  r.sign_violation_concave <= band && r.sign_violation_active <= band &&
                  r.sp_chain_violation <= band &&
                  (!opts.run_vi || r.vi_min >= -opts.tols.vi_accept);
    return r;
}

/// Node used by the adjoint-perturbation experiment: prefers
/// Dn_convex \ A_closure, then E \ A_closure, then E, choosing the node
/// whose state value is nearest the kink set (lowest index on ties).
inline int pick_perturbation_node(const ProblemParams& params, const ActiveSets& sets,
                                  const Field& y_bar) {
    const Grid2D& gr = params.grid;
    auto nearest = [&](auto&& pred) -> int {
        int best = -1;
        double best_d = std::numeric_limits<double>::infinity();
        for (int k = 0; k < gr.num_nodes(); ++k) {
            if (!pred(k)) continue;
            const double d = params.beta.dist_to_kinks(y_bar[k]);
            if (d < best_d) {
                best_d = d;
                best = k;
            }
        }
        return best;
    };
    int k = nearest([&](int i) {
        const auto iu = static_cast<std::size_t>(i);
        return sets.Dn_convex.on[iu] && !sets.A_closure.on[iu];
    });
    if (k >= 0) return k;
    k = nearest([&](int i) {
        return gr.node_in_E(i) && !sets.A_closure.on[static_cast<std::size_t>(i)];
    });
    if (k >= 0) return k;
    return nearest([&](int i) { return gr.node_in_E(i); });
}

}  // namespace nscert
