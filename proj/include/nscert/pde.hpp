#pragma once

#include "nscert/beta.hpp"
#include "nscert/grid.hpp"
#include "nscert/heaviside.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <cmath>
#include <stdexcept>
#include <utility>

namespace nscert {

struct SolveReport {
    int iterations = 0;
    double final_residual = 0.0;  // sup-norm of the nonlinear residual
    bool converged = false;
    int damping_events = 0;
};

struct SolverOpts {
    double tol = 1e-10;  // sup-norm residual target
    int max_iter = 50;
    double armijo = 1e-4;
};

enum class ZetaKind { AtLimitOfMollified, Midpoint, LeftDerivative, RightDerivative };

struct ZetaPolicy {
    ZetaKind kind = ZetaKind::Midpoint;
    // pointwise distance to the kink set below which a node counts as
    // non-smooth; <= 0 means the default 1e-8 * (1 + |y|_inf)
    double kink_tolerance = 0.0;
};

inline double default_kink_tol(const Field& y) { return 1e-8 * (1.0 + y.lpNorm<Eigen::Infinity>()); }

using SpMat = Eigen::SparseMatrix<double>;

/// Sparse 5-point -Delta_h with homogeneous Dirichlet boundary.
inline SpMat assemble_neg_laplacian(const Grid2D& g) {
    const double ih2 = 1.0 / (g.h * g.h);
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(static_cast<std::size_t>(5) * g.num_nodes());
    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i) {
            const int k = g.node_index(i, j);
            trips.emplace_back(k, k, 4.0 * ih2);
            if (i > 0) trips.emplace_back(k, k - 1, -ih2);
            if (i + 1 < g.nx) trips.emplace_back(k, k + 1, -ih2);
            if (j > 0) trips.emplace_back(k, k - g.nx, -ih2);
            if (j + 1 < g.ny) trips.emplace_back(k, k + g.nx, -ih2);
        }
    SpMat A(g.num_nodes(), g.num_nodes());
    A.setFromTriplets(trips.begin(), trips.end());
    return A;
}

namespace detail {

inline Eigen::VectorXd spd_solve(const SpMat& M, const Eigen::VectorXd& rhs) {
    Eigen::SimplicialLDLT<SpMat> ldlt(M);
    if (ldlt.info() != Eigen::Success)
        throw std::runtime_error("pde: sparse factorization failed");
    return ldlt.solve(rhs);
}

// Damped semismooth Newton for R(x) = A x + n(x) + c.*x - rhs, where the
// pointwise nonlinearity n and its generalized slope are supplied by the
// caller.  The generalized Jacobian A + diag(slope + c) is SPD since all
// slopes and c are >= 0.
template <class ValueFn, class SlopeFn>
std::pair<Field, SolveReport> semismooth_newton(const SpMat& A, const Field& c,
                                                const Field& rhs, const SolverOpts& opts,
                                                Field x, ValueFn&& nl_value,
                                                SlopeFn&& nl_slope) {
    const Eigen::Index n = rhs.size();
    SolveReport rep;

    auto residual = [&](const Field& v) -> Field {
        Field r = A * v - rhs;
        for (Eigen::Index k = 0; k < n; ++k) r[k] += nl_value(k, v[k]) + c[k] * v[k];
        return r;
    };

    Field R = residual(x);
    for (rep.iterations = 0; rep.iterations < opts.max_iter; ++rep.iterations) {
        rep.final_residual = R.lpNorm<Eigen::Infinity>();
        if (rep.final_residual <= opts.tol) {
            rep.converged = true;
            return {std::move(x), rep};
        }
        SpMat J = A;
        for (Eigen::Index k = 0; k < n; ++k) J.coeffRef(k, k) += nl_slope(k, x[k]) + c[k];
        const Field d = spd_solve(J, -R);

        const double phi0 = 0.5 * R.squaredNorm();
        double sigma = 1.0;
        Field x_new = x + d;
        Field R_new = residual(x_new);
        while (0.5 * R_new.squaredNorm() > (1.0 - 2.0 * opts.armijo * sigma) * phi0) {
            sigma *= 0.5;
            if (sigma < 1e-16) break;
            x_new = x + sigma * d;
            R_new = residual(x_new);
        }
        if (sigma < 1e-16) break;  // line search failed, report below
        if (sigma < 1.0) ++rep.damping_events;
        x = std::move(x_new);
        R = std::move(R_new);
    }
    rep.final_residual = R.lpNorm<Eigen::Infinity>();
    rep.converged = rep.final_residual <= opts.tol;
    return {std::move(x), rep};
}

}  // namespace detail

/// Solves -Delta_h y + beta(y) + (1/eps) H_eps(g) y = f + eps g.
/// The problem is monotone, so the solution is independent of the initial
/// guess; pass one to warm-start.
inline std::pair<Field, SolveReport> solve_state(const Grid2D& grid, const Nonlinearity& beta,
                                                 double eps, const Field& g, const Field& f,
                                                 const SolverOpts& opts = {},
                                                 const Field* y0 = nullptr) {
    require_eps(eps);
    check_field(grid, g, "solve_state");
    check_field(grid, f, "solve_state");
    const SpMat A = assemble_neg_laplacian(grid);
    const Field c = h_eps_field(g, eps) / eps;
    const Field rhs = f + eps * g;
    Field start = y0 ? *y0 : Field::Zero(grid.num_nodes());
    return detail::semismooth_newton(
        A, c, rhs, opts, std::move(start),
        [&](Eigen::Index, double v) { return beta.value(v); },
        [&](Eigen::Index, double v) { return beta.d_plus(v); });
}

/// Solves the directional-derivative equation at (g, y = S(g)):
///   -Delta_h u + beta'(y; u) + (1/eps) H_eps(g) u = eps h - (1/eps) H_eps'(g) y h.
/// beta'(y; u) is piecewise linear in u at kink nodes; the same damped
/// semismooth Newton applies (both one-sided slopes are >= 0).
inline std::pair<Field, SolveReport> solve_linearized(const Grid2D& grid,
                                                      const Nonlinearity& beta, double eps,
                                                      const Field& g, const Field& y,
                                                      const Field& h,
                                                      const SolverOpts& opts = {}) {
    require_eps(eps);
    check_field(grid, g, "solve_linearized");
    check_field(grid, y, "solve_linearized");
    check_field(grid, h, "solve_linearized");
    const SpMat A = assemble_neg_laplacian(grid);
    const Field c = h_eps_field(g, eps) / eps;
    Field rhs = eps * h;
    {
        const Field hp = h_eps_prime_field(g, eps);
        for (int k = 0; k < grid.num_nodes(); ++k) rhs[k] -= hp[k] * y[k] * h[k] / eps;
    }
    Field dp(grid.num_nodes()), dm(grid.num_nodes());
    for (int k = 0; k < grid.num_nodes(); ++k) {
        dp[k] = beta.d_plus(y[k]);
        dm[k] = beta.d_minus(y[k]);
    }
    return detail::semismooth_newton(
        A, c, rhs, opts, Field::Zero(grid.num_nodes()),
        [&](Eigen::Index k, double u) { return u >= 0.0 ? dp[k] * u : dm[k] * u; },
        [&](Eigen::Index k, double u) { return u >= 0.0 ? dp[k] : dm[k]; });
}

/// Measurable selection zeta(x) in [min(beta'-, beta'+)(y(x)), max(...)].
/// Smooth nodes always get the exact slope; kink-band nodes follow the
/// policy.
inline Field select_zeta(const PiecewiseLinearBeta& beta, const Field& y,
                         const ZetaPolicy& policy = {}) {
    double tol = policy.kink_tolerance > 0.0 ? policy.kink_tolerance : default_kink_tol(y);
    // the detection band must stay inside (0, delta/4) so it never spans
    // two kink neighborhoods
    if (!beta.breakpoints().empty()) tol = std::min(tol, 0.25 * beta.delta() * (1.0 - 1e-12));
    Field zeta(y.size());
    const auto& bp = beta.breakpoints();
    const auto& sl = beta.slopes();

    static const MollifierPsi psi;  // only used by AtLimitOfMollified
    const double gamma_ref = bp.empty() ? 0.0 : beta.delta() / 8.0;

    for (Eigen::Index k = 0; k < y.size(); ++k) {
        const double v = y[k];
        std::size_t nearest = 0;
        double dist = std::numeric_limits<double>::infinity();
        for (std::size_t b = 0; b < bp.size(); ++b)
            if (std::abs(v - bp[b]) < dist) {
                dist = std::abs(v - bp[b]);
                nearest = b;
            }
        if (dist > tol) {
            zeta[k] = beta.d_plus(v);
            continue;
        }
        const double ml = sl[nearest], mr = sl[nearest + 1];
        switch (policy.kind) {
            case ZetaKind::Midpoint: zeta[k] = 0.5 * (ml + mr); break;
            case ZetaKind::LeftDerivative: zeta[k] = ml; break;
            case ZetaKind::RightDerivative: zeta[k] = mr; break;
            case ZetaKind::AtLimitOfMollified:
                zeta[k] = mollify_deriv(beta, psi, gamma_ref, bp[nearest]);
                break;
        }
    }
    return zeta;
}

/// Admissible multiplier interval at state value v, widened to the kink's
/// slope hull when v lies within tol of a breakpoint.
inline std::pair<double, double> clarke_interval(const PiecewiseLinearBeta& beta, double v,
                                                 double tol) {
    const auto& bp = beta.breakpoints();
    const auto& sl = beta.slopes();
    for (std::size_t b = 0; b < bp.size(); ++b)
        if (std::abs(v - bp[b]) <= tol)
            return {std::min(sl[b], sl[b + 1]), std::max(sl[b], sl[b + 1])};
    const double m = beta.d_plus(v);
    return {m, m};
}

/// Linear SPD adjoint solve: (-Delta_h + zeta + (1/eps) H_eps(g)) p = rhs.
inline Field solve_adjoint(const Grid2D& grid, double eps, const Field& g, const Field& zeta,
                           const Field& rhs, double tol = 1e-10) {
    require_eps(eps);
    check_field(grid, g, "solve_adjoint");
    check_field(grid, zeta, "solve_adjoint");
    check_field(grid, rhs, "solve_adjoint");
    for (int k = 0; k < grid.num_nodes(); ++k)
        if (zeta[k] < 0.0)
            throw std::invalid_argument("solve_adjoint: zeta must be >= 0 pointwise");
    SpMat M = assemble_neg_laplacian(grid);
    const Field c = h_eps_field(g, eps) / eps;
    for (int k = 0; k < grid.num_nodes(); ++k) M.coeffRef(k, k) += zeta[k] + c[k];
    const Field p = detail::spd_solve(M, rhs);
    const double res = (M * p - rhs).lpNorm<Eigen::Infinity>();
    const double scale = 1.0 + rhs.lpNorm<Eigen::Infinity>();
    if (res > std::max(tol, 1e-12 * scale) * scale)
        throw std::runtime_error("solve_adjoint: direct solve residual above tolerance");
    return p;
}

}  // namespace nscert
