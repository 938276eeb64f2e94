#include <catch2/catch_amalgamated.hpp>

#include "nscert/objective.hpp"
#include "nscert/wspace.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <random>

using namespace nscert;

namespace {
Grid2D unit_grid(int n) { return build_grid(n, n, Rect{0, 0, 1, 1}, Rect{0.25, 0.25, 0.75, 0.75}); }
PiecewiseLinearBeta relu() { return PiecewiseLinearBeta({0.0}, {0.0, 1.0}, 0.0, 0.5); }

Field smooth_rand(const Grid2D& g, std::mt19937_64& rng, double amp) {
    double c[3][3];
    for (auto& r : c)
        for (double& v : r) v = amp * (2.0 * ((rng() >> 11) * 0x1.0p-53) - 1.0);
    return field_from(g, [&](double x, double y) {
        double s = 0;
        for (int m = 1; m <= 3; ++m)
            for (int n = 1; n <= 3; ++n)
                s += c[m - 1][n - 1] * std::sin(m * M_PI * x) * std::sin(n * M_PI * y);
        return s;
    });
}

ProblemParams base_params(const Grid2D& g) {
    return ProblemParams{g,
                         relu(),
                         0.1,
                         1.0,
                         0.5,
                         constant_field(g, -1.0),
                         constant_field(g, -0.1),
                         constant_field(g, 0.0),
                         {}};
}
}  // namespace

TEST_CASE("eval_objective: vanishes when the candidate matches its own data") {
    const Grid2D g = unit_grid(15);
    ProblemParams p = base_params(g);
    p.alpha = 0.0;
    auto [y_sh, rep] = solve_state(g, p.beta, p.epsilon, p.g_sh, p.f, p.solver);
    REQUIRE(rep.converged);
    p.y_d = y_sh;  // tracking target = state at the anchor
    CHECK(eval_objective(p, p.g_sh) <= 1e-14);
}

TEST_CASE("eval_objective: topology term vanishes once g >= eps") {
    const Grid2D g = unit_grid(15);
    ProblemParams p = base_params(g);
    const Field big = constant_field(g, 2.0 * p.epsilon);  // infeasible but evaluable
    ProblemParams p0 = p;
    p0.alpha = 0.0;
    CHECK(eval_objective(p, big) ==
          Catch::Approx(eval_objective(p0, big)).margin(1e-13));
}

TEST_CASE("eval_objective: independent straight-line recomputation") {
    const Grid2D g = unit_grid(15);
    ProblemParams p = base_params(g);
    std::mt19937_64 rng(3);
    const Field gc = project_F(smooth_rand(g, rng, 0.4), g);
    Field y;
    const double j = eval_objective_view(ProblemView(p), gc, nullptr, &y);

    // independently coded quadrature of the three terms
    long double track = 0.0L, topo = 0.0L;
    for (int cj = 0; cj <= g.ny; ++cj)
        for (int ci = 0; ci <= g.nx; ++ci) {
            long double t4 = 0.0L, o4 = 0.0L;
            for (int j2 = cj - 1; j2 <= cj; ++j2)
                for (int i2 = ci - 1; i2 <= ci; ++i2)
                    if (i2 >= 0 && i2 < g.nx && j2 >= 0 && j2 < g.ny) {
                        const int k = g.node_index(i2, j2);
                        const double d = y[k] - p.y_d[k];
                        t4 += d * d;
                        o4 += 1.0 - h_eps(gc[k], p.epsilon);
                    }
            const std::size_t c = static_cast<std::size_t>(cj) * (g.nx + 1) + ci;
            if (g.mask_E.on[c]) track += 0.25L * t4;
            topo += 0.25L * o4;
        }
    const WGram& gram = p.wgram();
    const Field dg = gc - p.g_sh;
    const double j_oracle = static_cast<double>(track) * g.h * g.h +
                            p.alpha * static_cast<double>(topo) * g.h * g.h +
                            0.5 * w_inner(gram, dg, dg);
    CHECK(std::abs(j - j_oracle) <= 1e-12 * std::abs(j_oracle));
}

TEST_CASE("eval_objective: finite on the projection of any finite control") {
    const Grid2D g = unit_grid(15);
    const ProblemParams p = base_params(g);
    std::mt19937_64 rng(23);
    Field wild(g.num_nodes());
    for (int k = 0; k < g.num_nodes(); ++k)
        wild[k] = 50.0 * (2.0 * ((rng() >> 11) * 0x1.0p-53) - 1.0);
    const double j = eval_objective(p, project_F(wild, g));
    CHECK(std::isfinite(j));
    CHECK(j >= 0.0);
}

TEST_CASE("first_variation: q = eps p when the Heaviside derivative sleeps") {
    const Grid2D g = unit_grid(15);
    ProblemParams p = base_params(g);
    p.alpha = 0.0;
    const Field gc = constant_field(g, -1.0);
    const FirstVariation fv = first_variation_density(p, gc);
    CHECK((fv.q - p.epsilon * fv.p).lpNorm<Eigen::Infinity>() <= 1e-14);
}

TEST_CASE("first_variation: constant g = eps/2 closed form") {
    const Grid2D g = unit_grid(15);
    ProblemParams p = base_params(g);
    const double eps = p.epsilon;
    const Field gc = constant_field(g, eps / 2.0);  // infeasible, still evaluable
    const FirstVariation fv = first_variation_view(ProblemView(p), gc);
    const double hp = 1.5 / eps;  // H'_eps(eps/2)
    for (int k = 0; k < g.num_nodes(); ++k) {
        const double want = fv.p[k] * (eps - hp * fv.y[k] / eps) - p.alpha * hp;
        CHECK(fv.q[k] == Catch::Approx(want).margin(1e-13));
    }
}

TEST_CASE("first_variation matches finite differences of the objective") {
    const Grid2D g = unit_grid(15);
    ProblemParams p = base_params(g);
    p.solver.tol = 1e-12;
    std::mt19937_64 rng(5);
    Field gc = smooth_rand(g, rng, 0.4);
    for (int k = 0; k < g.num_nodes(); ++k) gc[k] -= 0.05;
    gc = project_F(gc, g);
    const Field h = smooth_rand(g, rng, 0.1);
    const FirstVariation fv = first_variation_density(p, gc);
    const double deriv = inner_h(g, fv.q, h) + w_inner(p.wgram(), gc - p.g_sh, h);
    const double j0 = eval_objective(p, gc);
    double prev = 1e300;
    for (double tau : {1e-3, 1e-4, 1e-5}) {
        const double fd = (eval_objective(p, gc + tau * h) - j0) / tau;
        const double err = std::abs(fd - deriv);
        CHECK(err < prev);
        prev = err;
    }
    CHECK(prev <= 1e-5 * (1.0 + std::abs(deriv)));
}

TEST_CASE("optimize: agrees with the dense KKT oracle on the smooth convex surrogate") {
    const Grid2D g = unit_grid(15);
    const PiecewiseLinearBeta linear({}, {1.0}, 0.0, 0.25);
    ProblemParams p{g,  linear, 0.1, 0.0, 0.5, constant_field(g, -1.0),
                    constant_field(g, -0.5), constant_field(g, -0.3), {}};
    p.validate();
    const int N = g.num_nodes();
    const double eps = p.epsilon, h2 = g.h * g.h;

    // direct primal-dual solve of the coupled state/adjoint/gradient system
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(3 * N, 3 * N);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(3 * N);
    const Eigen::MatrixXd Ad =
        Eigen::MatrixXd(assemble_neg_laplacian(g)) + Eigen::MatrixXd::Identity(N, N);
    const WGram& gram = p.wgram();
    Eigen::MatrixXd G = h2 * Eigen::MatrixXd::Identity(N, N);
    for (std::size_t a = 0; a < gram.w_nodes.size(); ++a) {
        G(gram.w_nodes[a], gram.w_nodes[a]) += h2;
        for (std::size_t b = 0; b < gram.w_nodes.size(); ++b)
            G(gram.w_nodes[a], gram.w_nodes[b]) += gram.F(a, b);
    }
    const Field ew = g.e_weights();
    K.block(0, 0, N, N) = Ad;
    K.block(0, 2 * N, N, N) = -eps * Eigen::MatrixXd::Identity(N, N);
    K.block(N, N, N, N) = Ad;
    for (int k = 0; k < N; ++k) K(N + k, k) = -2.0 * ew[k];
    K.block(2 * N, N, N, N) = eps * h2 * Eigen::MatrixXd::Identity(N, N);
    K.block(2 * N, 2 * N, N, N) = G;
    for (int k = 0; k < N; ++k) {
        rhs[k] = p.f[k];
        rhs[N + k] = -2.0 * ew[k] * p.y_d[k];
    }
    rhs.segment(2 * N, N) = G * p.g_sh;
    const Eigen::VectorXd sol = K.partialPivLu().solve(rhs);
    const Field g_star = sol.segment(2 * N, N);
    double max_on_e = -1e300;
    for (int k = 0; k < N; ++k)
        if (g.node_in_E(k)) max_on_e = std::max(max_on_e, g_star[k]);
    REQUIRE(max_on_e < -1e-3);  // clamp-free interior solution

    OptimizeOpts oo;
    oo.max_iter = 100000;
    oo.cert_tol = 1e-5;
    const OptimizeResult res = optimize(p, p.g_sh, oo);
    CHECK_FALSE(res.stalled);
    CHECK(norm_l2(g, res.g - g_star) <= 1e-6);
}

TEST_CASE("optimize: certified start returns unchanged after one probe") {
    const Grid2D g = unit_grid(15);
    ProblemParams p = base_params(g);
    OptimizeOpts oo;
    const OptimizeResult first = optimize(p, p.g_sh, oo);  // stat-floor convergence
    int probes = 0;
    ViProbe probe = [&](const Field&) {
        ++probes;
        return 0.0;  // certified
    };
    const OptimizeResult again = optimize(p, first.g, oo, probe);
    CHECK(probes == 1);
    CHECK(again.iterations == 0);
    CHECK((again.g - first.g).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("optimize: iterates stay feasible and the trace decreases") {
    const Grid2D g = unit_grid(15);
    ProblemParams p = base_params(g);
    OptimizeOpts oo;
    oo.max_iter = 200;
    const OptimizeResult res = optimize(p, p.g_sh, oo);
    CHECK(in_F(res.g, g));
    double prev = std::numeric_limits<double>::infinity();
    for (const auto& row : res.trace) {
        CHECK(row.j <= prev + 1e-15);
        prev = row.j;
    }
    CHECK_THROWS_AS(optimize(p, constant_field(g, 1.0), oo), std::invalid_argument);
}

TEST_CASE("regularized path: smooth beta keeps every leg at the limit point") {
    const Grid2D g = unit_grid(15);
    const PiecewiseLinearBeta linear({}, {1.0}, 0.0, 0.25);
    ProblemParams p{g,  linear, 0.1, 0.0, 0.5, constant_field(g, -1.0),
                    constant_field(g, -0.2), constant_field(g, -0.1), {}};
    p.validate();
    // beta_gamma = beta for a linear nonlinearity, so once the path starts
    // at the minimizer every leg reproduces it up to solver tolerance
    OptimizeOpts oo;
    oo.max_iter = 50000;
    oo.cert_tol = 1e-7;
    const OptimizeResult opt = optimize(p, p.g_sh, oo);
    REQUIRE_FALSE(opt.stalled);

    PathOpts po;
    po.inner = oo;
    const PathResult pr = solve_regularized_path(p, {1e-1, 1e-2, 1e-3}, opt.g, po);
    REQUIRE(pr.points.size() == 3);
    CHECK_FALSE(pr.truncated);
    for (const auto& pt : pr.points)
        CHECK(norm_l2(g, pt.g - opt.g) <= 1e-5);

    CHECK_THROWS_AS(solve_regularized_path(p, {1e-2, 1e-1}, p.g_sh, po),
                    std::invalid_argument);  // not decreasing
}
