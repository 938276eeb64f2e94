#include <catch2/catch_amalgamated.hpp>

#include "nscert/certificates.hpp"
#include "nscert/objective.hpp"

#include <cmath>
#include <random>

using namespace nscert;

namespace {
Grid2D unit_grid(int n) { return build_grid(n, n, Rect{0, 0, 1, 1}, Rect{0.25, 0.25, 0.75, 0.75}); }
PiecewiseLinearBeta relu() { return PiecewiseLinearBeta({0.0}, {0.0, 1.0}, 0.0, 0.5); }

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

NodeMask blank_nodes(const Grid2D& g) {
    NodeMask m;
    m.nx = g.nx;
    m.ny = g.ny;
    m.on.assign(static_cast<std::size_t>(g.nx) * g.ny, 0);
    return m;
}
}  // namespace

TEST_CASE("detect_sets: active set and kink sets") {
    const Grid2D g = unit_grid(15);
    const ProblemParams p = base_params(g);

    // g = 0 on E: every E node is active
    auto s1 = detect_sets(p, constant_field(g, 0.0), constant_field(g, -0.5));
    CHECK(s1.A.count() == g.node_E.count());
    CHECK(s1.A_closure.count() > s1.A.count());  // one dilation ring

    auto s2 = detect_sets(p, constant_field(g, -1.0), constant_field(g, -0.5));
    CHECK(s2.A.count() == 0);
    CHECK(s2.A_closure.count() == 0);

    // state exactly at the convex kink everywhere
    auto s3 = detect_sets(p, constant_field(g, -1.0), constant_field(g, 0.0));
    CHECK(s3.Dn_convex.count() == g.num_nodes());
    CHECK(s3.Dn_concave.count() == 0);
}

TEST_CASE("check_vi: descent is found where it exists") {
    const Grid2D g = unit_grid(31);
    ProblemParams p = base_params(g);
    p.f = constant_field(g, 10.0);  // state far above y_d: tracking wants g down
    const ViResult vi = check_vi(p, p.g_sh, 100, 1);
    CHECK(vi.vi_min < -1e-3);
    CHECK(in_F(vi.worst_direction, g));

    // converse implication: where sampled descent exists, at least one
    // system component must report a violation above its tolerance; here
    // g = 0 makes all of E active and the tracking pushes p positive, so
    // the active-set chain eps p <= g_sh breaks on a fat set
    const FirstVariation fv = first_variation_density(p, p.g_sh);
    const ActiveSets sets = detect_sets(p, p.g_sh, fv.y);
    const SystemCheck sys = check_system(p, p.g_sh, fv.y, fv.p, fv.zeta, sets);
    CHECK(sys.sp_chain_violation > g.h * g.h);

    // deterministic for a fixed seed, including across job counts
    const ViResult again = check_vi(p, p.g_sh, 100, 1);
    CHECK(vi.vi_min == again.vi_min);
    CHECK(vi.worst_index == again.worst_index);
    const ViResult par = check_vi(p, p.g_sh, 100, 1, 4);
    CHECK(vi.vi_min == par.vi_min);
    CHECK(vi.worst_index == par.worst_index);
}

TEST_CASE("check_vi: candidate itself contributes zero; infeasible candidates rejected") {
    const Grid2D g = unit_grid(15);
    const ProblemParams p = base_params(g);
    // with n = 1 the only sample is h = 0 = g, excluded unless it is alone
    const ViResult vi = check_vi(p, constant_field(g, 0.0), 1, 9);
    CHECK(vi.vi_min == 0.0);
    CHECK_THROWS_AS(check_vi(p, constant_field(g, 0.5), 10, 1), std::invalid_argument);
}

TEST_CASE("check_system: local perturbation of the interior equality") {
    const Grid2D g = unit_grid(15);
    const ProblemParams p = base_params(g);
    // certify a stationary candidate first so the base residual is ~ 0
    OptimizeOpts oo;
    const OptimizeResult res = optimize(p, p.g_sh, oo);
    const FirstVariation fv = first_variation_density(p, res.g);
    const ActiveSets sets = detect_sets(p, res.g, fv.y);
    const SystemCheck before = check_system(p, res.g, fv.y, fv.p, fv.zeta, sets);
    CHECK(before.sys_residual <= 1e-10);
    REQUIRE(before.kkt_interior_residual <= 1e-6);

    int node = -1;
    for (int k = 0; k < g.num_nodes() && node < 0; ++k)
        if (g.node_in_E(k) && !sets.A.on[static_cast<std::size_t>(k)]) node = k;
    REQUIRE(node >= 0);
    Field pp = fv.p;
    pp[node] += 1.0;
    const SystemCheck after = check_system(p, res.g, fv.y, pp, fv.zeta, sets);
    // q is linear in p: the jump is |eps - (1/eps) H'_eps(g) y| = eps here
    // (the control is nonpositive at the node, so H'_eps sleeps)
    CHECK(after.kkt_interior_residual ==
          Catch::Approx(p.epsilon).margin(1e-6));
    CHECK(after.sys_residual > 1.0);  // adjoint equation broken too
}

TEST_CASE("check_system: multiplier interval breach has at least one cell of measure") {
    const Grid2D g = unit_grid(15);
    const ProblemParams p = base_params(g);
    const Field gc = constant_field(g, -0.5);
    const Field y = constant_field(g, 0.0);  // every node at the kink
    const Field zeta = select_zeta(p.beta, y);
    const Field padj = Field::Zero(g.num_nodes());
    const ActiveSets sets = detect_sets(p, gc, y);

    Field bad = zeta;
    bad[g.node_index(7, 7)] = 2.0;  // beta'_+ + 1
    const SystemCheck chk = check_system(p, gc, y, padj, bad, sets);
    CHECK(chk.zeta_violation >= g.h * g.h);
    CHECK(check_system(p, gc, y, padj, zeta, sets).zeta_violation == 0.0);
}

TEST_CASE("check_signs: zero adjoint clean, positive adjoint fully violating") {
    const Grid2D g = unit_grid(15);
    const ProblemParams p = base_params(g);
    const ActiveSets sets = detect_sets(p, constant_field(g, -1.0), constant_field(g, 0.0));
    REQUIRE(sets.Dn_convex.count() == g.num_nodes());
    REQUIRE(sets.A.count() == 0);

    const SignCheck clean = check_signs(g, Field::Zero(g.num_nodes()), sets);
    CHECK(clean.violation_convex == 0.0);
    CHECK(clean.violation_concave == 0.0);
    CHECK(clean.violation_active == 0.0);
    CHECK(clean.strengthened_evaluated);  // mu(A) = 0

    const SignCheck full = check_signs(g, constant_field(g, 1.0), sets);
    const double all_nodes = g.num_nodes() * g.h * g.h;  // ~ mu(D) at this h
    CHECK(full.violation_convex == Catch::Approx(all_nodes).margin(1e-12));
    CHECK(full.violation_convex_full == Catch::Approx(all_nodes).margin(1e-12));
}

TEST_CASE("check_signs: fixed-region breach is stable under refinement") {
    for (int n : {15, 31, 63}) {
        const Grid2D g = unit_grid(n);
        const ProblemParams p = base_params(g);
        const ActiveSets sets = detect_sets(p, constant_field(g, -1.0), constant_field(g, 0.0));
        const Field padj = field_from(g, [](double x, double y) {
            return (x > 0.25 && x < 0.75 && y > 0.25 && y < 0.75) ? 1.0 : 0.0;
        });
        const SignCheck chk = check_signs(g, padj, sets);
        CHECK(std::abs(chk.violation_convex - 0.25) <= 2.0 * g.h);
    }
}

TEST_CASE("check_cq_ha: inactive Heaviside gives the exact closed form") {
    const Grid2D g = unit_grid(31);
    for (double eps : {0.2, 0.1, 0.05}) {
        ProblemParams p = base_params(g);
        p.epsilon = eps;
        for (const double gval : {-0.3, eps}) {  // H'_eps vanishes at both
            auto [y, rep] = solve_state(g, p.beta, eps, constant_field(g, gval), p.f, p.solver);
            REQUIRE(rep.converged);
            const CqHaCheck ha = check_cq_ha(p, constant_field(g, gval), y);
            CHECK(ha.near_zero_measure == 0.0);
            const double want = g.measure(g.mask_DE) / (eps * eps);
            CHECK(ha.integral_value == Catch::Approx(want).margin(1e-9 * want));
        }
    }
}

TEST_CASE("check_cq_ha: constructed degeneracy is detected and flagged") {
    const Grid2D g = unit_grid(31);
    ProblemParams p = base_params(g);
    const double eps = p.epsilon;
    // (1/eps) H'_eps(eps/2) y = eps  <=>  y = 2 eps^3 / 3
    const Field gc = constant_field(g, eps / 2.0);
    const Field y = constant_field(g, 2.0 * eps * eps * eps / 3.0);
    const CqHaCheck ha = check_cq_ha(p, gc, y);
    CHECK(ha.near_zero_measure >= 0.5 * g.measure(g.mask_DE));
    CHECK(ha.near_zero_measure > ha.band);
    CHECK(ha.excluded_cells > 0);
}

TEST_CASE("check_cq_cc: the three canonical configurations") {
    const Grid2D g = unit_grid(15);
    ActiveSets s;
    s.A = blank_nodes(g);
    s.A_closure = blank_nodes(g);
    s.Dn_convex = blank_nodes(g);
    s.Dn_concave = blank_nodes(g);

    // A empty: both intersections empty
    s.Dn_convex.on.assign(s.Dn_convex.on.size(), 1);
    CHECK(check_cq_cc(g, s).first == 0.0);

    // no boundary ring (A_closure = A): convex part contributes nothing
    for (int k = 0; k < g.num_nodes(); ++k)
        if (g.node_in_E(k)) {
            s.A.on[k] = 1;
            s.A_closure.on[k] = 1;
        }
    CHECK(check_cq_cc(g, s).first == 0.0);

    // concave kink set meeting the closed active set: CQ fails at ~ mu(E)
    s.Dn_convex.on.assign(s.Dn_convex.on.size(), 0);
    s.Dn_concave = s.A;
    const auto [measure, band] = check_cq_cc(g, s);
    CHECK(std::abs(measure - 0.25) <= 2.0 * g.h);
}

TEST_CASE("check_data_condition: sign of the data decides") {
    const Grid2D g = unit_grid(15);
    ProblemParams p = base_params(g);  // f = -1, beta(0) = 0
    const DataConditionCheck ok = check_data_condition(p);
    CHECK(ok.ok);
    CHECK(ok.margin_E == Catch::Approx(1.0));
    CHECK(ok.state_solved);
    CHECK(ok.state_max <= 1e-10);

    p.f = constant_field(g, 1.0);
    CHECK_FALSE(check_data_condition(p).ok);

    p.f = constant_field(g, 0.0);
    const DataConditionCheck mixed = check_data_condition(p);
    CHECK(mixed.ok_on_E);        // <= is enough on E
    CHECK_FALSE(mixed.ok_on_DE); // strict inequality fails off E
    CHECK_FALSE(mixed.ok);
}

TEST_CASE("check_equivalence: zero adjoint satisfies the bracket identically") {
    const Grid2D g = unit_grid(15);
    ProblemParams p = base_params(g);
    p.alpha = 0.0;
    p.g_sh = constant_field(g, -0.3);
    auto [y, rep] = solve_state(g, p.beta, p.epsilon, p.g_sh, p.f, p.solver);
    REQUIRE(rep.converged);
    p.y_d = y;  // tracking rhs vanishes, p = 0 solves the adjoint
    const Field zeta = select_zeta(p.beta, y);
    const Field p0 = Field::Zero(g.num_nodes());
    const EquivalenceCheck eq = check_equivalence(p, p.g_sh, y, p0, zeta, 64, 3);
    CHECK(eq.des_violation == 0.0);
    CHECK(eq.sys_residual <= 1e-12);
    CHECK(eq.ok);
}

TEST_CASE("check_equivalence: bracket arithmetic at a convex kink") {
    const Grid2D g = unit_grid(15);
    const ProblemParams p = base_params(g);
    const Field gc = constant_field(g, -0.5);
    const Field y = constant_field(g, 0.0);     // convex kink, slopes 0 and 1
    const Field padj = constant_field(g, -1.0); // bracket is [-1, 0]
    Field zeta = constant_field(g, 0.3);        // zeta p = -0.3 inside

    CertTols tols;
    EquivalenceCheck eq = check_equivalence(p, gc, y, padj, zeta, 4, 3, tols);
    CHECK(eq.des_violation == 0.0);

    zeta = constant_field(g, 1.2);  // outside the hull: zeta p = -1.2 < -1
    eq = check_equivalence(p, gc, y, padj, zeta, 4, 3, tols);
    CHECK(eq.des_violation ==
          Catch::Approx(g.num_nodes() * g.h * g.h).margin(1e-12));  // every node
    CHECK_FALSE(eq.ok);
}

TEST_CASE("one-sided slopes at kinks: convex up, concave down, both nonnegative") {
    const PiecewiseLinearBeta b({-1.0, 1.5}, {0.2, 1.0, 0.4}, 0.3, 0.5);
    for (double z : b.breakpoints()) {
        const double minus = -b.dir_deriv(z, -1.0), plus = b.dir_deriv(z, 1.0);
        CHECK(minus >= 0.0);
        CHECK(plus >= 0.0);
        if (classify_kink(b, z) == KinkKind::Convex)
            CHECK(plus > minus);
        else
            CHECK(minus > plus);
    }
}

TEST_CASE("certify: trivially consistent inputs produce no violations") {
    const Grid2D g = unit_grid(15);
    ProblemParams p = base_params(g);
    p.f = constant_field(g, 0.0);
    p.y_d = constant_field(g, 0.0);
    CertifyOpts opts;
    opts.vi_samples = 32;
    const StationarityReport r = certify(p, constant_field(g, 0.0), nullptr, nullptr, nullptr,
                                         opts);
    CHECK(r.sys_residual <= 1e-12);
    CHECK(r.zeta_violation == 0.0);
    CHECK(r.sign_violation_convex == 0.0);
    CHECK(r.sign_violation_concave == 0.0);
    CHECK(r.sign_violation_active == 0.0);
    CHECK(r.sp_chain_violation == 0.0);
    CHECK(r.kkt_interior_residual <= 1e-12);
    CHECK(r.vi_min >= -1e-12);
    CHECK(r.certified);
}
