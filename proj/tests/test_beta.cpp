#include <catch2/catch_amalgamated.hpp>

#include "nscert/beta.hpp"

#include <cmath>
#include <random>
#include <vector>

using namespace nscert;

namespace {
PiecewiseLinearBeta relu() { return PiecewiseLinearBeta({0.0}, {0.0, 1.0}, 0.0, 0.5); }
// convex kink at -1 (slope up), concave kink at 1.5 (slope down)
PiecewiseLinearBeta mixed() {
    return PiecewiseLinearBeta({-1.0, 1.5}, {0.2, 1.0, 0.4}, 0.3, 0.5);
}
}  // namespace

TEST_CASE("beta_eval and directional derivative on max(0,.)") {
    const auto b = relu();
    CHECK(beta_eval(b, -2.0) == 0.0);
    CHECK(beta_eval(b, 3.0) == Catch::Approx(3.0).margin(1e-15));
    CHECK(beta_eval(b, 0.0) == 0.0);

    CHECK(beta_dir_deriv(b, 0.0, 1.0) == 1.0);
    CHECK(beta_dir_deriv(b, 0.0, -1.0) == 0.0);
    CHECK(beta_dir_deriv(b, 5.0, -2.0) == -2.0);
}

TEST_CASE("classify_kink") {
    CHECK(classify_kink(relu(), 0.0) == KinkKind::Convex);
    const PiecewiseLinearBeta minzero({0.0}, {1.0, 0.0}, 0.0, 0.5);  // min(.,0)
    CHECK(classify_kink(minzero, 0.0) == KinkKind::Concave);
    CHECK_THROWS_AS(classify_kink(relu(), 1.0), std::invalid_argument);
}

TEST_CASE("validation rejects non-monotone and overlapping kink neighborhoods") {
    CHECK_THROWS_AS(PiecewiseLinearBeta({0.0}, {-0.1, 1.0}, 0.0, 0.2), std::invalid_argument);
    CHECK_THROWS_AS(PiecewiseLinearBeta({0.0}, {1.0, 1.0}, 0.0, 0.2), std::invalid_argument);
    CHECK_THROWS_AS(PiecewiseLinearBeta({0.0, 0.1}, {0.0, 1.0, 2.0}, 0.0, 0.2),
                    std::invalid_argument);  // neighborhoods overlap
    CHECK_THROWS_AS(PiecewiseLinearBeta({1.0, 0.0}, {0.0, 1.0, 2.0}, 0.0, 0.1),
                    std::invalid_argument);  // unsorted
}

TEST_CASE("monotone and globally Lipschitz with L = max slope") {
    const auto b = mixed();
    const double L = b.lipschitz();
    CHECK(L == 1.0);
    std::mt19937_64 rng(17);
    auto u = [&] { return 8.0 * ((rng() >> 11) * 0x1.0p-53) - 4.0; };
    for (int t = 0; t < 10000; ++t) {
        const double z1 = u(), z2 = u();
        if (z1 <= z2) CHECK(b.value(z1) <= b.value(z2) + 1e-15);
        CHECK(std::abs(b.value(z1) - b.value(z2)) <= L * std::abs(z1 - z2) + 1e-14);
    }
}

TEST_CASE("difference quotient is exact below the kink distance") {
    const auto b = mixed();
    std::mt19937_64 rng(23);
    for (int t = 0; t < 200; ++t) {
        const double z = 6.0 * ((rng() >> 11) * 0x1.0p-53) - 3.0;
        const double d = 2.0 * ((rng() >> 11) * 0x1.0p-53) - 1.0;
        if (d == 0.0) continue;
        double dist = b.dist_to_kinks(z);
        if (dist == 0.0) dist = 0.4;  // z exactly at a kink: next kink is >= 2 delta away
        const double tau = 0.5 * dist / std::abs(d);
        const double quot = (b.value(z + tau * d) - b.value(z)) / tau;
        CHECK(quot == Catch::Approx(b.dir_deriv(z, d)).margin(1e-12));
    }
}

TEST_CASE("mollifier psi: normalized, even, compactly supported") {
    const MollifierPsi psi;
    CHECK(std::abs(psi.convolve([](double) { return 1.0; }) - 1.0) <= 1e-12);
    CHECK(std::abs(psi.convolve([](double s) { return s; })) <= 1e-13);  // odd moment
    CHECK(psi.psi(1.0) == 0.0);
    CHECK(psi.psi(-0.3) == Catch::Approx(psi.psi(0.3)).margin(1e-15));
    CHECK_THROWS_AS(MollifierPsi(4), std::invalid_argument);
}

TEST_CASE("mollify: exact outside the kink band, bounded inside") {
    const auto b = relu();
    const MollifierPsi psi;
    const double gamma = 0.05;
    // integrand is linear in s when no kink lies in (v-gamma, v+gamma)
    CHECK(mollify(b, psi, gamma, -gamma - 1e-9) == Catch::Approx(0.0).margin(1e-14));
    CHECK(mollify(b, psi, gamma, 2.0 * gamma) == Catch::Approx(2.0 * gamma).margin(1e-14));
    CHECK(mollify(b, psi, gamma, 7.0) == Catch::Approx(7.0).margin(1e-12));
    CHECK_THROWS_AS(mollify(b, psi, 0.0, 1.0), std::invalid_argument);
}

TEST_CASE("mollify agrees with a kink-splitting composite rule") {
    // oracle: split the s-integral at the kink preimage so each piece is
    // smooth, then apply the same Gauss rule per piece
    const auto b = relu();
    const MollifierPsi psi;
    const double gamma = 0.02;
    auto oracle = [&](double v) {
        const double split = v / gamma;  // beta kink at 0 maps to s = v/gamma
        auto piece = [&](double a, double bnd) {
            long double acc = 0.0L;
            for (std::size_t q = 0; q < psi.nodes().size(); ++q) {
                const double s = 0.5 * (a + bnd) + 0.5 * (bnd - a) * psi.nodes()[q];
                acc += static_cast<long double>(psi.weights()[q]) * 0.5 * (bnd - a) *
                       psi.psi(s) * b.value(v - gamma * s);
            }
            return static_cast<double>(acc);
        };
        if (split <= -1.0 || split >= 1.0) return piece(-1.0, 1.0);
        return piece(-1.0, split) + piece(split, 1.0);
    };
    for (double v : {-0.015, -0.005, 0.0, 0.004, 0.013}) {
        // inside the kink band the plain rule carries a small O(gamma)
        // quadrature defect; the composite rule pins it down
        const double exact = oracle(v);
        CHECK(std::abs(mollify(b, psi, gamma, v) - exact) <= 3e-4 * gamma + 1e-14);
    }
    // away from the band the plain rule is itself machine-exact
    CHECK(std::abs(mollify(b, psi, gamma, 5 * gamma) - oracle(5 * gamma)) <= 1e-10);
}

TEST_CASE("mollify_deriv: even mollifier splits the kink mass equally") {
    const auto b = relu();
    const MollifierPsi psi;
    for (double gamma : {0.1, 0.01}) {
        CHECK(std::abs(mollify_deriv(b, psi, gamma, 0.0) - 0.5) <= 1e-10);
        CHECK(mollify_deriv(b, psi, gamma, 2.0 * gamma) == Catch::Approx(1.0).margin(1e-13));
        CHECK(mollify_deriv(b, psi, gamma, -2.0 * gamma) == Catch::Approx(0.0).margin(1e-13));
    }
    const auto m = mixed();
    // slope hull bound over the gamma-neighborhood
    std::mt19937_64 rng(31);
    for (int t = 0; t < 500; ++t) {
        const double v = 6.0 * ((rng() >> 11) * 0x1.0p-53) - 3.0;
        const double d = mollify_deriv(m, psi, 0.07, v);
        CHECK(d >= 0.2 - 1e-12);
        CHECK(d <= 1.0 + 1e-12);
    }
}

TEST_CASE("beta_gamma: monotone, same Lipschitz constant, convex on convex windows") {
    const auto b = mixed();
    const MollifierPsi psi;
    const double gamma = 0.1;
    const MollifiedBeta bg(b, psi, gamma);
    std::mt19937_64 rng(41);
    auto u = [&] { return 8.0 * ((rng() >> 11) * 0x1.0p-53) - 4.0; };
    for (int t = 0; t < 2000; ++t) {
        const double z1 = u(), z2 = u();
        if (z1 <= z2) CHECK(bg.value(z1) <= bg.value(z2) + 1e-13);
        CHECK(std::abs(bg.value(z1) - bg.value(z2)) <=
              b.lipschitz() * std::abs(z1 - z2) + 1e-13);
    }
    // midpoint test on [z - 3 delta/4, z + 3 delta/4] for the convex kink at -1,
    // gamma <= delta/4
    const double z = -1.0, delta = b.delta(), gc = delta / 4.0;
    const MollifiedBeta bgc(b, psi, gc);
    for (int t = 0; t < 300; ++t) {
        const double a = z - 0.75 * delta + 1.5 * delta * ((rng() >> 11) * 0x1.0p-53);
        const double c = z - 0.75 * delta + 1.5 * delta * ((rng() >> 11) * 0x1.0p-53);
        const double mid = 0.5 * (a + c);
        CHECK(bgc.value(mid) <= 0.5 * (bgc.value(a) + bgc.value(c)) + 1e-12);
    }
}

TEST_CASE("smoothing error: sup |beta_gamma - beta| <= gamma L on bounded sets") {
    const auto b = mixed();
    const MollifierPsi psi;
    std::mt19937_64 rng(53);
    for (double gamma : {0.5, 0.05}) {
        double worst = 0.0;
        for (int t = 0; t < 2000; ++t) {
            const double v = 10.0 * ((rng() >> 11) * 0x1.0p-53) - 5.0;
            worst = std::max(worst, std::abs(mollify(b, psi, gamma, v) - b.value(v)));
        }
        CHECK(worst <= gamma * b.lipschitz());
    }
}
