#pragma once

#include "nscert/grid.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <memory>
#include <stdexcept>
#include <vector>

namespace nscert {

/// Discrete realization of W = L^2(D) cap H^s(D \ closure(E)).
///
/// The L^2(D) part is the lumped h^2 mass on all interior nodes.  The
/// H^s part lives on the nodes not strictly inside E ("w-nodes"): its L^2
/// mass is another h^2 diagonal there, and the seminorm is a dense
/// symmetric form F assembled from Gagliardo double sums,
///   s in (0,1):  sum over node pairs  (u(x)-u(x'))^2 / |x-x'|^(2+2s) * h^4,
///   s in (1,2):  |grad u|^2 (one-sided difference quotients) plus the
///                order s-1 Gagliardo sum of each gradient component,
///                sampled at edge midpoints.
/// Constraints act only on nodes strictly inside E, where the Gram is
/// diagonal; the riesz solve therefore factors the w-node block once.
class WGram {
  public:
    double s = 0.5;
    double h = 0.0;
    int n_nodes = 0;
    std::vector<int> w_nodes;       // node indices carrying the H^s part
    std::vector<int> node_to_w;     // -1 for nodes strictly inside E
    Eigen::MatrixXd F;              // seminorm (+ gradient) form on w-nodes

    double mass_l2_d() const { return h * h; }

    bool is_w_node(int k) const { return node_to_w[static_cast<std::size_t>(k)] >= 0; }

    /// |u|^2 seminorm part (everything in H^s except its L^2 mass).
    double seminorm_sq(const Field& u) const {
        const Eigen::Index m = static_cast<Eigen::Index>(w_nodes.size());
        long double acc = 0.0L;
        for (Eigen::Index a = 0; a < m; ++a) {
            const double ua = u[w_nodes[static_cast<std::size_t>(a)]];
            long double row = 0.0L;
            for (Eigen::Index b = 0; b < m; ++b)
                row += static_cast<long double>(F(a, b)) * u[w_nodes[static_cast<std::size_t>(b)]];
            acc += ua * row;
        }
        return static_cast<double>(acc);
    }

    const Eigen::LLT<Eigen::MatrixXd>& block_factorization() const { return llt_; }

    void finalize() {
        const Eigen::Index m = static_cast<Eigen::Index>(w_nodes.size());
        Eigen::MatrixXd block = F;
        for (Eigen::Index a = 0; a < m; ++a) block(a, a) += 2.0 * h * h;
        llt_.compute(block);
        if (llt_.info() != Eigen::Success)
            throw std::runtime_error("WGram: factorization of the w-node block failed");
    }

  private:
    Eigen::LLT<Eigen::MatrixXd> llt_;
};

namespace detail {

inline void add_pair(Eigen::MatrixXd& F, Eigen::Index a, Eigen::Index b, double c) {
    // contribution c * (u_a - u_b)^2, both orderings of the Gagliardo sum
    F(a, a) += c;
    F(b, b) += c;
    F(a, b) -= c;
    F(b, a) -= c;
}

}  // namespace detail

inline WGram build_w_gram(const Grid2D& g, double s) {
    require((s > 0.0 && s < 1.0) || (s > 1.0 && s < 2.0),
            "build_w_gram: s must lie in (0,1) or (1,2)");

    WGram gram;
    gram.s = s;
    gram.h = g.h;
    gram.n_nodes = g.num_nodes();
    gram.node_to_w.assign(static_cast<std::size_t>(g.num_nodes()), -1);
    for (int k = 0; k < g.num_nodes(); ++k)
        if (!g.node_in_E(k)) {
            gram.node_to_w[static_cast<std::size_t>(k)] = static_cast<int>(gram.w_nodes.size());
            gram.w_nodes.push_back(k);
        }

    const std::size_t m = gram.w_nodes.size();
    if (m > 100000) throw std::invalid_argument("build_w_gram: dense Gram too large (> 1e5 nodes)");
    gram.F = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));

    std::vector<double> px(m), py(m);
    for (std::size_t a = 0; a < m; ++a) {
        const int k = gram.w_nodes[a];
        px[a] = g.node_x(k % g.nx);
        py[a] = g.node_y(k / g.nx);
    }

    const double h = g.h, h4 = h * h * h * h;

    if (s < 1.0) {
        const double ex = 2.0 + 2.0 * s;
        for (std::size_t a = 0; a < m; ++a)
            for (std::size_t b = a + 1; b < m; ++b) {
                const double dx = px[a] - px[b], dy = py[a] - py[b];
                const double c = 2.0 * h4 / std::pow(std::sqrt(dx * dx + dy * dy), ex);
                detail::add_pair(gram.F, static_cast<Eigen::Index>(a),
                                 static_cast<Eigen::Index>(b), c);
            }
    } else {
        // forward-difference edges inside the w-node set, per direction
        struct Edge {
            Eigen::Index a, b;  // quotient (u_b - u_a)/h
            double mx, my;      // midpoint
        };
        std::vector<Edge> edges[2];
        for (std::size_t a = 0; a < m; ++a) {
            const int k = gram.w_nodes[a];
            const int i = k % g.nx, j = k / g.nx;
            if (i + 1 < g.nx) {
                const int kb = gram.node_to_w[static_cast<std::size_t>(k + 1)];
                if (kb >= 0)
                    edges[0].push_back({static_cast<Eigen::Index>(a), kb,
                                        px[a] + 0.5 * h, py[a]});
            }
            if (j + 1 < g.ny) {
                const int kb = gram.node_to_w[static_cast<std::size_t>(k + g.nx)];
                if (kb >= 0)
                    edges[1].push_back({static_cast<Eigen::Index>(a), kb,
                                        px[a], py[a] + 0.5 * h});
            }
        }
        // H^1 gradient mass: h^2 * ((u_b - u_a)/h)^2 per edge sample
        for (int d = 0; d < 2; ++d)
            for (const auto& e : edges[d]) {
                gram.F(e.a, e.a) += 1.0;
                gram.F(e.b, e.b) += 1.0;
                gram.F(e.a, e.b) -= 1.0;
                gram.F(e.b, e.a) -= 1.0;
            }
        // Gagliardo of order s-1 on each gradient component
        const double ex = 2.0 + 2.0 * (s - 1.0);
        for (int d = 0; d < 2; ++d) {
            const auto& es = edges[d];
            for (std::size_t p = 0; p < es.size(); ++p)
                for (std::size_t q = p + 1; q < es.size(); ++q) {
                    const double dx = es[p].mx - es[q].mx, dy = es[p].my - es[q].my;
                    const double c =
                        2.0 * h4 / std::pow(std::sqrt(dx * dx + dy * dy), ex) / (h * h);
                    // c * (Du_p - Du_q)^2 with Du = (u_b - u_a)/h
                    const Eigen::Index idx[4] = {es[p].b, es[p].a, es[q].b, es[q].a};
                    const double sgn[4] = {1.0, -1.0, -1.0, 1.0};
                    for (int r = 0; r < 4; ++r)
                        for (int t = 0; t < 4; ++t) gram.F(idx[r], idx[t]) += c * sgn[r] * sgn[t];
                }
        }
    }

    gram.finalize();
    return gram;
}

inline double w_inner(const WGram& gram, const Field& u, const Field& v) {
    if (u.size() != gram.n_nodes || v.size() != gram.n_nodes)
        throw std::invalid_argument("w_inner: field size mismatch");
    long double acc = 0.0L;
    for (int k = 0; k < gram.n_nodes; ++k) acc += static_cast<long double>(u[k]) * v[k];
    for (int k : gram.w_nodes) acc += static_cast<long double>(u[k]) * v[k];
    acc *= gram.h * gram.h;

    const Eigen::Index mm = static_cast<Eigen::Index>(gram.w_nodes.size());
    for (Eigen::Index a = 0; a < mm; ++a) {
        const double ua = u[gram.w_nodes[static_cast<std::size_t>(a)]];
        if (ua == 0.0) continue;
        long double row = 0.0L;
        for (Eigen::Index b = 0; b < mm; ++b)
            row += static_cast<long double>(gram.F(a, b)) *
                   v[gram.w_nodes[static_cast<std::size_t>(b)]];
        acc += ua * row;
    }
    return static_cast<double>(acc);
}

inline double norm_w(const WGram& gram, const Field& u) {
    const double q = w_inner(gram, u, u);
    return q > 0.0 ? std::sqrt(q) : 0.0;
}

/// Riesz map of the L^2(D) pairing: returns r with (r, v)_W = (q, v)_{L^2(D)}
/// for every grid field v.
inline Field riesz(const WGram& gram, const Field& q) {
    if (q.size() != gram.n_nodes) throw std::invalid_argument("riesz: field size mismatch");
    Field r = q;  // on non-w nodes G is h^2 I, so r = q there
    const Eigen::Index m = static_cast<Eigen::Index>(gram.w_nodes.size());
    Eigen::VectorXd rhs(m);
    for (Eigen::Index a = 0; a < m; ++a)
        rhs[a] = gram.h * gram.h * q[gram.w_nodes[static_cast<std::size_t>(a)]];
    Eigen::VectorXd sol = gram.block_factorization().solve(rhs);
    for (Eigen::Index a = 0; a < m; ++a) r[gram.w_nodes[static_cast<std::size_t>(a)]] = sol[a];
    return r;
}

/// L^2-metric projection onto F = {g <= 0 a.e. in E}: clamp on the nodes
/// strictly inside E, identity elsewhere.
inline Field project_F(const Field& g, const Grid2D& grid) {
    check_field(grid, g, "project_F");
    Field out = g;
    for (int k = 0; k < grid.num_nodes(); ++k)
        if (grid.node_in_E(k) && out[k] > 0.0) out[k] = 0.0;
    return out;
}

inline bool in_F(const Field& g, const Grid2D& grid, double tol = 0.0) {
    check_field(grid, g, "in_F");
    for (int k = 0; k < grid.num_nodes(); ++k)
        if (grid.node_in_E(k) && g[k] > tol) return false;
    return true;
}

}  // namespace nscert
