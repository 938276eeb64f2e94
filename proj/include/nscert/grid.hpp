#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace nscert {

/// Scalar nodal function on the interior nodes of a Grid2D, row-major
/// (index k = j*nx + i).  The homogeneous Dirichlet boundary is implicit:
/// every operation zero-extends across the domain boundary.
using Field = Eigen::VectorXd;

struct Rect {
    double x0 = 0.0, y0 = 0.0, x1 = 1.0, y1 = 1.0;

    double width() const { return x1 - x0; }
    double height() const { return y1 - y0; }
    bool contains_strict(double x, double y) const {
        return x > x0 && x < x1 && y > y0 && y < y1;
    }
    bool contains_closed(double x, double y) const {
        return x >= x0 && x <= x1 && y >= y0 && y <= y1;
    }
    bool strictly_inside(const Rect& outer) const {
        return x0 > outer.x0 && y0 > outer.y0 && x1 < outer.x1 && y1 < outer.y1;
    }
};

/// Boolean mask over the (nx+1) x (ny+1) cells of a grid.
struct CellMask {
    int cnx = 0, cny = 0;          // cells per axis
    std::vector<std::uint8_t> on;  // size cnx*cny, index c = cj*cnx + ci

    int count() const {
        int n = 0;
        for (auto b : on) n += (b != 0);
        return n;
    }
};

/// Boolean mask over the nx x ny interior nodes.
struct NodeMask {
    int nx = 0, ny = 0;
    std::vector<std::uint8_t> on;  // size nx*ny, index k = j*nx + i

    int count() const {
        int n = 0;
        for (auto b : on) n += (b != 0);
        return n;
    }
};

enum class Region { D, E, DE };  // DE = D minus closure(E)

/// Uniform rectangular discretization of D with an interior subdomain E.
///
/// Nodes carry field values; cells (the dual lattice, one layer larger)
/// carry the region masks used by the midpoint quadrature.  Immutable
/// after construction.
struct Grid2D {
    int nx = 0, ny = 0;  // interior nodes per axis
    double h = 0.0;      // uniform mesh width, h = width/(nx+1) = height/(ny+1)
    Rect domain;
    Rect e_rect;
    CellMask mask_E;   // cells with center strictly inside E
    CellMask mask_DE;  // cells with center strictly outside closure(E)
    NodeMask node_E;   // nodes strictly inside E (the constrained set)

    int num_nodes() const { return nx * ny; }
    int num_cells() const { return (nx + 1) * (ny + 1); }

    int node_index(int i, int j) const { return j * nx + i; }
    double node_x(int i) const { return domain.x0 + (i + 1) * h; }
    double node_y(int j) const { return domain.y0 + (j + 1) * h; }

    double cell_cx(int ci) const { return domain.x0 + (ci + 0.5) * h; }
    double cell_cy(int cj) const { return domain.y0 + (cj + 0.5) * h; }

    bool node_in_E(int k) const { return node_E.on[static_cast<std::size_t>(k)] != 0; }

    /// Fraction of the four cells adjacent to node (i,j) that lie in E.
    /// This is the exact weight of node k in the discrete E-quadrature;
    /// it equals chi_E at nodes off dE and 1/2 or 1/4 on dE.
    double e_weight(int i, int j) const {
        int cnt = 0;
        for (int cj = j; cj <= j + 1; ++cj)
            for (int ci = i; ci <= i + 1; ++ci)
                if (mask_E.on[static_cast<std::size_t>(cj * (nx + 1) + ci)]) ++cnt;
        return 0.25 * cnt;
    }

    Field e_weights() const {
        Field w(num_nodes());
        for (int j = 0; j < ny; ++j)
            for (int i = 0; i < nx; ++i) w[node_index(i, j)] = e_weight(i, j);
        return w;
    }

    CellMask full_mask() const {
        CellMask m;
        m.cnx = nx + 1;
        m.cny = ny + 1;
        m.on.assign(static_cast<std::size_t>(m.cnx) * m.cny, 1);
        return m;
    }

    const CellMask& region_mask(Region r) const {
        switch (r) {
            case Region::E: return mask_E;
            case Region::DE: return mask_DE;
            default: break;
        }
        return full_mask_cache_;
    }

    /// Measure estimate of a mask: cell count times h^2.
    double measure(const CellMask& m) const { return m.count() * h * h; }
    double measure(const NodeMask& m) const { return m.count() * h * h; }

    /// Uncertainty band of a mask measure: discrete perimeter times h.
    template <class MaskT>
    double measure_band(const MaskT& m) const {
        return perimeter(m) * h;
    }

    template <class MaskT>
    double perimeter(const MaskT& m) const {
        const auto [w, ht] = mask_dims(m);
        int exposed = 0;
        auto at = [&](int a, int b) -> bool {
            if (a < 0 || a >= w || b < 0 || b >= ht) return false;
            return m.on[static_cast<std::size_t>(b) * w + a] != 0;
        };
        for (int b = 0; b < ht; ++b)
            for (int a = 0; a < w; ++a) {
                if (!at(a, b)) continue;
                exposed += !at(a - 1, b);
                exposed += !at(a + 1, b);
                exposed += !at(a, b - 1);
                exposed += !at(a, b + 1);
            }
        return exposed * h;
    }

    CellMask full_mask_cache_;  // set by build_grid

  private:
    static std::pair<int, int> mask_dims(const CellMask& m) { return {m.cnx, m.cny}; }
    static std::pair<int, int> mask_dims(const NodeMask& m) { return {m.nx, m.ny}; }
};

inline void require(bool cond, const std::string& what) {
    if (!cond) throw std::invalid_argument(what);
}

/// Builds the uniform grid; rejects E touching the boundary of D and
/// axis counts whose implied mesh widths disagree.
inline Grid2D build_grid(int nx, int ny, const Rect& domain_rect, const Rect& e_rect) {
    require(nx >= 3 && ny >= 3, "build_grid: node counts must be >= 3");
    require(domain_rect.width() > 0 && domain_rect.height() > 0,
            "build_grid: degenerate domain rectangle");
    require(e_rect.width() > 0 && e_rect.height() > 0, "build_grid: degenerate E rectangle");
    require(e_rect.strictly_inside(domain_rect),
            "build_grid: E must satisfy d(closure(E), dD) > 0");

    const double hx = domain_rect.width() / (nx + 1);
    const double hy = domain_rect.height() / (ny + 1);
    require(std::abs(hx - hy) <= 1e-12 * std::max(hx, hy),
            "build_grid: mesh width must be uniform across axes (choose counts accordingly)");

    Grid2D g;
    g.nx = nx;
    g.ny = ny;
    g.h = hx;
    g.domain = domain_rect;
    g.e_rect = e_rect;

    const int cnx = nx + 1, cny = ny + 1;
    g.mask_E.cnx = g.mask_DE.cnx = cnx;
    g.mask_E.cny = g.mask_DE.cny = cny;
    g.mask_E.on.assign(static_cast<std::size_t>(cnx) * cny, 0);
    g.mask_DE.on.assign(static_cast<std::size_t>(cnx) * cny, 0);
    for (int cj = 0; cj < cny; ++cj)
        for (int ci = 0; ci < cnx; ++ci) {
            const double x = g.cell_cx(ci), y = g.cell_cy(cj);
            const std::size_t c = static_cast<std::size_t>(cj) * cnx + ci;
            if (e_rect.contains_strict(x, y))
                g.mask_E.on[c] = 1;
            else if (!e_rect.contains_closed(x, y))
                g.mask_DE.on[c] = 1;
        }

    g.node_E.nx = nx;
    g.node_E.ny = ny;
    g.node_E.on.assign(static_cast<std::size_t>(nx) * ny, 0);
    for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i)
            if (e_rect.contains_strict(g.node_x(i), g.node_y(j)))
                g.node_E.on[static_cast<std::size_t>(g.node_index(i, j))] = 1;

    g.full_mask_cache_ = g.full_mask();
    return g;
}

inline void check_field(const Grid2D& g, const Field& v, const char* who) {
    if (v.size() != g.num_nodes())
        throw std::invalid_argument(std::string(who) + ": field size does not match grid");
}

/// 5-point Dirichlet Laplacian, (4 v_ij - sum of neighbors)/h^2 with zero
/// extension across dD.  Returns -Delta_h v as a nodal field.
inline Field apply_laplacian(const Grid2D& g, const Field& v) {
    check_field(g, v, "apply_laplacian");
    Field out(g.num_nodes());
    const double ih2 = 1.0 / (g.h * g.h);
    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i) {
            const int k = g.node_index(i, j);
            double s = 4.0 * v[k];
            if (i > 0) s -= v[k - 1];
            if (i + 1 < g.nx) s -= v[k + 1];
            if (j > 0) s -= v[k - g.nx];
            if (j + 1 < g.ny) s -= v[k + g.nx];
            out[k] = s * ih2;
        }
    return out;
}

namespace detail {
// Bilinear value of a nodal field at a cell center = mean of the four
// corner nodes, out-of-range corners contributing the Dirichlet zero.
inline double cell_center_value(const Grid2D& g, const Field& v, int ci, int cj) {
    double s = 0.0;
    for (int j = cj - 1; j <= cj; ++j)
        for (int i = ci - 1; i <= ci; ++i)
            if (i >= 0 && i < g.nx && j >= 0 && j < g.ny) s += v[g.node_index(i, j)];
    return 0.25 * s;
}
}  // namespace detail

/// Midpoint rule over the selected cells: h^2 * sum of cell-center values.
inline double integrate(const Grid2D& g, const Field& v, const CellMask& mask) {
    check_field(g, v, "integrate");
    if (mask.cnx != g.nx + 1 || mask.cny != g.ny + 1)
        throw std::invalid_argument("integrate: mask does not match grid");
    long double acc = 0.0L;
    for (int cj = 0; cj < mask.cny; ++cj)
        for (int ci = 0; ci < mask.cnx; ++ci)
            if (mask.on[static_cast<std::size_t>(cj) * mask.cnx + ci])
                acc += detail::cell_center_value(g, v, ci, cj);
    return static_cast<double>(acc) * g.h * g.h;
}

inline double integrate(const Grid2D& g, const Field& v, Region r) {
    if (r == Region::D) return integrate(g, v, g.full_mask_cache_);
    return integrate(g, v, g.region_mask(r));
}

/// Discrete (.,.)_h inner product, h^2-weighted nodal sum.
inline double inner_h(const Grid2D& g, const Field& u, const Field& v) {
    check_field(g, u, "inner_h");
    check_field(g, v, "inner_h");
    long double acc = 0.0L;
    for (int k = 0; k < g.num_nodes(); ++k) acc += static_cast<long double>(u[k]) * v[k];
    return static_cast<double>(acc) * g.h * g.h;
}

inline double norm_l2(const Grid2D& g, const Field& u) { return std::sqrt(inner_h(g, u, u)); }

namespace detail {
template <class MaskT>
MaskT dilate_lattice(const MaskT& m, int w, int ht, double radius_over_h) {
    MaskT out = m;
    if (radius_over_h <= 0.0) return out;
    const int r = static_cast<int>(std::floor(radius_over_h + 1e-9));
    const double r2 = radius_over_h * radius_over_h * (1.0 + 1e-12) + 1e-12;
    std::vector<std::pair<int, int>> offsets;
    for (int dj = -r; dj <= r; ++dj)
        for (int di = -r; di <= r; ++di)
            if (di * di + dj * dj <= r2) offsets.emplace_back(di, dj);
    for (int b = 0; b < ht; ++b)
        for (int a = 0; a < w; ++a) {
            if (!m.on[static_cast<std::size_t>(b) * w + a]) continue;
            for (auto [di, dj] : offsets) {
                const int aa = a + di, bb = b + dj;
                if (aa >= 0 && aa < w && bb >= 0 && bb < ht)
                    out.on[static_cast<std::size_t>(bb) * w + aa] = 1;
            }
        }
    return out;
}
}  // namespace detail

/// All cells within Euclidean center-distance `radius` of the input mask.
inline CellMask dilate_mask(const Grid2D& g, const CellMask& m, double radius) {
    require(radius >= 0.0, "dilate_mask: radius must be >= 0");
    return detail::dilate_lattice(m, m.cnx, m.cny, radius / g.h);
}

inline NodeMask dilate_mask(const Grid2D& g, const NodeMask& m, double radius) {
    require(radius >= 0.0, "dilate_mask: radius must be >= 0");
    return detail::dilate_lattice(m, m.nx, m.ny, radius / g.h);
}

inline Field constant_field(const Grid2D& g, double c) {
    return Field::Constant(g.num_nodes(), c);
}

template <class F>
Field field_from(const Grid2D& g, F&& f) {
    Field v(g.num_nodes());
    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i) v[g.node_index(i, j)] = f(g.node_x(i), g.node_y(j));
    return v;
}

}  // namespace nscert
