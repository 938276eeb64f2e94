#pragma once

#include "nscert/grid.hpp"

#include <stdexcept>

namespace nscert {

inline void require_eps(double eps) {
    if (!(eps > 0.0)) throw std::invalid_argument("H_eps: eps must be > 0");
}

/// Regularized Heaviside: 0 for v <= 0, v^2(3 eps - 2 v)/eps^3 on (0, eps),
/// 1 for v >= eps.  C^1 with Lipschitz constant 3/(2 eps).
inline double h_eps(double v, double eps) {
    require_eps(eps);
    if (v <= 0.0) return 0.0;
    if (v >= eps) return 1.0;
    return v * v * (3.0 * eps - 2.0 * v) / (eps * eps * eps);
}

/// Derivative of h_eps: 6 v (eps - v)/eps^3 on (0, eps), 0 outside.
inline double h_eps_prime(double v, double eps) {
    require_eps(eps);
    if (v <= 0.0 || v >= eps) return 0.0;
    return 6.0 * v * (eps - v) / (eps * eps * eps);
}

inline Field h_eps_field(const Field& g, double eps) {
    require_eps(eps);
    Field out(g.size());
    for (Eigen::Index k = 0; k < g.size(); ++k) out[k] = h_eps(g[k], eps);
    return out;
}

inline Field h_eps_prime_field(const Field& g, double eps) {
    require_eps(eps);
    Field out(g.size());
    for (Eigen::Index k = 0; k < g.size(); ++k) out[k] = h_eps_prime(g[k], eps);
    return out;
}

}  // namespace nscert
