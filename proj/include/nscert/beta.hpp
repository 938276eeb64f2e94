#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace nscert {

/// A scalar monotone nonlinearity with one-sided derivatives.  The state,
/// linearized and adjoint solvers only see this surface, so the same code
/// runs the non-smooth problem and its mollified regularizations.
class Nonlinearity {
  public:
    virtual ~Nonlinearity() = default;
    virtual double value(double z) const = 0;
    virtual double d_plus(double z) const = 0;   // right derivative
    virtual double d_minus(double z) const = 0;  // left derivative

    /// beta'(z; d) = d_plus(z) * max(d,0) + d_minus(z) * min(d,0).
    double dir_deriv(double z, double d) const {
        return d >= 0.0 ? d_plus(z) * d : d_minus(z) * d;
    }
};

enum class KinkKind { Convex, Concave };

/// Non-decreasing continuous piecewise-linear function with finitely many
/// kinks.  breakpoints z_1 < ... < z_K, slopes m_0 ... m_K on the open
/// intervals, anchored by the value at zero.  delta is the uniform
/// half-width of the disjoint kink neighborhoods [z_k - delta, z_k + delta].
class PiecewiseLinearBeta final : public Nonlinearity {
  public:
    PiecewiseLinearBeta(std::vector<double> breakpoints, std::vector<double> slopes,
                        double value_at_zero, double delta)
        : breakpoints_(std::move(breakpoints)),
          slopes_(std::move(slopes)),
          value_at_zero_(value_at_zero),
          delta_(delta) {
        validate();
        anchor();
    }

    const std::vector<double>& breakpoints() const { return breakpoints_; }
    const std::vector<double>& slopes() const { return slopes_; }
    double value_at_zero() const { return value_at_zero_; }
    double delta() const { return delta_; }
    double lipschitz() const { return *std::max_element(slopes_.begin(), slopes_.end()); }

    double value(double z) const override {
        const std::size_t s = segment(z);
        return anchors_[s] + slopes_[s] * (z - anchor_pts_[s]);
    }

    double d_plus(double z) const override {
        // slope of the interval to the right of z
        std::size_t s = segment(z);
        if (s < breakpoints_.size() && z == breakpoints_[s]) return slopes_[s + 1];
        return slopes_[s];
    }

    double d_minus(double z) const override { return slopes_[segment(z)]; }

    /// Distance from z to the nearest breakpoint (+inf if none).
    double dist_to_kinks(double z) const {
        double d = std::numeric_limits<double>::infinity();
        for (double b : breakpoints_) d = std::min(d, std::abs(z - b));
        return d;
    }

    bool is_breakpoint(double z) const {
        return std::find(breakpoints_.begin(), breakpoints_.end(), z) != breakpoints_.end();
    }

  private:
    void validate() {
        if (slopes_.size() != breakpoints_.size() + 1)
            throw std::invalid_argument("beta: need one slope per interval (K+1 slopes)");
        for (double m : slopes_)
            if (!(m >= 0.0)) throw std::invalid_argument("beta: slopes must be >= 0 (monotone)");
        for (std::size_t k = 0; k + 1 < breakpoints_.size(); ++k)
            if (!(breakpoints_[k] < breakpoints_[k + 1]))
                throw std::invalid_argument("beta: breakpoints must be strictly increasing");
        for (std::size_t k = 0; k + 1 < slopes_.size(); ++k)
            if (slopes_[k] == slopes_[k + 1])
                throw std::invalid_argument("beta: adjacent slopes equal, point is not a kink");
        if (!breakpoints_.empty()) {
            if (!(delta_ > 0.0)) throw std::invalid_argument("beta: delta must be > 0");
            for (std::size_t k = 0; k + 1 < breakpoints_.size(); ++k)
                if (!(breakpoints_[k + 1] - breakpoints_[k] > 2.0 * delta_))
                    throw std::invalid_argument("beta: kink neighborhoods must be disjoint");
        }
    }

    // Precompute one anchor point/value per segment so evaluation is O(K)
    // lookup + one multiply and stays exactly continuous across kinks.
    void anchor() {
        const std::size_t n = slopes_.size();
        anchors_.assign(n, 0.0);
        anchor_pts_.assign(n, 0.0);
        const std::size_t s0 = segment(0.0);
        anchors_[s0] = value_at_zero_;
        anchor_pts_[s0] = 0.0;
        for (std::size_t s = s0; s + 1 < n; ++s) {
            const double b = breakpoints_[s];
            anchors_[s + 1] = anchors_[s] + slopes_[s] * (b - anchor_pts_[s]);
            anchor_pts_[s + 1] = b;
        }
        for (std::size_t s = s0; s > 0; --s) {
            const double b = breakpoints_[s - 1];
            anchors_[s - 1] = anchors_[s] + slopes_[s] * (b - anchor_pts_[s]);
            anchor_pts_[s - 1] = b;
        }
    }

    // Index of the interval containing z; a breakpoint belongs to the
    // interval on its left (d_minus convention).
    std::size_t segment(double z) const {
        std::size_t s = 0;
        while (s < breakpoints_.size() && z > breakpoints_[s]) ++s;
        return s;
    }

    std::vector<double> breakpoints_;
    std::vector<double> slopes_;
    double value_at_zero_;
    double delta_;
    std::vector<double> anchors_;
    std::vector<double> anchor_pts_;
};

inline double beta_eval(const PiecewiseLinearBeta& b, double z) { return b.value(z); }

inline double beta_dir_deriv(const Nonlinearity& b, double z, double d) {
    return b.dir_deriv(z, d);
}

/// Convex iff the slope jumps up across the breakpoint.
inline KinkKind classify_kink(const PiecewiseLinearBeta& b, double z) {
    const auto& bp = b.breakpoints();
    auto it = std::find(bp.begin(), bp.end(), z);
    if (it == bp.end())
        throw std::invalid_argument("classify_kink: smooth point, not a breakpoint");
    const std::size_t k = static_cast<std::size_t>(it - bp.begin());
    return b.slopes()[k + 1] > b.slopes()[k] ? KinkKind::Convex : KinkKind::Concave;
}

/// Fixed smooth even bump psi(s) = c * exp(-1/(1-s^2)) on (-1,1), with a
/// Gauss-Legendre rule on [-1,1] whose nodes are symmetric; c is chosen so
/// the rule integrates psi to exactly 1.
class MollifierPsi {
  public:
    explicit MollifierPsi(int order = 64) { build(order); }

    int order() const { return static_cast<int>(nodes_.size()); }
    const std::vector<double>& nodes() const { return nodes_; }
    const std::vector<double>& weights() const { return weights_; }
    double normalization() const { return c_; }

    double psi(double s) const {
        if (std::abs(s) >= 1.0) return 0.0;
        return c_ * std::exp(-1.0 / (1.0 - s * s));
    }

    /// Quadrature of f(s) psi(s) ds over [-1,1].
    template <class F>
    double convolve(F&& f) const {
        long double acc = 0.0L;
        for (std::size_t q = 0; q < nodes_.size(); ++q)
            acc += static_cast<long double>(weights_[q]) * psi(nodes_[q]) * f(nodes_[q]);
        return static_cast<double>(acc);
    }

  private:
    void build(int n) {
        if (n < 8) throw std::invalid_argument("MollifierPsi: order too small");
        nodes_.resize(n);
        weights_.resize(n);
        // Gauss-Legendre nodes by Newton iteration on P_n.
        for (int i = 0; i < n; ++i) {
            double x = std::cos(M_PI * (i + 0.75) / (n + 0.5));
            for (int it = 0; it < 100; ++it) {
                double p0 = 1.0, p1 = x;
                for (int k = 2; k <= n; ++k) {
                    const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                    p0 = p1;
                    p1 = p2;
                }
                const double dp = n * (x * p1 - p0) / (x * x - 1.0);
                const double dx = p1 / dp;
                x -= dx;
                if (std::abs(dx) < 1e-16) break;
            }
            double p0 = 1.0, p1 = x;
            for (int k = 2; k <= n; ++k) {
                const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            const double dp = n * (x * p1 - p0) / (x * x - 1.0);
            nodes_[static_cast<std::size_t>(i)] = x;
            weights_[static_cast<std::size_t>(i)] = 2.0 / ((1.0 - x * x) * dp * dp);
        }
        // Symmetrize exactly so even integrands see a symmetric rule.
        for (int i = 0; i < n / 2; ++i) {
            const int jj = n - 1 - i;
            const double xm = 0.5 * (nodes_[jj] - nodes_[i]);
            nodes_[i] = -xm;
            nodes_[jj] = xm;
            const double wm = 0.5 * (weights_[i] + weights_[jj]);
            weights_[i] = weights_[jj] = wm;
        }
        c_ = 1.0;
        long double raw = 0.0L;
        for (int i = 0; i < n; ++i)
            raw += static_cast<long double>(weights_[i]) *
                   std::exp(-1.0 / (1.0 - nodes_[i] * nodes_[i]));
        c_ = static_cast<double>(1.0L / raw);
    }

    std::vector<double> nodes_;
    std::vector<double> weights_;
    double c_ = 1.0;
};

inline void require_gamma(double gamma) {
    if (!(gamma > 0.0)) throw std::invalid_argument("mollify: gamma must be > 0");
}

/// beta_gamma(v) = integral of beta(v - gamma s) psi(s) ds.
inline double mollify(const Nonlinearity& beta, const MollifierPsi& psi, double gamma,
                      double v) {
    require_gamma(gamma);
    return psi.convolve([&](double s) { return beta.value(v - gamma * s); });
}

/// beta_gamma'(v) via the a.e. slope of beta under the integral.
inline double mollify_deriv(const Nonlinearity& beta, const MollifierPsi& psi, double gamma,
                            double v) {
    require_gamma(gamma);
    return psi.convolve([&](double s) { return beta.d_plus(v - gamma * s); });
}

/// The mollified family beta_gamma as a smooth Nonlinearity.
class MollifiedBeta final : public Nonlinearity {
  public:
    MollifiedBeta(const Nonlinearity& base, const MollifierPsi& psi, double gamma)
        : base_(&base), psi_(&psi), gamma_(gamma) {
        require_gamma(gamma);
    }

    double gamma() const { return gamma_; }

    double value(double z) const override { return mollify(*base_, *psi_, gamma_, z); }
    double d_plus(double z) const override { return mollify_deriv(*base_, *psi_, gamma_, z); }
    double d_minus(double z) const override { return d_plus(z); }

  private:
    const Nonlinearity* base_;
    const MollifierPsi* psi_;
    double gamma_;
};

}  // namespace nscert
