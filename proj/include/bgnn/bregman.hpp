#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "bgnn/error.hpp"
#include "bgnn/tensor.hpp"

namespace bgnn {

/// An invertible activation rho with its inverse, derivative, and the convex
/// potential phi whose gradient is rho^{-1}. rho maps the reals onto the open
/// interval (domain_lo, domain_hi); phi is defined on that interval. phi is
/// only consumed by the verification oracle, never by training.
struct ActivationPair {
    std::string name;
    std::function<double(double)> forward;            // rho
    std::function<double(double)> inverse;            // rho^{-1}
    std::function<double(double)> forward_derivative; // rho'
    double domain_lo = -std::numeric_limits<double>::infinity();
    double domain_hi = std::numeric_limits<double>::infinity();
    std::function<double(double)> potential;          // phi, up to a constant
    bool has_potential = false;

    bool bounded_below() const { return std::isfinite(domain_lo); }
    bool bounded_above() const { return std::isfinite(domain_hi); }

    bool in_domain(double y, double margin = 0.0) const {
        if (bounded_below() && y < domain_lo + margin) return false;
        if (bounded_above() && y > domain_hi - margin) return false;
        return true;
    }
};

namespace detail {

inline double simpson(const std::function<double(double)>& f,
                      double a, double fa, double b, double fb, double fm) {
    return (b - a) / 6.0 * (fa + 4.0 * fm + fb);
}

inline double adaptive_simpson_rec(const std::function<double(double)>& f,
                                   double a, double fa, double b, double fb,
                                   double m, double fm, double whole,
                                   double eps, int depth) {
    double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    double flm = f(lm), frm = f(rm);
    double left = simpson(f, a, fa, m, fm, flm);
    double right = simpson(f, m, fm, b, fb, frm);
    if (depth <= 0 || std::abs(left + right - whole) <= 15.0 * eps)
        return left + right + (left + right - whole) / 15.0;
    return adaptive_simpson_rec(f, a, fa, m, fm, lm, flm, left, 0.5 * eps, depth - 1) +
           adaptive_simpson_rec(f, m, fm, b, fb, rm, frm, right, 0.5 * eps, depth - 1);
}

/// Adaptive Simpson quadrature of f over [a, b] to absolute tolerance eps.
inline double adaptive_simpson(const std::function<double(double)>& f,
                               double a, double b, double eps) {
    if (a == b) return 0.0;
    double fa = f(a), fb = f(b);
    double m = 0.5 * (a + b), fm = f(m);
    double whole = simpson(f, a, fa, b, fb, fm);
    return adaptive_simpson_rec(f, a, fa, b, fb, m, fm, whole, eps, 60);
}

inline double softplus_fwd(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double softplus_inv(double y) {
    // ln(e^y - 1), written to stay stable for large and tiny y.
    return y > 20.0 ? y + std::log1p(-std::exp(-y)) : std::log(std::expm1(y));
}

inline double sigmoid(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

} // namespace detail

/// The built-in invertible pairs: identity, tanh, arctan, softplus, and
/// leaky_relu with slope 0.2 (the invertible stand-in for ReLU, which has no
/// inverse on the nonpositive half-line). Every pair carries a potential.
inline const std::vector<ActivationPair>& activation_registry() {
    static const std::vector<ActivationPair> pairs = [] {
        const double inf = std::numeric_limits<double>::infinity();
        const double half_pi = std::acos(0.0);
        std::vector<ActivationPair> v;

        v.push_back({"identity",
                     [](double x) { return x; },
                     [](double y) { return y; },
                     [](double) { return 1.0; },
                     -inf, inf,
                     [](double y) { return 0.5 * y * y; },
                     true});

        v.push_back({"tanh",
                     [](double x) { return std::tanh(x); },
                     [](double y) { return std::atanh(y); },
                     [](double x) { double t = std::tanh(x); return 1.0 - t * t; },
                     -1.0, 1.0,
                     // antiderivative of artanh
                     [](double y) { return y * std::atanh(y) + 0.5 * std::log1p(-y * y); },
                     true});

        v.push_back({"arctan",
                     [](double x) { return std::atan(x); },
                     [](double y) { return std::tan(y); },
                     [](double x) { return 1.0 / (1.0 + x * x); },
                     -half_pi, half_pi,
                     // antiderivative of tan
                     [](double y) { return -std::log(std::cos(y)); },
                     true});

        v.push_back({"softplus",
                     detail::softplus_fwd,
                     detail::softplus_inv,
                     detail::sigmoid,
                     0.0, inf,
                     // No elementary antiderivative of ln(e^t - 1) is used;
                     // integrate numerically from the fixed anchor t = 1.
                     // Any anchor works: phi enters only through differences.
                     [](double y) {
                         return detail::adaptive_simpson(detail::softplus_inv,
                                                         1.0, y, 1e-11);
                     },
                     true});

        v.push_back({"leaky_relu",
                     [](double x) { return x >= 0.0 ? x : 0.2 * x; },
                     [](double y) { return y >= 0.0 ? y : 5.0 * y; },
                     [](double x) { return x >= 0.0 ? 1.0 : 0.2; },
                     -inf, inf,
                     [](double y) { return y >= 0.0 ? 0.5 * y * y : 2.5 * y * y; },
                     true});
        return v;
    }();
    return pairs;
}

inline const ActivationPair& activation_by_name(std::string_view name) {
    for (const auto& p : activation_registry())
        if (p.name == name) return p;
    std::string known;
    for (const auto& p : activation_registry()) {
        if (!known.empty()) known += ", ";
        known += p.name;
    }
    throw ConfigError("unknown activation \"" + std::string(name) +
                      "\" (known: " + known + ")");
}

/// rho applied entrywise, differentiable.
inline Tensor apply_forward(Tape& tape, const ActivationPair& pair, const Tensor& x) {
    return elementwise(tape, x, pair.forward, pair.forward_derivative);
}

/// Running count of entries the inverse had to clamp into its domain.
struct ClampStats {
    std::size_t clamped = 0;
    std::size_t total = 0;
};

/// rho^{-1} applied entrywise after clamping each entry into
/// [lo + margin, hi - margin]. The clamp is a stop-gradient: clamped entries
/// contribute zero derivative. Output is always finite.
inline Tensor apply_inverse(Tape& tape, const ActivationPair& pair, const Tensor& x,
                            double clamp_margin = 1e-6, ClampStats* stats = nullptr) {
    if (clamp_margin <= 0.0)
        throw ConfigError("apply_inverse: clamp margin must be positive");
    const double lo = pair.bounded_below() ? pair.domain_lo + clamp_margin
                                           : -std::numeric_limits<double>::infinity();
    const double hi = pair.bounded_above() ? pair.domain_hi - clamp_margin
                                           : std::numeric_limits<double>::infinity();
    Tensor out(x.rows(), x.cols(), 0.0, detail::tracks(tape, x));
    auto clamped = std::make_shared<std::vector<std::uint8_t>>(x.size(), 0);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double v = x.values()[i];
        double c = std::min(std::max(v, lo), hi);
        if (c != v) {
            (*clamped)[i] = 1;
            ++hits;
        }
        out.values()[i] = pair.inverse(c);
    }
    if (stats) {
        stats->clamped += hits;
        stats->total += x.size();
    }
    if (out.requires_grad()) {
        auto xd = x.data(), od = out.data();
        auto fwd_deriv = pair.forward_derivative;
        tape.record({{xd}, od, [xd, od, clamped, fwd_deriv] {
            xd->ensure_grad();
            for (std::size_t i = 0; i < xd->grad.size(); ++i) {
                if ((*clamped)[i]) continue;
                // d rho^{-1}/dy = 1 / rho'(rho^{-1}(y)); the forward output
                // already holds rho^{-1}(y).
                xd->grad[i] += od->grad[i] / fwd_deriv(od->values[i]);
            }
        }});
    }
    return out;
}

/// D_phi(P, Q) = sum over entries of phi(p) - phi(q) - rho^{-1}(q) (p - q).
/// Nonnegative, zero iff P = Q. Oracle-side scalar; not differentiable.
inline double bregman_distance(const ActivationPair& pair, const Tensor& p,
                               const Tensor& q) {
    detail::check_same_shape("bregman_distance", p, q);
    if (!pair.has_potential)
        throw ConfigError("bregman_distance: pair \"" + pair.name +
                          "\" has no potential");
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        double pv = p.values()[i], qv = q.values()[i];
        if (!pair.in_domain(pv) || !pair.in_domain(qv))
            throw NumericError("bregman_distance: entry outside the domain of \"" +
                               pair.name + "\"");
        total += pair.potential(pv) - pair.potential(qv) -
                 pair.inverse(qv) * (pv - qv);
    }
    return total;
}

/// Parameters of the bilinear energy: E couples the two feature blocks, b and
/// c are the bias rows, delta an additive constant. c and delta do not move
/// the argmin over Z; they are kept so the oracle evaluates the exact value.
struct BilinearEnergyParams {
    Tensor E;      // d x d
    Tensor b;      // 1 x d
    Tensor c;      // 1 x d
    double delta = 0.0;
};

/// tr(U E Z^T) - <1 b^T, Z> - <1 c^T, U> + delta. Oracle-side scalar.
inline double bilinear_energy(const BilinearEnergyParams& params, const Tensor& z,
                              const Tensor& u) {
    detail::check_same_shape("bilinear_energy", z, u);
    const std::size_t n = z.rows(), d = z.cols();
    if (params.E.rows() != d || params.E.cols() != d)
        throw ShapeError("bilinear_energy: E is " + params.E.shape_str() +
                         ", expected " + std::to_string(d) + "x" + std::to_string(d));
    if (params.b.rows() != 1 || params.b.cols() != d || params.c.rows() != 1 ||
        params.c.cols() != d)
        throw ShapeError("bilinear_energy: biases are " + params.b.shape_str() +
                         " and " + params.c.shape_str() + ", expected 1x" +
                         std::to_string(d));
    double total = params.delta;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            // (U E)_{ij} Z_{ij}
            double ue = 0.0;
            for (std::size_t k = 0; k < d; ++k)
                ue += u(i, k) * params.E(k, j);
            total += ue * z(i, j);
            total -= params.b(0, j) * z(i, j);
            total -= params.c(0, j) * u(i, j);
        }
    }
    return total;
}

/// The lower-level objective F(Z) = f(Z, U) + D_phi(Z, U): bilinear energy
/// plus the Bregman distance to the same anchor. Oracle-side only; the
/// training path never evaluates it.
inline double lower_level_objective(const ActivationPair& pair,
                                    const BilinearEnergyParams& params,
                                    const Tensor& z, const Tensor& u) {
    return bilinear_energy(params, z, u) + bregman_distance(pair, z, u);
}

} // namespace bgnn
