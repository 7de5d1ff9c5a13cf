#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "bgnn/bregman.hpp"
#include "bgnn/error.hpp"
#include "bgnn/layers.hpp"
#include "bgnn/rng.hpp"
#include "bgnn/sparse.hpp"
#include "bgnn/tensor.hpp"

namespace bgnn {

/// Tolerances of the numerical certificates. The gradient bound matches the
/// certificate's pass condition; step and radius balance discretization
/// against round-off at 64-bit precision.
inline constexpr double kGradTol = 1e-6;
inline constexpr double kFiniteDiffStep = 1e-5;
inline constexpr double kPerturbRadius = 1e-2;
inline constexpr int kPerturbTrials = 100;

/// Central-difference gradient of a scalar function, entry by entry.
inline Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f,
                               const Tensor& x, double step) {
    if (step <= 0.0)
        throw ConfigError("finite_diff_grad: step must be positive");
    Tensor grad(x.rows(), x.cols());
    Tensor work = x.clone();
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = work.values()[i];
        work.values()[i] = orig + step;
        const double fp = f(work);
        work.values()[i] = orig - step;
        const double fm = f(work);
        work.values()[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw NumericError("finite_diff_grad: non-finite value at entry " +
                               std::to_string(i));
        grad.values()[i] = (fp - fm) / (2.0 * step);
    }
    return grad;
}

/// Outcome of one argmin check: the gradient of the layer objective at the
/// candidate point, and the smallest objective increase over random
/// perturbations of fixed radius.
struct Certificate {
    std::string pair;
    std::string aggregator = "given";
    std::size_t n = 0, d = 0;
    double grad_inf_norm = 0.0;
    double min_perturbation_increase = 0.0;
    bool pass = false;
};

/// Checks a candidate Z against the layer objective
///   F(Z) = bilinear_energy(E = -W, b, c, delta; Z, U) + D_phi(Z, U M),
/// with c and delta drawn at random: they shift F by a constant, so the
/// check also confirms they do not move the minimizer. The gradient is taken
/// by central differences, independent of any closed-form algebra. PASS iff
/// the gradient infinity norm is below kGradTol and every perturbation of
/// Frobenius norm `radius` increases F.
inline Certificate certify_point(const ActivationPair& pair,
                                 const BregmanLayerParams& params, const Tensor& u,
                                 const Tensor& z, int trials, double radius,
                                 Rng& rng) {
    if (!pair.has_potential)
        throw ConfigError("certify_point: pair \"" + pair.name +
                          "\" has no potential");
    if (trials < 1)
        throw ConfigError("certify_point: need at least one perturbation trial");
    if (radius <= 0.0)
        throw ConfigError("certify_point: radius must be positive");

    const std::size_t n = z.rows(), d = z.cols();
    Tape notape(false);
    const Tensor anchor = matmul(notape, u, params.M);
    const double feas_margin = radius + 1e-4;
    for (std::size_t i = 0; i < anchor.size(); ++i)
        if (!pair.in_domain(anchor.values()[i], 1e-7))
            throw NumericError("certify_point: anchor U M leaves the domain of \"" +
                               pair.name + "\"");
    for (std::size_t i = 0; i < z.size(); ++i)
        if (!pair.in_domain(z.values()[i], feas_margin))
            throw NumericError("certify_point: candidate too close to the domain "
                               "boundary for radius " + std::to_string(radius));

    BilinearEnergyParams energy;
    energy.E = Tensor(d, d);
    for (std::size_t i = 0; i < energy.E.size(); ++i)
        energy.E.values()[i] = -params.W.values()[i];
    energy.b = params.b;
    energy.c = Tensor(1, d);
    for (auto& v : energy.c.values()) v = rng.uniform(-1.0, 1.0);
    energy.delta = rng.uniform(-1.0, 1.0);

    const auto objective = [&](const Tensor& point) {
        return bilinear_energy(energy, point, u) +
               bregman_distance(pair, point, anchor);
    };

    Certificate cert;
    cert.pair = pair.name;
    cert.n = n;
    cert.d = d;

    const Tensor grad = finite_diff_grad(objective, z, kFiniteDiffStep);
    for (double g : grad.values())
        cert.grad_inf_norm = std::max(cert.grad_inf_norm, std::abs(g));

    const double f0 = objective(z);
    double min_increase = std::numeric_limits<double>::infinity();
    Tensor probe = z.clone();
    for (int t = 0; t < trials; ++t) {
        std::vector<double> delta(z.size());
        double norm = 0.0;
        for (auto& v : delta) {
            v = rng.normal();
            norm += v * v;
        }
        norm = std::sqrt(norm);
        const double scl = radius / norm;
        for (std::size_t i = 0; i < z.size(); ++i)
            probe.values()[i] = z.values()[i] + delta[i] * scl;
        min_increase = std::min(min_increase, objective(probe) - f0);
    }
    cert.min_perturbation_increase = min_increase;
    cert.pass = cert.grad_inf_norm < kGradTol && min_increase > 0.0;
    return cert;
}

/// Certifies that the closed-form layer output minimizes the layer objective
/// for the given propagated features U. Throws NumericError when the
/// instance is infeasible (clamping fired or the output sits too close to
/// the domain boundary); callers regenerate such instances.
inline Certificate certify_argmin(const ActivationPair& pair,
                                  const BregmanLayerParams& params,
                                  const Tensor& u, int trials, double radius,
                                  Rng& rng) {
    Tape notape(false);
    ClampStats stats;
    const Tensor z = bregman_closed_form(notape, params, pair, u, 1e-6, &stats);
    if (stats.clamped > 0)
        throw NumericError("certify_argmin: closed form clamped " +
                           std::to_string(stats.clamped) + " entries");
    return certify_point(pair, params, u, z, trials, radius, rng);
}

/// A random small layer problem: graph, propagated features U through the
/// chosen aggregator, and layer parameters scaled to keep everything inside
/// the activation's domain for most draws.
struct CertificateInstance {
    BregmanLayerParams params;
    Tensor u;
    std::size_t n = 0, d = 0;
};

inline CertificateInstance make_certificate_instance(const ActivationPair& pair,
                                                     AggregatorKind kind,
                                                     std::size_t n, std::size_t d,
                                                     Rng& rng) {
    // Path backbone keeps the graph connected; extra edges vary the degrees.
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    for (std::size_t i = 0; i + 1 < n; ++i) edges.emplace_back(i, i + 1);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 2; j < n; ++j)
            if (rng.uniform() < 0.3) edges.emplace_back(i, j);
    const GraphOps gops = GraphOps::build(SparseMatrix::from_edges(n, edges));

    const bool positive = pair.bounded_below() && pair.domain_lo >= 0.0;
    Tensor z0(n, d);
    for (auto& v : z0.values())
        v = positive ? rng.uniform(0.1, 0.9)
                     : rng.uniform(-0.6, 0.6);

    Aggregator agg;
    agg.kind = kind;
    if (kind == AggregatorKind::Gat) {
        for (int h = 0; h < 2; ++h) {
            Tensor src(1, d), dst(1, d);
            for (auto& v : src.values()) v = rng.uniform(-0.3, 0.3);
            for (auto& v : dst.values()) v = rng.uniform(-0.3, 0.3);
            agg.attn_src.push_back(src);
            agg.attn_dst.push_back(dst);
        }
    }
    Tape notape(false);

    CertificateInstance inst;
    inst.n = n;
    inst.d = d;
    inst.u = agg.propagate(notape, gops, z0);
    inst.params.M = Tensor(d, d);
    const double off = d > 1 ? 0.1 / static_cast<double>(d - 1) : 0.0;
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j)
            inst.params.M(i, j) = i == j ? rng.uniform(0.3, 0.5)
                                  : positive ? rng.uniform(0.0, off)
                                             : rng.uniform(-off, off);
    inst.params.W = Tensor(d, d);
    for (auto& v : inst.params.W.values()) v = rng.uniform(-0.05, 0.05);
    inst.params.b = Tensor(1, d);
    for (auto& v : inst.params.b.values()) v = rng.uniform(-0.05, 0.05);
    return inst;
}

/// Generates instances until one is feasible and certifies it. Dimensions
/// are drawn from n in {3..8}, d in {2..5}.
inline Certificate certify_random_instance(const ActivationPair& pair,
                                           AggregatorKind kind, int trials,
                                           double radius, Rng& rng) {
    for (int attempt = 0; attempt < 100; ++attempt) {
        const std::size_t n = 3 + static_cast<std::size_t>(rng.integer(6));
        const std::size_t d = 2 + static_cast<std::size_t>(rng.integer(4));
        CertificateInstance inst = make_certificate_instance(pair, kind, n, d, rng);
        try {
            Certificate cert =
                certify_argmin(pair, inst.params, inst.u, trials, radius, rng);
            cert.aggregator = aggregator_name(kind);
            return cert;
        } catch (const NumericError&) {
            continue;
        }
    }
    throw NumericError("certify_random_instance: instance infeasible after "
                       "100 attempts (pair \"" + pair.name + "\", aggregator " +
                       aggregator_name(kind) + ")");
}

/// Mean squared distance between the L2-row-normalized features of adjacent
/// nodes: (1/|E|) sum over undirected edges of ||z_i - z_j||^2. Low values
/// mean the representation has smoothed out across the graph.
inline double smoothness_metric(const Tensor& z, const SparseMatrix& adj) {
    if (z.rows() != adj.size())
        throw ShapeError("smoothness_metric: features " + z.shape_str() +
                         " vs " + std::to_string(adj.size()) + "-node graph");
    const std::size_t n = z.rows(), d = z.cols();
    std::vector<double> inv_norm(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) s += z(i, c) * z(i, c);
        if (s > 0.0) inv_norm[i] = 1.0 / std::sqrt(s);
    }
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = adj.row_begin(i); k < adj.row_end(i); ++k) {
            const std::size_t j = adj.col(k);
            if (j <= i) continue; // undirected edge counted once
            ++count;
            for (std::size_t c = 0; c < d; ++c) {
                const double diff = z(i, c) * inv_norm[i] - z(j, c) * inv_norm[j];
                total += diff * diff;
            }
        }
    if (count == 0)
        throw NumericError("smoothness_metric: graph has no edges");
    return total / static_cast<double>(count);
}

} // namespace bgnn
