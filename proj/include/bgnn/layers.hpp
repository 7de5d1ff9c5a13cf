#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "bgnn/bregman.hpp"
#include "bgnn/dataset.hpp"
#include "bgnn/error.hpp"
#include "bgnn/rng.hpp"
#include "bgnn/sparse.hpp"
#include "bgnn/tensor.hpp"

namespace bgnn {

enum class AggregatorKind { Gcn, Gat, Sage, Appnp };

inline AggregatorKind aggregator_from_name(std::string_view name) {
    if (name == "gcn") return AggregatorKind::Gcn;
    if (name == "gat") return AggregatorKind::Gat;
    if (name == "sage") return AggregatorKind::Sage;
    if (name == "appnp") return AggregatorKind::Appnp;
    throw ConfigError("unknown model \"" + std::string(name) +
                      "\" (known: gcn, gat, sage, appnp)");
}

inline const char* aggregator_name(AggregatorKind kind) {
    switch (kind) {
        case AggregatorKind::Gcn: return "gcn";
        case AggregatorKind::Gat: return "gat";
        case AggregatorKind::Sage: return "sage";
        case AggregatorKind::Appnp: return "appnp";
    }
    return "?";
}

/// Propagation operators derived once per graph and shared by every layer.
struct GraphOps {
    SparseMatrix adj;       // symmetric adjacency, no self-loops
    SparseMatrix adj_sym;   // D^{-1/2} (A + I) D^{-1/2}
    SparseMatrix adj_mean;  // D^{-1} A
    SparseMatrix adj_loops; // A + I pattern for attention neighborhoods

    static GraphOps build(const SparseMatrix& adj) {
        GraphOps ops;
        ops.adj = adj;
        ops.adj_sym = normalize_sym(adj, true);
        ops.adj_mean = normalize_row(adj);
        ops.adj_loops = with_self_loops(adj);
        return ops;
    }

    static GraphOps build(const GraphDataset& ds) {
        return build(SparseMatrix::from_edges(ds.num_nodes(), ds.edges));
    }
};

/// One attention head: out_i = sum over j in N(i) of alpha_ij h_j, with
/// alpha = softmax over i's neighborhood of LeakyReLU(0.2)(sc_i + sn_j).
/// The neighborhood is the rows of adj_loops (pattern only, values ignored),
/// so every node attends at least to itself. Differentiable in sc, sn, h.
inline Tensor attention_aggregate(Tape& tape, const SparseMatrix& adj_loops,
                                  const Tensor& sc, const Tensor& sn,
                                  const Tensor& h) {
    const std::size_t n = adj_loops.size(), d = h.cols();
    if (h.rows() != n || sc.rows() != n || sc.cols() != 1 || sn.rows() != n ||
        sn.cols() != 1)
        throw ShapeError("attention_aggregate: scores " + sc.shape_str() + "/" +
                         sn.shape_str() + " and features " + h.shape_str() +
                         " do not fit a " + std::to_string(n) + "-node graph");

    auto alpha = std::make_shared<std::vector<double>>(adj_loops.nnz());
    auto steep = std::make_shared<std::vector<std::uint8_t>>(adj_loops.nnz());
    Tensor out(n, d, 0.0,
               tape.recording() && (sc.requires_grad() || sn.requires_grad() ||
                                    h.requires_grad()));
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t kb = adj_loops.row_begin(i), ke = adj_loops.row_end(i);
        if (kb == ke)
            throw NumericError("attention_aggregate: node " + std::to_string(i) +
                               " has an empty neighborhood");
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t k = kb; k < ke; ++k) {
            double raw = sc(i, 0) + sn(adj_loops.col(k), 0);
            bool pos = raw >= 0.0;
            (*steep)[k] = pos;
            double s = pos ? raw : 0.2 * raw;
            (*alpha)[k] = s;
            mx = std::max(mx, s);
        }
        double z = 0.0;
        for (std::size_t k = kb; k < ke; ++k) {
            double e = std::exp((*alpha)[k] - mx);
            (*alpha)[k] = e;
            z += e;
        }
        double* o = out.values().data() + i * d;
        for (std::size_t k = kb; k < ke; ++k) {
            (*alpha)[k] /= z;
            const double a = (*alpha)[k];
            const double* hr = h.values().data() + adj_loops.col(k) * d;
            for (std::size_t c = 0; c < d; ++c) o[c] += a * hr[c];
        }
    }
    if (out.requires_grad()) {
        auto csr = adj_loops.data();
        auto scd = sc.data(), snd = sn.data(), hd = h.data(), od = out.data();
        tape.record({{scd, snd, hd}, od, [csr, scd, snd, hd, od, alpha, steep, n, d] {
            const bool want_scores = scd->requires_grad || snd->requires_grad;
            if (scd->requires_grad) scd->ensure_grad();
            if (snd->requires_grad) snd->ensure_grad();
            if (hd->requires_grad) hd->ensure_grad();
            std::vector<double> dalpha;
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t kb = csr->row_ptr[i], ke = csr->row_ptr[i + 1];
                const double* g = od->grad.data() + i * d;
                dalpha.assign(ke - kb, 0.0);
                double dot = 0.0;
                for (std::size_t k = kb; k < ke; ++k) {
                    const std::size_t j = csr->col_idx[k];
                    const double a = (*alpha)[k];
                    const double* hj = hd->values.data() + j * d;
                    if (hd->requires_grad) {
                        double* hg = hd->grad.data() + j * d;
                        for (std::size_t c = 0; c < d; ++c) hg[c] += a * g[c];
                    }
                    if (want_scores) {
                        double da = 0.0;
                        for (std::size_t c = 0; c < d; ++c) da += g[c] * hj[c];
                        dalpha[k - kb] = da;
                        dot += a * da;
                    }
                }
                if (!want_scores) continue;
                for (std::size_t k = kb; k < ke; ++k) {
                    const double ds = (*alpha)[k] * (dalpha[k - kb] - dot);
                    const double draw = ds * ((*steep)[k] ? 1.0 : 0.2);
                    if (scd->requires_grad) scd->grad[i] += draw;
                    if (snd->requires_grad) snd->grad[csr->col_idx[k]] += draw;
                }
            }
        }});
    }
    return out;
}

/// A parameter-free (up to attention vectors) propagation operator P mapping
/// n x d features to n x d features. This is the P(Z) a Bregman layer wraps.
struct Aggregator {
    AggregatorKind kind = AggregatorKind::Gcn;
    std::vector<Tensor> attn_src, attn_dst; // gat: one 1 x d vector per head
    double appnp_alpha = 0.1;
    int appnp_steps = 10;

    Tensor propagate(Tape& tape, const GraphOps& gops, const Tensor& z) const;
};

/// Z(k+1) = (1 - alpha) A Z(k) + alpha H from Z(0) = H: K steps of
/// personalized-PageRank propagation.
inline Tensor appnp_propagate(Tape& tape, const SparseMatrix& adj_norm,
                              const Tensor& h, double alpha, int steps) {
    if (alpha <= 0.0 || alpha > 1.0)
        throw ConfigError("appnp_propagate: alpha must lie in (0, 1]");
    if (steps < 0)
        throw ConfigError("appnp_propagate: negative step count");
    Tensor z = h;
    Tensor teleport = scale(tape, h, alpha);
    for (int k = 0; k < steps; ++k)
        z = add(tape, scale(tape, spmm(tape, adj_norm, z), 1.0 - alpha), teleport);
    return z;
}

inline Tensor Aggregator::propagate(Tape& tape, const GraphOps& gops,
                                    const Tensor& z) const {
    switch (kind) {
        case AggregatorKind::Gcn:
            return spmm(tape, gops.adj_sym, z);
        case AggregatorKind::Sage:
            return add(tape, z, spmm(tape, gops.adj_mean, z));
        case AggregatorKind::Appnp:
            return appnp_propagate(tape, gops.adj_sym, z, appnp_alpha, appnp_steps);
        case AggregatorKind::Gat: {
            if (attn_src.empty() || attn_src.size() != attn_dst.size())
                throw ConfigError("Aggregator: gat needs matching attention heads");
            Tensor acc;
            for (std::size_t k = 0; k < attn_src.size(); ++k) {
                Tensor sc = matmul(tape, z, transpose(tape, attn_src[k]));
                Tensor sn = matmul(tape, z, transpose(tape, attn_dst[k]));
                Tensor head = attention_aggregate(tape, gops.adj_loops, sc, sn, z);
                acc = k == 0 ? head : add(tape, acc, head);
            }
            return scale(tape, acc, 1.0 / static_cast<double>(attn_src.size()));
        }
    }
    throw ConfigError("Aggregator: unknown kind");
}

/// Weights of one Bregman layer. The coupling matrix E of the underlying
/// energy is not stored: E = -W throughout.
struct BregmanLayerParams {
    Tensor M; // d x d
    Tensor W; // d x d
    Tensor b; // 1 x d
};

/// rho( clamp(rho^{-1}(U M)) + U W + 1 b^T ) for already-propagated features
/// U. This closed form is shared between the layer forward pass and the
/// argmin certificate, which feeds it a fixed U.
inline Tensor bregman_closed_form(Tape& tape, const BregmanLayerParams& params,
                                  const ActivationPair& pair, const Tensor& u,
                                  double clamp_margin = 1e-6,
                                  ClampStats* stats = nullptr) {
    const std::size_t d = u.cols();
    if (params.M.rows() != d || params.M.cols() != d || params.W.rows() != d ||
        params.W.cols() != d || params.b.rows() != 1 || params.b.cols() != d)
        throw ShapeError("bregman_closed_form: features " + u.shape_str() +
                         " need square " + std::to_string(d) + "-wide parameters, got M " +
                         params.M.shape_str() + ", W " + params.W.shape_str() + ", b " +
                         params.b.shape_str());
    Tensor skip = apply_inverse(tape, pair, matmul(tape, u, params.M),
                                clamp_margin, stats);
    Tensor lin = matmul(tape, u, params.W);
    Tensor pre = add_row_broadcast(tape, add(tape, skip, lin), params.b);
    return apply_forward(tape, pair, pre);
}

/// One Bregman layer: propagate with the aggregator, then apply the closed
/// form. Width-preserving (n x d in, n x d out).
inline Tensor bregman_forward(Tape& tape, const BregmanLayerParams& params,
                              const ActivationPair& pair, const Aggregator& agg,
                              const GraphOps& gops, const Tensor& z,
                              double clamp_margin = 1e-6,
                              ClampStats* stats = nullptr) {
    Tensor u = agg.propagate(tape, gops, z);
    return bregman_closed_form(tape, params, pair, u, clamp_margin, stats);
}

/// A (Z W) with A the normalized adjacency. Pre-activation output. The
/// grouping multiplies the weight first; the value equals (A Z) W.
inline Tensor gcn_forward(Tape& tape, const Tensor& weight,
                          const SparseMatrix& adj_norm, const Tensor& z) {
    return spmm(tape, adj_norm, matmul(tape, z, weight));
}

/// Multi-head GAT layer with a shared projection: h = Z W, per-head additive
/// attention scores from attn_src/attn_dst, heads averaged. Pre-activation.
inline Tensor gat_forward(Tape& tape, const Tensor& weight,
                          const std::vector<Tensor>& attn_src,
                          const std::vector<Tensor>& attn_dst,
                          const SparseMatrix& adj_loops, const Tensor& z) {
    if (attn_src.empty() || attn_src.size() != attn_dst.size())
        throw ConfigError("gat_forward: need matching, nonempty attention heads");
    Tensor h = matmul(tape, z, weight);
    Tensor acc;
    for (std::size_t k = 0; k < attn_src.size(); ++k) {
        Tensor sc = matmul(tape, h, transpose(tape, attn_src[k]));
        Tensor sn = matmul(tape, h, transpose(tape, attn_dst[k]));
        Tensor head = attention_aggregate(tape, adj_loops, sc, sn, h);
        acc = k == 0 ? head : add(tape, acc, head);
    }
    return scale(tape, acc, 1.0 / static_cast<double>(attn_src.size()));
}

/// Z w_self + (D^{-1} A Z) w_neigh: mean-aggregator GraphSAGE, pre-activation.
inline Tensor sage_forward(Tape& tape, const Tensor& weight_self,
                           const Tensor& weight_neigh,
                           const SparseMatrix& adj_mean, const Tensor& z) {
    return add(tape, matmul(tape, z, weight_self),
               spmm(tape, adj_mean, matmul(tape, z, weight_neigh)));
}

struct ModelConfig {
    AggregatorKind base = AggregatorKind::Gcn;
    bool bregman_enhanced = false;
    int depth = 3;          // layers including the output head
    std::size_t hidden = 64;
    std::string activation = "tanh";
    double dropout = 0.5;
    std::size_t in_dim = 0;  // filled from the dataset
    std::size_t out_dim = 0; // filled from the dataset
    int heads = 8;
    double appnp_alpha = 0.1;
    int appnp_steps = 10;
    double clamp_margin = 1e-6;
};

namespace detail {

inline Tensor glorot(Rng& rng, std::size_t rows, std::size_t cols) {
    Tensor t(rows, cols, 0.0, true);
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    for (auto& v : t.values()) v = rng.uniform(-limit, limit);
    return t;
}

} // namespace detail

/// One standard message-passing layer (the kind-specific weights only).
struct BaseLayer {
    AggregatorKind kind = AggregatorKind::Gcn;
    Tensor weight;                          // gcn/gat/appnp; sage: self path
    Tensor weight_neigh;                    // sage only
    std::vector<Tensor> attn_src, attn_dst; // gat only
};

/// A full node-classification model. Standard variant: (depth - 1) base
/// layers, each followed by the activation, then a linear head. Bregman
/// variant: one base layer taking the input width to the hidden width, then
/// (depth - 2) width-preserving Bregman layers, then a linear head. Dropout
/// precedes every layer in training mode. No layer carries a bias except the
/// Bregman b row.
struct Model {
    ModelConfig cfg;
    ActivationPair act;
    std::vector<BaseLayer> base;
    std::vector<BregmanLayerParams> breg;
    std::vector<Aggregator> breg_aggs;
    Tensor head;

    std::vector<Tensor> parameters() const {
        std::vector<Tensor> out;
        auto push_layer = [&out](const BaseLayer& l) {
            out.push_back(l.weight);
            if (l.kind == AggregatorKind::Sage) out.push_back(l.weight_neigh);
            for (const auto& t : l.attn_src) out.push_back(t);
            for (const auto& t : l.attn_dst) out.push_back(t);
        };
        for (const auto& l : base) push_layer(l);
        for (std::size_t i = 0; i < breg.size(); ++i) {
            out.push_back(breg[i].M);
            out.push_back(breg[i].W);
            out.push_back(breg[i].b);
            for (const auto& t : breg_aggs[i].attn_src) out.push_back(t);
            for (const auto& t : breg_aggs[i].attn_dst) out.push_back(t);
        }
        out.push_back(head);
        return out;
    }

    Tensor base_layer_forward(Tape& tape, const BaseLayer& layer,
                              const GraphOps& gops, const Tensor& z) const {
        switch (layer.kind) {
            case AggregatorKind::Gcn:
                return gcn_forward(tape, layer.weight, gops.adj_sym, z);
            case AggregatorKind::Gat:
                return gat_forward(tape, layer.weight, layer.attn_src,
                                   layer.attn_dst, gops.adj_loops, z);
            case AggregatorKind::Sage:
                return sage_forward(tape, layer.weight, layer.weight_neigh,
                                    gops.adj_mean, z);
            case AggregatorKind::Appnp:
                return appnp_propagate(tape, gops.adj_sym,
                                       matmul(tape, z, layer.weight),
                                       cfg.appnp_alpha, cfg.appnp_steps);
        }
        throw ConfigError("Model: unknown layer kind");
    }

    /// Final hidden representation (the input of the linear head).
    /// In training mode dropout precedes every layer and rng must be given.
    /// stats, when given, must have one slot per Bregman layer.
    Tensor hidden_forward(Tape& tape, const GraphOps& gops, const Tensor& x,
                          bool training, Rng* rng,
                          std::vector<ClampStats>* stats = nullptr) const {
        if (training && cfg.dropout > 0.0 && rng == nullptr)
            throw ConfigError("Model: training forward needs an rng for dropout");
        if (stats && stats->size() != breg.size())
            throw ShapeError("Model: clamp stats need one slot per Bregman layer");
        Tensor z = x;
        auto drop = [&](const Tensor& t) {
            return training && cfg.dropout > 0.0 ? dropout(tape, t, cfg.dropout, *rng)
                                                 : t;
        };
        for (const auto& layer : base)
            z = apply_forward(tape, act, base_layer_forward(tape, layer, gops, drop(z)));
        for (std::size_t i = 0; i < breg.size(); ++i)
            z = bregman_forward(tape, breg[i], act, breg_aggs[i], gops, drop(z),
                                cfg.clamp_margin, stats ? &(*stats)[i] : nullptr);
        return z;
    }

    /// Class logits.
    Tensor forward(Tape& tape, const GraphOps& gops, const Tensor& x,
                   bool training, Rng* rng,
                   std::vector<ClampStats>* stats = nullptr) const {
        Tensor z = hidden_forward(tape, gops, x, training, rng, stats);
        if (training && cfg.dropout > 0.0)
            z = dropout(tape, z, cfg.dropout, *rng);
        return matmul(tape, z, head);
    }
};

/// Builds and initializes a model for the dataset's dimensions. Glorot-
/// uniform weights drawn from rng in a fixed order; Bregman W additionally
/// scaled by 0.1 so early layers stay near the pass-through regime; b zero.
inline Model build_model(ModelConfig cfg, const GraphDataset& ds, Rng& rng) {
    cfg.in_dim = ds.num_features();
    cfg.out_dim = static_cast<std::size_t>(ds.num_classes);
    if (cfg.depth < 3)
        throw ConfigError(cfg.bregman_enhanced
                              ? "build_model: Bregman models need depth >= 3"
                              : "build_model: depth must be at least 3");
    if (cfg.hidden == 0)
        throw ConfigError("build_model: hidden width must be positive");
    if (cfg.base == AggregatorKind::Gat) {
        if (cfg.heads <= 0)
            throw ConfigError("build_model: gat needs at least one head");
        if (cfg.hidden % static_cast<std::size_t>(cfg.heads) != 0)
            throw ConfigError("build_model: hidden width must be divisible by heads");
    }

    Model model;
    model.cfg = cfg;
    model.act = activation_by_name(cfg.activation);

    auto make_base = [&](std::size_t d_in, std::size_t d_out) {
        BaseLayer layer;
        layer.kind = cfg.base;
        layer.weight = detail::glorot(rng, d_in, d_out);
        if (cfg.base == AggregatorKind::Sage)
            layer.weight_neigh = detail::glorot(rng, d_in, d_out);
        if (cfg.base == AggregatorKind::Gat) {
            for (int h = 0; h < cfg.heads; ++h) {
                layer.attn_src.push_back(detail::glorot(rng, 1, d_out));
                layer.attn_dst.push_back(detail::glorot(rng, 1, d_out));
            }
        }
        return layer;
    };

    const std::size_t d = cfg.hidden;
    const int hidden_layers = cfg.depth - 1;
    if (cfg.bregman_enhanced) {
        model.base.push_back(make_base(cfg.in_dim, d));
        for (int l = 1; l < hidden_layers; ++l) {
            BregmanLayerParams p;
            p.M = detail::glorot(rng, d, d);
            p.W = detail::glorot(rng, d, d);
            for (auto& v : p.W.values()) v *= 0.1;
            p.b = Tensor(1, d, 0.0, true);
            model.breg.push_back(std::move(p));

            Aggregator agg;
            agg.kind = cfg.base;
            agg.appnp_alpha = cfg.appnp_alpha;
            agg.appnp_steps = cfg.appnp_steps;
            if (cfg.base == AggregatorKind::Gat) {
                for (int h = 0; h < cfg.heads; ++h) {
                    agg.attn_src.push_back(detail::glorot(rng, 1, d));
                    agg.attn_dst.push_back(detail::glorot(rng, 1, d));
                }
            }
            model.breg_aggs.push_back(std::move(agg));
        }
    } else {
        model.base.push_back(make_base(cfg.in_dim, d));
        for (int l = 1; l < hidden_layers; ++l)
            model.base.push_back(make_base(d, d));
    }
    model.head = detail::glorot(rng, d, cfg.out_dim);
    return model;
}

} // namespace bgnn
