#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstddef>
#include <vector>

#include "bgnn/layers.hpp"
#include "oracles.hpp"

using namespace bgnn;

namespace {

// Connected 7-node graph with degrees from 2 to 4.
SparseMatrix test_graph() {
    return SparseMatrix::from_edges(
        7, {{0, 1}, {0, 2}, {1, 2}, {2, 3}, {3, 4}, {4, 5}, {4, 6}, {5, 6}});
}

Tensor dense_matmul(const Tensor& a, const Tensor& b) {
    auto c = oracle::naive_matmul(a.values(), b.values(), a.rows(), a.cols(),
                                  b.cols());
    Tensor out(a.rows(), b.cols());
    out.values() = std::move(c);
    return out;
}

Tensor dense_spmm(const SparseMatrix& a, const Tensor& z) {
    auto ad = oracle::densify(a);
    auto c = oracle::naive_matmul(ad, z.values(), a.size(), a.size(), z.cols());
    Tensor out(a.size(), z.cols());
    out.values() = std::move(c);
    return out;
}

// From-scratch attention recompute: neighborhoods from the densified pattern,
// naive softmax without the max shift.
Tensor attention_oracle(const SparseMatrix& loops, const Tensor& sc,
                        const Tensor& sn, const Tensor& h) {
    const std::size_t n = loops.size(), d = h.cols();
    const auto pattern = oracle::densify(loops);
    Tensor out(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::size_t> nbrs;
        for (std::size_t j = 0; j < n; ++j)
            if (pattern[i * n + j] != 0.0) nbrs.push_back(j);
        std::vector<double> w(nbrs.size());
        double z = 0.0;
        for (std::size_t k = 0; k < nbrs.size(); ++k) {
            double raw = sc(i, 0) + sn(nbrs[k], 0);
            double s = raw >= 0.0 ? raw : 0.2 * raw;
            w[k] = std::exp(s);
            z += w[k];
        }
        for (std::size_t k = 0; k < nbrs.size(); ++k)
            for (std::size_t c = 0; c < d; ++c)
                out(i, c) += (w[k] / z) * h(nbrs[k], c);
    }
    return out;
}

void require_close(const Tensor& got, const Tensor& want, double tol) {
    REQUIRE(got.rows() == want.rows());
    REQUIRE(got.cols() == want.cols());
    for (std::size_t i = 0; i < got.size(); ++i)
        REQUIRE(got.values()[i] == Catch::Approx(want.values()[i]).margin(tol));
}

} // namespace

TEST_CASE("aggregator names round trip", "[layers]") {
    for (auto kind : {AggregatorKind::Gcn, AggregatorKind::Gat,
                      AggregatorKind::Sage, AggregatorKind::Appnp})
        REQUIRE(aggregator_from_name(aggregator_name(kind)) == kind);
    REQUIRE_THROWS_AS(aggregator_from_name("gin"), ConfigError);
    REQUIRE_THROWS_AS(aggregator_from_name(""), ConfigError);
}

TEST_CASE("graph ops expose the four propagation matrices", "[layers]") {
    SparseMatrix adj = test_graph();
    GraphOps gops = GraphOps::build(adj);
    REQUIRE(gops.adj.nnz() == adj.nnz());
    REQUIRE(gops.adj_loops.nnz() == adj.nnz() + adj.size());

    auto sym = oracle::densify(gops.adj_sym);
    auto want = oracle::densify(normalize_sym(adj, true));
    REQUIRE(sym == want);

    // Row-mean matrix: each non-isolated row sums to one.
    auto mean = oracle::densify(gops.adj_mean);
    const std::size_t n = adj.size();
    for (std::size_t r = 0; r < n; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < n; ++c) s += mean[r * n + c];
        REQUIRE(s == Catch::Approx(1.0).margin(1e-12));
    }
}

TEST_CASE("gcn layer matches the dense composition", "[layers]") {
    Rng rng(11);
    GraphOps gops = GraphOps::build(test_graph());
    Tensor z = oracle::random_tensor(rng, 7, 5, -1.0, 1.0, false);
    Tensor w = oracle::random_tensor(rng, 5, 3, -1.0, 1.0, false);
    Tape tape(false);
    Tensor got = gcn_forward(tape, w, gops.adj_sym, z);
    require_close(got, dense_spmm(gops.adj_sym, dense_matmul(z, w)), 1e-13);
}

TEST_CASE("sage layer matches the dense composition", "[layers]") {
    Rng rng(12);
    GraphOps gops = GraphOps::build(test_graph());
    Tensor z = oracle::random_tensor(rng, 7, 5, -1.0, 1.0, false);
    Tensor ws = oracle::random_tensor(rng, 5, 3, -1.0, 1.0, false);
    Tensor wn = oracle::random_tensor(rng, 5, 3, -1.0, 1.0, false);
    Tape tape(false);
    Tensor got = sage_forward(tape, ws, wn, gops.adj_mean, z);

    Tensor self = dense_matmul(z, ws);
    Tensor neigh = dense_spmm(gops.adj_mean, dense_matmul(z, wn));
    Tape t2(false);
    require_close(got, add(t2, self, neigh), 1e-13);
}

TEST_CASE("appnp propagation matches the dense iteration", "[layers]") {
    Rng rng(13);
    GraphOps gops = GraphOps::build(test_graph());
    Tensor h = oracle::random_tensor(rng, 7, 4, -1.0, 1.0, false);
    const double alpha = 0.1;
    const int steps = 6;
    Tape tape(false);
    Tensor got = appnp_propagate(tape, gops.adj_sym, h, alpha, steps);

    Tensor z = h.clone();
    for (int k = 0; k < steps; ++k) {
        Tensor az = dense_spmm(gops.adj_sym, z);
        for (std::size_t i = 0; i < z.size(); ++i)
            z.values()[i] = (1.0 - alpha) * az.values()[i] + alpha * h.values()[i];
    }
    require_close(got, z, 1e-12);

    SECTION("zero steps return the input unchanged") {
        Tape t2(false);
        Tensor same = appnp_propagate(t2, gops.adj_sym, h, alpha, 0);
        require_close(same, h, 0.0);
    }
    SECTION("argument validation") {
        Tape t2(false);
        REQUIRE_THROWS_AS(appnp_propagate(t2, gops.adj_sym, h, 0.0, 3), ConfigError);
        REQUIRE_THROWS_AS(appnp_propagate(t2, gops.adj_sym, h, 1.5, 3), ConfigError);
        REQUIRE_THROWS_AS(appnp_propagate(t2, gops.adj_sym, h, 0.1, -1), ConfigError);
    }
}

TEST_CASE("attention aggregation matches a dense recompute", "[layers]") {
    Rng rng(14);
    GraphOps gops = GraphOps::build(test_graph());
    Tensor h = oracle::random_tensor(rng, 7, 4, -2.0, 2.0, false);
    Tensor sc = oracle::random_tensor(rng, 7, 1, -1.0, 1.0, false);
    Tensor sn = oracle::random_tensor(rng, 7, 1, -1.0, 1.0, false);
    Tape tape(false);
    Tensor got = attention_aggregate(tape, gops.adj_loops, sc, sn, h);
    require_close(got, attention_oracle(gops.adj_loops, sc, sn, h), 1e-12);
}

TEST_CASE("uniform attention scores average the neighborhood", "[layers]") {
    Rng rng(15);
    GraphOps gops = GraphOps::build(test_graph());
    Tensor h = oracle::random_tensor(rng, 7, 3, -2.0, 2.0, false);
    Tensor zero(7, 1, 0.0);
    Tape tape(false);
    Tensor got = attention_aggregate(tape, gops.adj_loops, zero, zero, h);
    const auto& loops = gops.adj_loops;
    for (std::size_t i = 0; i < 7; ++i) {
        const double deg = static_cast<double>(loops.row_end(i) - loops.row_begin(i));
        for (std::size_t c = 0; c < 3; ++c) {
            double mean = 0.0;
            for (std::size_t k = loops.row_begin(i); k < loops.row_end(i); ++k)
                mean += h(loops.col(k), c) / deg;
            REQUIRE(got(i, c) == Catch::Approx(mean).margin(1e-13));
        }
    }
}

TEST_CASE("attention aggregation rejects bad inputs", "[layers]") {
    GraphOps gops = GraphOps::build(test_graph());
    Tensor h(7, 3, 0.5), sc(7, 1, 0.1), sn(7, 1, 0.1);
    Tape tape(false);
    REQUIRE_THROWS_AS(
        attention_aggregate(tape, gops.adj_loops, Tensor(6, 1, 0.1), sn, h),
        ShapeError);
    REQUIRE_THROWS_AS(
        attention_aggregate(tape, gops.adj_loops, Tensor(7, 2, 0.1), sn, h),
        ShapeError);
    REQUIRE_THROWS_AS(attention_aggregate(tape, gops.adj_loops, sc, sn,
                                          Tensor(6, 3, 0.5)),
                      ShapeError);

    // Without self loops an isolated node has nothing to attend to.
    SparseMatrix bare = SparseMatrix::from_edges(3, {{0, 1}});
    Tensor h3(3, 2, 0.5), s3(3, 1, 0.1);
    REQUIRE_THROWS_AS(attention_aggregate(tape, bare, s3, s3, h3), NumericError);
}

TEST_CASE("attention aggregation gradients match finite differences", "[layers]") {
    GraphOps gops = GraphOps::build(test_graph());

    // Scores bounded away from zero keep the leaky-relu corner out of the
    // finite-difference stencil; both signs get their own section.
    SECTION("positive scores") {
        Rng rng(16);
        Tensor h = oracle::random_tensor(rng, 7, 3, -1.0, 1.0);
        Tensor sc = oracle::random_tensor(rng, 7, 1, 0.1, 0.9);
        Tensor sn = oracle::random_tensor(rng, 7, 1, 0.1, 0.9);
        auto res = oracle::check_gradients({sc, sn, h}, [&](Tape& tape) {
            Tensor out = attention_aggregate(tape, gops.adj_loops, sc, sn, h);
            return frobenius_inner_product(tape, out, out);
        });
        INFO(res.detail);
        REQUIRE(res.ok);
    }
    SECTION("negative scores") {
        Rng rng(17);
        Tensor h = oracle::random_tensor(rng, 7, 3, -1.0, 1.0);
        Tensor sc = oracle::random_tensor(rng, 7, 1, -0.9, -0.1);
        Tensor sn = oracle::random_tensor(rng, 7, 1, -0.9, -0.1);
        auto res = oracle::check_gradients({sc, sn, h}, [&](Tape& tape) {
            Tensor out = attention_aggregate(tape, gops.adj_loops, sc, sn, h);
            return frobenius_inner_product(tape, out, out);
        });
        INFO(res.detail);
        REQUIRE(res.ok);
    }
}

TEST_CASE("gat layer averages per-head attention over projected features",
          "[layers]") {
    Rng rng(18);
    GraphOps gops = GraphOps::build(test_graph());
    Tensor z = oracle::random_tensor(rng, 7, 5, -1.0, 1.0, false);
    Tensor w = oracle::random_tensor(rng, 5, 4, -1.0, 1.0, false);
    std::vector<Tensor> src, dst;
    for (int k = 0; k < 2; ++k) {
        src.push_back(oracle::random_tensor(rng, 1, 4, -0.5, 0.5, false));
        dst.push_back(oracle::random_tensor(rng, 1, 4, -0.5, 0.5, false));
    }
    Tape tape(false);
    Tensor got = gat_forward(tape, w, src, dst, gops.adj_loops, z);

    Tensor h = dense_matmul(z, w);
    Tensor want(7, 4);
    for (int k = 0; k < 2; ++k) {
        Tensor sc(7, 1), sn(7, 1);
        for (std::size_t i = 0; i < 7; ++i) {
            for (std::size_t c = 0; c < 4; ++c) {
                sc(i, 0) += h(i, c) * src[static_cast<std::size_t>(k)](0, c);
                sn(i, 0) += h(i, c) * dst[static_cast<std::size_t>(k)](0, c);
            }
        }
        Tensor head = attention_oracle(gops.adj_loops, sc, sn, h);
        for (std::size_t i = 0; i < want.size(); ++i)
            want.values()[i] += 0.5 * head.values()[i];
    }
    require_close(got, want, 1e-12);

    SECTION("head validation") {
        REQUIRE_THROWS_AS(gat_forward(tape, w, {}, {}, gops.adj_loops, z),
                          ConfigError);
        REQUIRE_THROWS_AS(gat_forward(tape, w, src, {src[0]}, gops.adj_loops, z),
                          ConfigError);
    }
}

TEST_CASE("aggregator dispatch matches the standalone operators", "[layers]") {
    Rng rng(19);
    GraphOps gops = GraphOps::build(test_graph());
    Tensor z = oracle::random_tensor(rng, 7, 4, -1.0, 1.0, false);
    Tape tape(false);

    SECTION("gcn") {
        Aggregator agg;
        agg.kind = AggregatorKind::Gcn;
        require_close(agg.propagate(tape, gops, z), spmm(tape, gops.adj_sym, z),
                      0.0);
    }
    SECTION("sage") {
        Aggregator agg;
        agg.kind = AggregatorKind::Sage;
        Tensor want = add(tape, z, spmm(tape, gops.adj_mean, z));
        require_close(agg.propagate(tape, gops, z), want, 0.0);
    }
    SECTION("appnp") {
        Aggregator agg;
        agg.kind = AggregatorKind::Appnp;
        agg.appnp_alpha = 0.2;
        agg.appnp_steps = 4;
        Tensor want = appnp_propagate(tape, gops.adj_sym, z, 0.2, 4);
        require_close(agg.propagate(tape, gops, z), want, 0.0);
    }
    SECTION("gat") {
        Aggregator agg;
        agg.kind = AggregatorKind::Gat;
        agg.attn_src.push_back(oracle::random_tensor(rng, 1, 4, -0.5, 0.5, false));
        agg.attn_dst.push_back(oracle::random_tensor(rng, 1, 4, -0.5, 0.5, false));
        Tensor sc = matmul(tape, z, transpose(tape, agg.attn_src[0]));
        Tensor sn = matmul(tape, z, transpose(tape, agg.attn_dst[0]));
        Tensor want = attention_aggregate(tape, gops.adj_loops, sc, sn, z);
        require_close(agg.propagate(tape, gops, z), want, 0.0);
    }
    SECTION("gat without heads") {
        Aggregator agg;
        agg.kind = AggregatorKind::Gat;
        REQUIRE_THROWS_AS(agg.propagate(tape, gops, z), ConfigError);
    }
}

TEST_CASE("bregman closed form reduces to an affine map for identity", "[layers]") {
    Rng rng(20);
    const ActivationPair id = activation_by_name("identity");
    Tensor u = oracle::random_tensor(rng, 6, 4, -2.0, 2.0, false);
    BregmanLayerParams p;
    p.M = oracle::random_tensor(rng, 4, 4, -1.0, 1.0, false);
    p.W = oracle::random_tensor(rng, 4, 4, -1.0, 1.0, false);
    p.b = oracle::random_tensor(rng, 1, 4, -1.0, 1.0, false);

    ClampStats stats;
    Tape tape(false);
    Tensor got = bregman_closed_form(tape, p, id, u, 1e-6, &stats);

    // rho and its inverse are the identity, so the layer is U (M + W) + 1 b^T.
    Tensor mw(4, 4);
    for (std::size_t i = 0; i < mw.size(); ++i)
        mw.values()[i] = p.M.values()[i] + p.W.values()[i];
    Tensor want = dense_matmul(u, mw);
    for (std::size_t r = 0; r < 6; ++r)
        for (std::size_t c = 0; c < 4; ++c) want(r, c) += p.b(0, c);
    require_close(got, want, 1e-13);

    // The identity pair has an unbounded domain: nothing to clamp.
    REQUIRE(stats.total == u.size());
    REQUIRE(stats.clamped == 0);
}

TEST_CASE("bregman closed form passes features through when W and b vanish",
          "[layers]") {
    Rng rng(21);
    const ActivationPair tanh_pair = activation_by_name("tanh");
    Tensor u = oracle::random_tensor(rng, 6, 4, -0.8, 0.8, false);
    BregmanLayerParams p;
    p.M = Tensor(4, 4, 0.0);
    for (std::size_t i = 0; i < 4; ++i) p.M(i, i) = 1.0;
    p.W = Tensor(4, 4, 0.0);
    p.b = Tensor(1, 4, 0.0);

    ClampStats stats;
    Tape tape(false);
    Tensor got = bregman_closed_form(tape, p, tanh_pair, u, 1e-6, &stats);
    require_close(got, u, 1e-12);
    REQUIRE(stats.clamped == 0);

    SECTION("general mixing matrix: output is U M") {
        BregmanLayerParams q;
        q.M = oracle::random_tensor(rng, 4, 4, -0.2, 0.2, false);
        q.W = Tensor(4, 4, 0.0);
        q.b = Tensor(1, 4, 0.0);
        Tensor got2 = bregman_closed_form(tape, q, tanh_pair, u, 1e-6, nullptr);
        require_close(got2, dense_matmul(u, q.M), 1e-12);
    }
}

TEST_CASE("bregman closed form clamps out-of-domain skip inputs", "[layers]") {
    const ActivationPair tanh_pair = activation_by_name("tanh");
    Tensor u(1, 2, 0.0);
    u(0, 0) = 0.6; // clamped at margin 0.5
    u(0, 1) = 0.2;
    BregmanLayerParams p;
    p.M = Tensor(2, 2, 0.0);
    p.M(0, 0) = p.M(1, 1) = 1.0;
    p.W = Tensor(2, 2, 0.0);
    p.b = Tensor(1, 2, 0.0);

    ClampStats stats;
    Tape tape(false);
    Tensor got = bregman_closed_form(tape, p, tanh_pair, u, 0.5, &stats);
    REQUIRE(stats.total == 2);
    REQUIRE(stats.clamped == 1);
    REQUIRE(got(0, 0) == Catch::Approx(0.5).margin(1e-15));
    REQUIRE(got(0, 1) == Catch::Approx(0.2).margin(1e-13));
}

TEST_CASE("bregman closed form validates parameter shapes", "[layers]") {
    const ActivationPair id = activation_by_name("identity");
    Tensor u(3, 4, 0.1);
    BregmanLayerParams p;
    p.M = Tensor(4, 4, 0.0);
    p.W = Tensor(4, 4, 0.0);
    p.b = Tensor(1, 4, 0.0);
    Tape tape(false);

    auto bad = p;
    bad.M = Tensor(3, 4, 0.0);
    REQUIRE_THROWS_AS(bregman_closed_form(tape, bad, id, u), ShapeError);
    bad = p;
    bad.W = Tensor(4, 3, 0.0);
    REQUIRE_THROWS_AS(bregman_closed_form(tape, bad, id, u), ShapeError);
    bad = p;
    bad.b = Tensor(2, 4, 0.0);
    REQUIRE_THROWS_AS(bregman_closed_form(tape, bad, id, u), ShapeError);
}

TEST_CASE("bregman layer is the closed form of the propagated features",
          "[layers]") {
    Rng rng(22);
    GraphOps gops = GraphOps::build(test_graph());
    const ActivationPair tanh_pair = activation_by_name("tanh");
    Tensor z = oracle::random_tensor(rng, 7, 4, -0.4, 0.4, false);
    BregmanLayerParams p;
    p.M = oracle::random_tensor(rng, 4, 4, -0.2, 0.2, false);
    p.W = oracle::random_tensor(rng, 4, 4, -0.2, 0.2, false);
    p.b = oracle::random_tensor(rng, 1, 4, -0.1, 0.1, false);
    Aggregator agg;
    agg.kind = AggregatorKind::Gcn;

    Tape tape(false);
    Tensor got = bregman_forward(tape, p, tanh_pair, agg, gops, z);
    Tensor u = agg.propagate(tape, gops, z);
    require_close(got, bregman_closed_form(tape, p, tanh_pair, u), 0.0);
}

TEST_CASE("standard model assembly", "[layers]") {
    GraphDataset ds = generate_sbm(20, 2, 0.5, 0.1, 5, 3);
    Rng rng(7);

    SECTION("gcn shapes and parameter order") {
        ModelConfig cfg;
        cfg.base = AggregatorKind::Gcn;
        cfg.depth = 4;
        cfg.hidden = 8;
        Model m = build_model(cfg, ds, rng);
        REQUIRE(m.base.size() == 3);
        REQUIRE(m.breg.empty());
        REQUIRE(m.base[0].weight.rows() == 5);
        REQUIRE(m.base[0].weight.cols() == 8);
        REQUIRE(m.base[1].weight.rows() == 8);
        REQUIRE(m.base[2].weight.cols() == 8);
        REQUIRE(m.head.rows() == 8);
        REQUIRE(m.head.cols() == 2);
        REQUIRE(m.parameters().size() == 4);
        for (const auto& t : m.parameters()) REQUIRE(t.requires_grad());
    }
    SECTION("sage carries a second weight per layer") {
        ModelConfig cfg;
        cfg.base = AggregatorKind::Sage;
        cfg.depth = 3;
        cfg.hidden = 8;
        Model m = build_model(cfg, ds, rng);
        REQUIRE(m.base.size() == 2);
        REQUIRE(m.base[0].weight_neigh.rows() == 5);
        REQUIRE(m.base[1].weight_neigh.rows() == 8);
        REQUIRE(m.parameters().size() == 5);
    }
    SECTION("gat carries per-head attention vectors") {
        ModelConfig cfg;
        cfg.base = AggregatorKind::Gat;
        cfg.depth = 3;
        cfg.hidden = 8;
        cfg.heads = 2;
        Model m = build_model(cfg, ds, rng);
        REQUIRE(m.base.size() == 2);
        REQUIRE(m.base[0].attn_src.size() == 2);
        REQUIRE(m.base[0].attn_dst.size() == 2);
        REQUIRE(m.base[0].attn_src[0].rows() == 1);
        REQUIRE(m.base[0].attn_src[0].cols() == 8);
        // 2 x (weight + 4 attention vectors) + head
        REQUIRE(m.parameters().size() == 11);
    }
    SECTION("glorot initialization respects the fan bound") {
        ModelConfig cfg;
        cfg.base = AggregatorKind::Gcn;
        cfg.depth = 3;
        cfg.hidden = 16;
        Model m = build_model(cfg, ds, rng);
        // hidden-to-hidden weight: bound sqrt(6 / 32)
        double mx = 0.0;
        for (double v : m.base[1].weight.values()) mx = std::max(mx, std::abs(v));
        REQUIRE(mx <= oracle::kGlorotBound16x16);
        REQUIRE(mx > 0.5 * oracle::kGlorotBound16x16); // not degenerate
    }
    SECTION("same seed rebuilds identical weights") {
        ModelConfig cfg;
        cfg.depth = 3;
        cfg.hidden = 8;
        Rng r1(42), r2(42), r3(43);
        Model a = build_model(cfg, ds, r1);
        Model b = build_model(cfg, ds, r2);
        Model c = build_model(cfg, ds, r3);
        REQUIRE(a.base[0].weight.values() == b.base[0].weight.values());
        REQUIRE(a.head.values() == b.head.values());
        REQUIRE(a.base[0].weight.values() != c.base[0].weight.values());
    }
}

TEST_CASE("bregman model assembly", "[layers]") {
    GraphDataset ds = generate_sbm(20, 2, 0.5, 0.1, 5, 3);
    Rng rng(7);

    SECTION("one input layer plus width-preserving bregman layers") {
        ModelConfig cfg;
        cfg.base = AggregatorKind::Gcn;
        cfg.bregman_enhanced = true;
        cfg.depth = 5;
        cfg.hidden = 8;
        Model m = build_model(cfg, ds, rng);
        REQUIRE(m.base.size() == 1);
        REQUIRE(m.breg.size() == 3);
        REQUIRE(m.breg_aggs.size() == 3);
        for (const auto& p : m.breg) {
            REQUIRE(p.M.rows() == 8);
            REQUIRE(p.M.cols() == 8);
            REQUIRE(p.W.rows() == 8);
            REQUIRE(p.b.rows() == 1);
            REQUIRE(p.b.cols() == 8);
            for (double v : p.b.values()) REQUIRE(v == 0.0);
            // W starts damped: a tenth of the glorot bound for an 8x8 fan
            double bound = 0.1 * std::sqrt(6.0 / 16.0);
            for (double v : p.W.values()) REQUIRE(std::abs(v) <= bound);
        }
        // base weight + 3 x (M, W, b) + head
        REQUIRE(m.parameters().size() == 11);
    }
    SECTION("gat bregman layers own attention heads") {
        ModelConfig cfg;
        cfg.base = AggregatorKind::Gat;
        cfg.bregman_enhanced = true;
        cfg.depth = 4;
        cfg.hidden = 8;
        cfg.heads = 2;
        Model m = build_model(cfg, ds, rng);
        REQUIRE(m.breg_aggs.size() == 2);
        for (const auto& agg : m.breg_aggs) {
            REQUIRE(agg.kind == AggregatorKind::Gat);
            REQUIRE(agg.attn_src.size() == 2);
            REQUIRE(agg.attn_dst.size() == 2);
        }
    }
}

TEST_CASE("model construction rejects bad configurations", "[layers]") {
    GraphDataset ds = generate_sbm(20, 2, 0.5, 0.1, 5, 3);
    Rng rng(7);
    ModelConfig cfg;
    cfg.hidden = 8;

    cfg.depth = 2;
    REQUIRE_THROWS_AS(build_model(cfg, ds, rng), ConfigError);
    cfg.bregman_enhanced = true;
    REQUIRE_THROWS_AS(build_model(cfg, ds, rng), ConfigError);
    cfg.bregman_enhanced = false;

    cfg.depth = 3;
    cfg.hidden = 0;
    REQUIRE_THROWS_AS(build_model(cfg, ds, rng), ConfigError);

    cfg.hidden = 10;
    cfg.base = AggregatorKind::Gat;
    cfg.heads = 4; // 10 not divisible by 4
    REQUIRE_THROWS_AS(build_model(cfg, ds, rng), ConfigError);
    cfg.heads = 0;
    REQUIRE_THROWS_AS(build_model(cfg, ds, rng), ConfigError);
}

TEST_CASE("base layer dispatch matches the standalone layers", "[layers]") {
    Rng rng(23);
    GraphOps gops = GraphOps::build(test_graph());
    Tensor z = oracle::random_tensor(rng, 7, 5, -1.0, 1.0, false);
    Model m;
    m.cfg.appnp_alpha = 0.1;
    m.cfg.appnp_steps = 3;
    Tape tape(false);

    BaseLayer l;
    l.weight = oracle::random_tensor(rng, 5, 4, -1.0, 1.0, false);

    l.kind = AggregatorKind::Gcn;
    require_close(m.base_layer_forward(tape, l, gops, z),
                  gcn_forward(tape, l.weight, gops.adj_sym, z), 0.0);

    l.kind = AggregatorKind::Sage;
    l.weight_neigh = oracle::random_tensor(rng, 5, 4, -1.0, 1.0, false);
    require_close(m.base_layer_forward(tape, l, gops, z),
                  sage_forward(tape, l.weight, l.weight_neigh, gops.adj_mean, z),
                  0.0);

    l.kind = AggregatorKind::Appnp;
    require_close(
        m.base_layer_forward(tape, l, gops, z),
        appnp_propagate(tape, gops.adj_sym, matmul(tape, z, l.weight), 0.1, 3),
        0.0);

    l.kind = AggregatorKind::Gat;
    l.attn_src.push_back(oracle::random_tensor(rng, 1, 4, -0.5, 0.5, false));
    l.attn_dst.push_back(oracle::random_tensor(rng, 1, 4, -0.5, 0.5, false));
    require_close(m.base_layer_forward(tape, l, gops, z),
                  gat_forward(tape, l.weight, l.attn_src, l.attn_dst,
                              gops.adj_loops, z),
                  0.0);
}

TEST_CASE("model forward modes", "[layers]") {
    GraphDataset ds = generate_sbm(16, 2, 0.6, 0.2, 5, 9);
    GraphOps gops = GraphOps::build(ds);
    ModelConfig cfg;
    cfg.depth = 3;
    cfg.hidden = 8;
    cfg.dropout = 0.5;
    Rng rng(7);
    Model m = build_model(cfg, ds, rng);
    Tape tape(false);

    SECTION("training without an rng is rejected") {
        REQUIRE_THROWS_AS(m.forward(tape, gops, ds.features, true, nullptr),
                          ConfigError);
    }
    SECTION("clamp stats need one slot per bregman layer") {
        std::vector<ClampStats> stats(2); // model has no bregman layers
        REQUIRE_THROWS_AS(
            m.forward(tape, gops, ds.features, false, nullptr, &stats),
            ShapeError);
    }
    SECTION("evaluation is deterministic, training dropout follows the rng") {
        Tensor a = m.forward(tape, gops, ds.features, false, nullptr);
        Tensor b = m.forward(tape, gops, ds.features, false, nullptr);
        REQUIRE(a.values() == b.values());
        REQUIRE(a.rows() == 16);
        REQUIRE(a.cols() == 2);

        Rng d1(5), d2(5), d3(6);
        Tensor t1 = m.forward(tape, gops, ds.features, true, &d1);
        Tensor t2 = m.forward(tape, gops, ds.features, true, &d2);
        Tensor t3 = m.forward(tape, gops, ds.features, true, &d3);
        REQUIRE(t1.values() == t2.values());
        REQUIRE(t1.values() != t3.values());
        REQUIRE(t1.values() != a.values());
    }
    SECTION("zero dropout training forward works without an rng") {
        ModelConfig c2 = cfg;
        c2.dropout = 0.0;
        Rng r2(7);
        Model m2 = build_model(c2, ds, r2);
        Tensor out = m2.forward(tape, gops, ds.features, true, nullptr);
        REQUIRE(out.rows() == 16);
    }
}

namespace {

// Shared fixture for the end-to-end gradient checks: a small two-class graph
// and the masked training loss in evaluation mode (dropout off).
struct GradFixture {
    GraphDataset ds = generate_sbm(12, 2, 0.6, 0.2, 5, 21);
    GraphOps gops = GraphOps::build(ds);

    oracle::GradCheckResult check(Model& m, double tol) {
        auto loss = [&](Tape& tape) {
            return cross_entropy(tape, m.forward(tape, gops, ds.features, false,
                                                 nullptr),
                                 ds.labels, ds.train_mask);
        };
        return oracle::check_gradients(m.parameters(), loss, tol);
    }
};

} // namespace

TEST_CASE("standard model loss gradients match finite differences", "[layers]") {
    GradFixture fx;
    ModelConfig cfg;
    cfg.depth = 3;
    cfg.hidden = 8;
    cfg.heads = 2;
    cfg.appnp_steps = 4;
    cfg.dropout = 0.0;

    SECTION("gcn") {
        cfg.base = AggregatorKind::Gcn;
        Rng rng(31);
        Model m = build_model(cfg, fx.ds, rng);
        auto res = fx.check(m, 1e-6);
        INFO(res.detail);
        REQUIRE(res.ok);
    }
    SECTION("sage") {
        cfg.base = AggregatorKind::Sage;
        Rng rng(32);
        Model m = build_model(cfg, fx.ds, rng);
        auto res = fx.check(m, 1e-6);
        INFO(res.detail);
        REQUIRE(res.ok);
    }
    SECTION("appnp") {
        cfg.base = AggregatorKind::Appnp;
        Rng rng(33);
        Model m = build_model(cfg, fx.ds, rng);
        auto res = fx.check(m, 1e-6);
        INFO(res.detail);
        REQUIRE(res.ok);
    }
    SECTION("gat") {
        cfg.base = AggregatorKind::Gat;
        Rng rng(34);
        Model m = build_model(cfg, fx.ds, rng);
        auto res = fx.check(m, 1e-6);
        INFO(res.detail);
        REQUIRE(res.ok);
    }
}

TEST_CASE("bregman model loss gradients match finite differences", "[layers]") {
    GradFixture fx;
    ModelConfig cfg;
    cfg.bregman_enhanced = true;
    cfg.depth = 4;
    cfg.hidden = 8;
    cfg.heads = 2;
    cfg.appnp_steps = 4;
    cfg.dropout = 0.0;

    auto damp_and_check = [&](Model& m, double tol) {
        // Keep the skip input far from the tanh domain edge so no entry is
        // clamped: a clamp is a legitimate flat spot finite differences
        // cannot see through.
        for (auto& p : m.breg)
            for (auto& v : p.M.values()) v *= 0.1;
        std::vector<ClampStats> stats(m.breg.size());
        Tape probe(false);
        m.forward(probe, fx.gops, fx.ds.features, false, nullptr, &stats);
        for (const auto& s : stats) REQUIRE(s.clamped == 0);
        return fx.check(m, tol);
    };

    SECTION("gcn") {
        cfg.base = AggregatorKind::Gcn;
        Rng rng(41);
        Model m = build_model(cfg, fx.ds, rng);
        auto res = damp_and_check(m, 1e-6);
        INFO(res.detail);
        REQUIRE(res.ok);
    }
    SECTION("sage") {
        cfg.base = AggregatorKind::Sage;
        Rng rng(42);
        Model m = build_model(cfg, fx.ds, rng);
        auto res = damp_and_check(m, 1e-6);
        INFO(res.detail);
        REQUIRE(res.ok);
    }
    SECTION("appnp") {
        cfg.base = AggregatorKind::Appnp;
        Rng rng(43);
        Model m = build_model(cfg, fx.ds, rng);
        auto res = damp_and_check(m, 1e-6);
        INFO(res.detail);
        REQUIRE(res.ok);
    }
    SECTION("gat") {
        cfg.base = AggregatorKind::Gat;
        Rng rng(44);
        Model m = build_model(cfg, fx.ds, rng);
        auto res = damp_and_check(m, 1e-6);
        INFO(res.detail);
        REQUIRE(res.ok);
    }
}
