#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstddef>
#include <vector>

#include "bgnn/verify.hpp"
#include "oracles.hpp"

using namespace bgnn;

TEST_CASE("certificate tolerances are pinned", "[verify]") {
    REQUIRE(kGradTol == 1e-6);
    REQUIRE(kFiniteDiffStep == 1e-5);
    REQUIRE(kPerturbRadius == 1e-2);
    REQUIRE(kPerturbTrials == 100);
}

TEST_CASE("finite differences recover an analytic gradient", "[verify]") {
    Rng rng(51);
    Tensor x = oracle::random_tensor(rng, 3, 4, -1.0, 1.0, false);
    auto f = [](const Tensor& t) {
        double s = 0.0;
        for (double v : t.values()) s += std::sin(v);
        return s;
    };
    Tensor grad = finite_diff_grad(f, x, 1e-5);
    for (std::size_t i = 0; i < x.size(); ++i)
        REQUIRE(grad.values()[i] ==
                Catch::Approx(std::cos(x.values()[i])).margin(1e-9));

    SECTION("the probe point is restored") {
        Tensor before = x.clone();
        finite_diff_grad(f, x, 1e-5);
        REQUIRE(x.values() == before.values());
    }
    SECTION("validation") {
        REQUIRE_THROWS_AS(finite_diff_grad(f, x, 0.0), ConfigError);
        REQUIRE_THROWS_AS(finite_diff_grad(f, x, -1e-5), ConfigError);
        auto bad = [](const Tensor& t) { return std::sqrt(t(0, 0) - 10.0); };
        Tensor small(1, 1, 0.5);
        REQUIRE_THROWS_AS(finite_diff_grad(bad, small, 1e-5), NumericError);
    }
}

TEST_CASE("the closed form passes the argmin certificate", "[verify]") {
    const ActivationPair pair = activation_by_name("tanh");
    Rng rng(52);
    CertificateInstance inst =
        make_certificate_instance(pair, AggregatorKind::Gcn, 5, 3, rng);
    REQUIRE(inst.u.rows() == 5);
    REQUIRE(inst.u.cols() == 3);
    REQUIRE(inst.params.M.rows() == 3);

    Certificate cert = certify_argmin(pair, inst.params, inst.u, 20,
                                      kPerturbRadius, rng);
    REQUIRE(cert.pass);
    REQUIRE(cert.grad_inf_norm < kGradTol);
    REQUIRE(cert.min_perturbation_increase > 0.0);
    REQUIRE(cert.pair == "tanh");
    REQUIRE(cert.n == 5);
    REQUIRE(cert.d == 3);

    SECTION("the random offset and constant do not move the verdict") {
        Tape notape(false);
        Tensor z = bregman_closed_form(notape, inst.params, pair, inst.u);
        Rng r1(100), r2(200);
        Certificate a = certify_point(pair, inst.params, inst.u, z, 10,
                                      kPerturbRadius, r1);
        Certificate b = certify_point(pair, inst.params, inst.u, z, 10,
                                      kPerturbRadius, r2);
        REQUIRE(a.pass);
        REQUIRE(b.pass);
        REQUIRE(a.grad_inf_norm == Catch::Approx(b.grad_inf_norm).margin(1e-8));
    }
}

TEST_CASE("points off the argmin fail the certificate", "[verify]") {
    const ActivationPair pair = activation_by_name("tanh");
    Rng rng(53);
    CertificateInstance inst =
        make_certificate_instance(pair, AggregatorKind::Gcn, 5, 3, rng);
    Tape notape(false);
    Tensor z = bregman_closed_form(notape, inst.params, pair, inst.u);

    SECTION("a shifted candidate has a visible gradient") {
        Tensor off = z.clone();
        off.values()[0] += 0.05;
        Certificate cert =
            certify_point(pair, inst.params, inst.u, off, 20, kPerturbRadius, rng);
        REQUIRE_FALSE(cert.pass);
        REQUIRE(cert.grad_inf_norm > 1e-3);
    }
    SECTION("corrupted bias parameters break the optimality of z") {
        BregmanLayerParams bad = inst.params;
        bad.b = inst.params.b.clone();
        for (auto& v : bad.b.values()) v += 0.1;
        Certificate cert =
            certify_point(pair, bad, inst.u, z, 20, kPerturbRadius, rng);
        REQUIRE_FALSE(cert.pass);
        // The bias shift enters the objective gradient one-to-one.
        REQUIRE(cert.grad_inf_norm == Catch::Approx(0.1).margin(1e-4));
    }
}

TEST_CASE("certificate input validation", "[verify]") {
    const ActivationPair pair = activation_by_name("tanh");
    Rng rng(54);
    CertificateInstance inst =
        make_certificate_instance(pair, AggregatorKind::Gcn, 4, 2, rng);
    Tape notape(false);
    Tensor z = bregman_closed_form(notape, inst.params, pair, inst.u);

    SECTION("trial and radius ranges") {
        REQUIRE_THROWS_AS(
            certify_point(pair, inst.params, inst.u, z, 0, kPerturbRadius, rng),
            ConfigError);
        REQUIRE_THROWS_AS(
            certify_point(pair, inst.params, inst.u, z, 10, 0.0, rng),
            ConfigError);
    }
    SECTION("a pair without a potential cannot be certified") {
        ActivationPair no_potential = pair;
        no_potential.has_potential = false;
        REQUIRE_THROWS_AS(certify_point(no_potential, inst.params, inst.u, z, 10,
                                        kPerturbRadius, rng),
                          ConfigError);
    }
    SECTION("candidates near the domain boundary are infeasible") {
        Tensor tight = z.clone();
        tight.values()[0] = 0.9999; // within 1e-2 + 1e-4 of the tanh boundary
        REQUIRE_THROWS_AS(certify_point(pair, inst.params, inst.u, tight, 10,
                                        kPerturbRadius, rng),
                          NumericError);
    }
    SECTION("anchors outside the domain are infeasible") {
        Tensor u_big(4, 2, 2.5); // U M leaves (-1, 1) for any reasonable M
        BregmanLayerParams p;
        p.M = Tensor(2, 2, 0.0);
        p.M(0, 0) = p.M(1, 1) = 1.0;
        p.W = Tensor(2, 2, 0.0);
        p.b = Tensor(1, 2, 0.0);
        Tensor z_ok(4, 2, 0.1);
        REQUIRE_THROWS_AS(
            certify_point(pair, p, u_big, z_ok, 10, kPerturbRadius, rng),
            NumericError);
    }
    SECTION("clamped closed forms are rejected as instances") {
        Tensor u_big(4, 2, 3.0);
        BregmanLayerParams p;
        p.M = Tensor(2, 2, 0.0);
        p.M(0, 0) = p.M(1, 1) = 1.0;
        p.W = Tensor(2, 2, 0.0);
        p.b = Tensor(1, 2, 0.0);
        REQUIRE_THROWS_AS(
            certify_argmin(pair, p, u_big, 10, kPerturbRadius, rng),
            NumericError);
    }
}

TEST_CASE("random instances certify for every pair and aggregator", "[verify]") {
    Rng rng(55);
    for (const auto& pair : activation_registry()) {
        if (!pair.has_potential) continue;
        for (auto kind : {AggregatorKind::Gcn, AggregatorKind::Gat,
                          AggregatorKind::Sage, AggregatorKind::Appnp}) {
            Certificate cert =
                certify_random_instance(pair, kind, 5, kPerturbRadius, rng);
            INFO("pair " << pair.name << " aggregator " << aggregator_name(kind));
            REQUIRE(cert.pass);
            REQUIRE(cert.aggregator == aggregator_name(kind));
            REQUIRE(cert.n >= 3);
            REQUIRE(cert.d >= 2);
        }
    }
}

TEST_CASE("smoothness measures normalized neighbor distance", "[verify]") {
    SECTION("hand-computed value with a zero row") {
        // Normalized rows: [1,0], [0,1], [0,0]; edge distances 2 and 1.
        SparseMatrix adj = SparseMatrix::from_edges(3, {{0, 1}, {1, 2}});
        Tensor z(3, 2, 0.0);
        z(0, 0) = 3.0;
        z(1, 1) = 5.0;
        REQUIRE(smoothness_metric(z, adj) == Catch::Approx(1.5).margin(1e-14));
    }
    SECTION("identical rows are perfectly smooth") {
        SparseMatrix adj = SparseMatrix::from_edges(4, {{0, 1}, {1, 2}, {2, 3}});
        Tensor z(4, 3, 0.7);
        REQUIRE(smoothness_metric(z, adj) == 0.0);
    }
    SECTION("row scaling does not change the metric") {
        SparseMatrix adj = SparseMatrix::from_edges(3, {{0, 1}, {0, 2}, {1, 2}});
        Rng rng(56);
        Tensor z = oracle::random_tensor(rng, 3, 4, -2.0, 2.0, false);
        Tensor scaled = z.clone();
        for (std::size_t r = 0; r < 3; ++r)
            for (std::size_t c = 0; c < 4; ++c) scaled(r, c) *= (1.0 + r) * 10.0;
        REQUIRE(smoothness_metric(scaled, adj) ==
                Catch::Approx(smoothness_metric(z, adj)).margin(1e-13));
    }
    SECTION("validation") {
        SparseMatrix adj = SparseMatrix::from_edges(3, {{0, 1}});
        REQUIRE_THROWS_AS(smoothness_metric(Tensor(2, 2, 1.0), adj), ShapeError);
        Tensor z(3, 2, 1.0);
        REQUIRE_THROWS_AS(smoothness_metric(z, SparseMatrix::from_edges(3, {})),
                          NumericError);
        // Self loops are not edges for this metric.
        REQUIRE_THROWS_AS(smoothness_metric(z, SparseMatrix::identity(3)),
                          NumericError);
    }
}
