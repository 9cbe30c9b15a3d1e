#include <doctest.h>

#include <random>

#include "latentdir/directions.hpp"

using namespace latentdir;
using namespace latentdir::dir;
using diffmath::Matrix;
using diffmath::Vector;

namespace {

Vector vec(std::initializer_list<double> v) {
    Vector x(static_cast<int>(v.size()));
    int i = 0;
    for (double e : v) x(i++) = e;
    return x;
}

Vector random_latent(std::mt19937_64& rng, int d) {
    std::normal_distribution<double> dist;
    Vector z(d);
    for (int i = 0; i < d; ++i) z(i) = dist(rng);
    return z;
}

}  // namespace

TEST_CASE("init_direction_models: shapes and determinism") {
    SUBCASE("global: unit theta, deterministic in the seed") {
        auto a = init_direction_models(Kind::Global, 4, 8, 11);
        auto b = init_direction_models(Kind::Global, 4, 8, 11);
        auto c = init_direction_models(Kind::Global, 4, 8, 12);
        REQUIRE(a.K() == 4);
        for (int k = 0; k < 4; ++k) {
            CHECK(a.models[k].theta.norm() == doctest::Approx(1.0).epsilon(1e-12));
            CHECK(a.models[k].theta == b.models[k].theta);
        }
        CHECK(a.models[0].theta != c.models[0].theta);
    }
    SUBCASE("linear: near-identity init") {
        auto s = init_direction_models(Kind::Linear, 3, 6, 5);
        for (auto& m : s.models) {
            CHECK(m.M.rows() == 6);
            CHECK(m.M.cols() == 6);
            // Frobenius norm of 0.1 * N(0,1)^{6x6} concentrates near 0.6.
            CHECK((m.M - Matrix::Identity(6, 6)).norm() < 1.0);
            CHECK((m.M - Matrix::Identity(6, 6)).norm() > 0.0);
        }
    }
    SUBCASE("nonlinear: layer chain d -> d ... -> d") {
        for (int hl = 1; hl <= 3; ++hl) {
            auto s = init_direction_models(Kind::Nonlinear, 2, 5, 5, hl);
            for (auto& m : s.models) {
                REQUIRE(static_cast<int>(m.layers.size()) == hl);
                REQUIRE(static_cast<int>(m.bn.size()) == hl - 1);
                CHECK(m.layers.front().W.cols() == 5);
                CHECK(m.layers.back().W.rows() == 5);
            }
        }
        CHECK_THROWS_AS(init_direction_models(Kind::Nonlinear, 2, 5, 5, 0), DirectionError);
        CHECK_THROWS_AS(init_direction_models(Kind::Nonlinear, 2, 5, 5, 4), DirectionError);
    }
    SUBCASE("K < 2 rejected") {
        CHECK_THROWS_AS(init_direction_models(Kind::Global, 1, 8, 1), DirectionError);
    }
}

TEST_CASE("edit: hand-computed fixtures") {
    SUBCASE("global theta=(2,0,0,0): edit(z, 3) = z + 3 e1") {
        auto s = init_direction_models(Kind::Global, 2, 4, 1);
        s.models[0].theta = vec({2, 0, 0, 0});
        Vector z = vec({0.5, -1, 2, 0});
        Vector out = edit(s.models[0], z, 3.0);
        CHECK((out - (z + vec({3, 0, 0, 0}))).norm() < 1e-12);
    }
    SUBCASE("linear M=I at z=(3,4): u=(0.6,0.8), alpha=5 adds (3,4)") {
        auto s = init_direction_models(Kind::Linear, 2, 2, 1);
        s.models[0].M = Matrix::Identity(2, 2);
        Vector out = edit(s.models[0], vec({3, 4}), 5.0);
        CHECK(out(0) == doctest::Approx(6.0).epsilon(1e-12));
        CHECK(out(1) == doctest::Approx(8.0).epsilon(1e-12));
    }
    SUBCASE("linear M=0 is degenerate and names the direction") {
        auto s = init_direction_models(Kind::Linear, 3, 2, 1);
        s.models[2].M = Matrix::Zero(2, 2);
        CHECK_THROWS_WITH_AS(edit(s.models[2], vec({1, 1}), 1.0),
                             doctest::Contains("direction 2"), diffmath::DegenerateError);
    }
    SUBCASE("nonlinear output direction is unit-norm") {
        auto s = init_direction_models(Kind::Nonlinear, 2, 6, 3, 2);
        std::mt19937_64 rng(8);
        Vector z = random_latent(rng, 6);
        Vector u = (edit(s.models[1], z, 1.0) - z);
        CHECK(u.norm() == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("edit distance invariant: ||edit(z, alpha) - z|| == |alpha|") {
    std::mt19937_64 rng(21);
    for (Kind kind : {Kind::Global, Kind::Linear, Kind::Nonlinear}) {
        auto s = init_direction_models(kind, 3, 7, 13, 2);
        for (int t = 0; t < 20; ++t) {
            Vector z = random_latent(rng, 7);
            double alpha = std::uniform_real_distribution<double>(-4, 4)(rng);
            auto& m = s.models[t % 3];
            CAPTURE(kind_name(kind));
            CHECK(std::abs((edit(m, z, alpha) - z).norm() - std::abs(alpha)) < 1e-9);
        }
    }
}

TEST_CASE("edit properties") {
    std::mt19937_64 rng(33);
    SUBCASE("sign symmetry for global and linear: u(z) independent of alpha") {
        for (Kind kind : {Kind::Global, Kind::Linear}) {
            auto s = init_direction_models(kind, 2, 5, 17);
            Vector z = random_latent(rng, 5);
            Vector up = edit(s.models[0], z, 2.0) - z;
            Vector um = edit(s.models[0], z, -2.0) - z;
            CHECK((up + um).norm() < 1e-12);
        }
    }
    SUBCASE("global edit commutes with translation of z") {
        auto s = init_direction_models(Kind::Global, 2, 5, 17);
        Vector z = random_latent(rng, 5), t = random_latent(rng, 5);
        Vector a = edit(s.models[0], z + t, 1.5);
        Vector b = edit(s.models[0], z, 1.5) + t;
        CHECK((a - b).norm() < 1e-12);
    }
    SUBCASE("linear direction is scale-invariant in z") {
        auto s = init_direction_models(Kind::Linear, 2, 5, 17);
        Vector z = random_latent(rng, 5);
        Vector u1 = edit(s.models[0], z, 1.0) - z;
        Vector u2 = edit(s.models[0], 3.0 * z, 1.0) - 3.0 * z;
        CHECK((u1 - u2).norm() < 1e-10);
    }
}

TEST_CASE("build_edit agrees with numeric edit and is differentiable") {
    std::mt19937_64 rng(44);
    for (Kind kind : {Kind::Global, Kind::Linear, Kind::Nonlinear}) {
        auto s = init_direction_models(kind, 2, 4, 29, 1);
        auto& m = s.models[0];
        Vector z = random_latent(rng, 4);

        diffmath::Graph g;
        auto z_in = g.input("z", 4);
        auto e = build_edit(g, m, z_in, 0.7, ParamMode::Constants, BnMode::Running);
        auto ev = diffmath::evaluate(g, {{"z", z}});
        Vector expected = edit(m, z, 0.7);
        CAPTURE(kind_name(kind));
        CHECK((ev.value(e).col(0) - expected).norm() < 1e-12);

        diffmath::Graph g2;
        auto z2 = g2.input("z", 4);
        auto root = g2.sum(g2.tanh(build_edit(g2, m, z2, 0.7, ParamMode::Constants,
                                              BnMode::Running)));
        auto report = diffmath::check_gradient(g2, root, {{"z", z}}, {"z"}, 1e-6, 1e-5);
        CHECK(report.pass);
    }
}

TEST_CASE("build_edit_batch matches per-column edits without batch norm") {
    // Global and linear paths have no batch statistics, so batch and single
    // construction must agree exactly.
    std::mt19937_64 rng(50);
    for (Kind kind : {Kind::Global, Kind::Linear}) {
        auto s = init_direction_models(kind, 2, 4, 31);
        auto& m = s.models[1];
        diffmath::Graph g;
        std::vector<diffmath::NodeId> zs = {g.input("z0", 4), g.input("z1", 4),
                                            g.input("z2", 4)};
        auto edits = build_edit_batch(g, m, zs, 1.3, ParamMode::Constants, BnMode::Batch);
        REQUIRE(edits.size() == 3);
        diffmath::Bindings b;
        std::vector<Vector> z(3);
        for (int i = 0; i < 3; ++i) {
            z[i] = random_latent(rng, 4);
            b["z" + std::to_string(i)] = z[i];
        }
        auto ev = diffmath::evaluate(g, b);
        for (int i = 0; i < 3; ++i)
            CHECK((ev.value(edits[i]).col(0) - edit(m, z[i], 1.3)).norm() < 1e-12);
    }
}

TEST_CASE("parameter traversal uses stable names") {
    auto s = init_direction_models(Kind::Nonlinear, 2, 4, 3, 2);
    std::vector<std::string> names;
    s.models[1].for_each_param(
        [&](const std::string& n, const Matrix&) { names.push_back(n); });
    // 2 affine layers + 1 batch norm, no running stats.
    REQUIRE(names.size() == 6);
    CHECK(names[0] == "dir1.L0.W");
    CHECK(names[1] == "dir1.L0.b");
    CHECK(names[4] == "dir1.bn0.gain");
    CHECK(names[5] == "dir1.bn0.shift");
}

TEST_CASE("direction set serialization") {
    SUBCASE("round trip is bit-identical for every kind") {
        for (Kind kind : {Kind::Global, Kind::Linear, Kind::Nonlinear}) {
            auto s = init_direction_models(kind, 3, 5, 77, 2);
            s.steps_trained = 42;
            s.config_digest = 123456789;
            auto text = serialize_direction_set(s);
            auto back = parse_direction_set(text);
            CHECK(back.kind == s.kind);
            CHECK(back.d == s.d);
            CHECK(back.seed == s.seed);
            CHECK(back.steps_trained == 42);
            CHECK(back.config_digest == s.config_digest);
            REQUIRE(back.K() == 3);
            CHECK(serialize_direction_set(back) == text);
            std::mt19937_64 rng(1);
            Vector z = random_latent(rng, 5);
            CHECK((edit(back.models[2], z, 1.0) - edit(s.models[2], z, 1.0)).norm() == 0.0);
        }
    }
    SUBCASE("fewer than two directions rejected") {
        auto s = init_direction_models(Kind::Global, 2, 5, 1);
        s.models.resize(1);
        auto text = serialize_direction_set(s);
        CHECK_THROWS_AS(parse_direction_set(text), DirectionError);
    }
    SUBCASE("non-finite parameter rejected naming the model") {
        auto s = init_direction_models(Kind::Global, 3, 5, 1);
        s.models[1].theta(0, 0) = std::numeric_limits<double>::quiet_NaN();
        auto text = serialize_direction_set(s);
        CHECK_THROWS_WITH_AS(parse_direction_set(text), doctest::Contains("1"),
                             DirectionError);
    }
    SUBCASE("malformed text rejected") {
        CHECK_THROWS_AS(parse_direction_set("not json"), DirectionError);
        CHECK_THROWS_AS(parse_direction_set("{}"), DirectionError);
    }
}
