#include <doctest.h>

#include <cmath>
#include <random>

#include "latentdir/trainer.hpp"

using namespace latentdir;
using namespace latentdir::train;
using diffmath::Matrix;
using diffmath::Vector;

namespace {

TrainConfig small_config(dir::Kind kind) {
    TrainConfig cfg;
    cfg.batch_size = 4;
    cfg.num_directions = 2;
    cfg.kind = kind;
    cfg.hidden_layers = 2;
    cfg.tau = 0.5;
    cfg.alpha = 1.0;
    cfg.latent_dim = 6;
    cfg.truncation = 0.4;
    cfg.steps = 5;
    cfg.seed = 17;
    return cfg;
}

gen::GeneratorSpec small_generator() {
    return gen::GeneratorSpec::make_synthetic(3, 6, 3, 16, 2.0);
}

}  // namespace

TEST_CASE("adam_step: hand-computed fixtures") {
    SUBCASE("zero gradient leaves the parameter untouched") {
        Matrix p = Matrix::Constant(2, 2, 3.0);
        Matrix m = Matrix::Zero(2, 2), v = Matrix::Zero(2, 2);
        adam_step(p, Matrix::Zero(2, 2), m, v, 1, 1e-3, 0.9, 0.999, 1e-8);
        CHECK(p == Matrix::Constant(2, 2, 3.0));
    }
    SUBCASE("first step with unit gradient moves by ~lr") {
        // m_hat = g, v_hat = g^2, so the update is lr * 1/(1 + eps).
        Matrix p = Matrix::Zero(1, 1);
        Matrix m = Matrix::Zero(1, 1), v = Matrix::Zero(1, 1);
        adam_step(p, Matrix::Constant(1, 1, 1.0), m, v, 1, 1e-3, 0.9, 0.999, 1e-8);
        double expected = -1e-3 * 1.0 / (1.0 + 1e-8);
        CHECK(p(0, 0) == doctest::Approx(expected).epsilon(1e-12));
        CHECK(m(0, 0) == doctest::Approx(0.1).epsilon(1e-12));
        CHECK(v(0, 0) == doctest::Approx(0.001).epsilon(1e-12));
    }
    SUBCASE("descends a quadratic bowl") {
        Matrix p = Matrix::Constant(1, 1, 5.0);
        Matrix m = Matrix::Zero(1, 1), v = Matrix::Zero(1, 1);
        for (long t = 1; t <= 2000; ++t)
            adam_step(p, 2.0 * p, m, v, t, 1e-2, 0.9, 0.999, 1e-8);
        CHECK(std::abs(p(0, 0)) < 1e-2);
    }
}

TEST_CASE("config validation names the offending field") {
    TrainConfig cfg = small_config(dir::Kind::Global);
    CHECK_NOTHROW(cfg.validate());
    auto expect_reject = [](TrainConfig c, const char* field) {
        CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains(field), TrainError);
    };
    { TrainConfig c = cfg; c.tau = 0.0; expect_reject(c, "tau"); }
    { TrainConfig c = cfg; c.batch_size = 1; expect_reject(c, "batch_size"); }
    { TrainConfig c = cfg; c.num_directions = 1; expect_reject(c, "num_directions"); }
    { TrainConfig c = cfg; c.steps = 0; expect_reject(c, "steps"); }
    { TrainConfig c = cfg; c.learning_rate = -1.0; expect_reject(c, "learning_rate"); }
    { TrainConfig c = cfg; c.truncation = 0.0; expect_reject(c, "truncation"); }
    { TrainConfig c = cfg; c.alpha = 0.0; expect_reject(c, "alpha"); }
    { TrainConfig c = cfg; c.latent_dim = 1; expect_reject(c, "latent_dim"); }
    { TrainConfig c = cfg; c.kind = dir::Kind::Nonlinear; c.hidden_layers = 5;
      expect_reject(c, "hidden_layers"); }
}

TEST_CASE("step graph gradients match finite differences") {
    auto g = small_generator();
    for (dir::Kind kind : {dir::Kind::Global, dir::Kind::Linear, dir::Kind::Nonlinear}) {
        TrainConfig cfg = small_config(kind);
        auto set = dir::init_direction_models(kind, cfg.num_directions, cfg.latent_dim,
                                              cfg.seed, cfg.hidden_layers);
        auto sg = build_step_graph(g, set, cfg);

        std::mt19937_64 rng(5);
        std::vector<Vector> batch;
        for (int i = 0; i < cfg.batch_size; ++i)
            batch.push_back(gen::sample_latent(rng, cfg.latent_dim, cfg.truncation));
        auto bind = sg.bindings_for(set, batch);

        auto report = diffmath::check_gradient(sg.graph, sg.loss, bind, sg.param_names,
                                               1e-5, 1e-4);
        CAPTURE(dir::kind_name(kind));
        CAPTURE(report.max_rel_error);
        CHECK(report.pass);
    }
}

TEST_CASE("train: loss improves on the synthetic task") {
    auto g = small_generator();
    TrainConfig cfg = small_config(dir::Kind::Global);
    cfg.num_directions = 3;
    cfg.steps = 150;
    cfg.learning_rate = 5e-2;
    auto result = train::train(cfg, g);
    REQUIRE(static_cast<int>(result.trace.loss.size()) == cfg.steps);
    double first = result.trace.loss.front();
    double last = result.trace.loss.back();
    CHECK(last < first);
    CHECK(result.set.steps_trained == cfg.steps);
    CHECK(result.set.config_digest == cfg.digest());
    CHECK(result.trace.final_param_digest == param_digest(result.set));
}

TEST_CASE("train is deterministic: same seed, bit-identical results") {
    auto g = small_generator();
    for (dir::Kind kind : {dir::Kind::Global, dir::Kind::Linear, dir::Kind::Nonlinear}) {
        TrainConfig cfg = small_config(kind);
        auto r1 = train::train(cfg, g);
        auto r2 = train::train(cfg, g);
        CAPTURE(dir::kind_name(kind));
        CHECK(param_digest(r1.set) == param_digest(r2.set));
        REQUIRE(r1.trace.loss.size() == r2.trace.loss.size());
        for (size_t i = 0; i < r1.trace.loss.size(); ++i)
            CHECK(r1.trace.loss[i] == r2.trace.loss[i]);
        CHECK(dir::serialize_direction_set(r1.set) == dir::serialize_direction_set(r2.set));

        TrainConfig other = cfg;
        other.seed = cfg.seed + 1;
        CHECK(param_digest(train::train(other, g).set) != param_digest(r1.set));
    }
}

TEST_CASE("edit distance invariant holds before, during and after training") {
    auto g = small_generator();
    TrainConfig cfg = small_config(dir::Kind::Nonlinear);
    std::mt19937_64 rng(9);
    for (int steps : {1, 3, 8}) {
        TrainConfig c = cfg;
        c.steps = steps;
        auto result = train::train(c, g);
        for (auto& m : result.set.models) {
            Vector z = gen::sample_latent(rng, cfg.latent_dim, cfg.truncation);
            CHECK(std::abs((dir::edit(m, z, 2.5) - z).norm() - 2.5) < 1e-9);
        }
    }
}

TEST_CASE("generator stays frozen across training") {
    auto g = small_generator();
    auto digest = g.param_digest();
    TrainConfig cfg = small_config(dir::Kind::Linear);
    (void)train::train(cfg, g);
    CHECK(g.param_digest() == digest);
}

TEST_CASE("latent dimension mismatch with the generator is rejected") {
    auto g = small_generator();  // d = 6
    TrainConfig cfg = small_config(dir::Kind::Global);
    cfg.latent_dim = 8;
    CHECK_THROWS_AS(train::train(cfg, g), TrainError);
}

TEST_CASE("training_step matches the first step of train") {
    auto g = small_generator();
    TrainConfig cfg = small_config(dir::Kind::Global);
    auto set = dir::init_direction_models(cfg.kind, cfg.num_directions, cfg.latent_dim,
                                          cfg.seed, cfg.hidden_layers);
    std::mt19937_64 rng(cfg.seed);
    auto step = training_step(g, set, cfg, rng);
    auto result = train::train(cfg, g);
    CHECK(step.loss == result.trace.loss.front());
    CHECK_FALSE(step.grads.empty());
}
