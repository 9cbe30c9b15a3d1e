#include "latentdir/trainer.hpp"

#include <chrono>
#include <cmath>

namespace latentdir::train {

namespace {

std::uint64_t fnv1a_bytes(std::uint64_t h, const void* data, size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < bytes; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

std::uint64_t fnv1a_matrix(std::uint64_t h, const Matrix& m) {
    return fnv1a_bytes(h, m.data(), static_cast<size_t>(m.size()) * sizeof(double));
}

constexpr double kBnMomentum = 0.1;

}  // namespace

void TrainConfig::validate() const {
    if (batch_size < 2) throw TrainError("batch_size must be >= 2");
    if (num_directions < 2) throw TrainError("num_directions must be >= 2");
    if (kind == dir::Kind::Nonlinear && (hidden_layers < 1 || hidden_layers > 3))
        throw TrainError("hidden_layers must be in [1, 3]");
    if (tau <= 0.0) throw TrainError("tau must be positive");
    if (alpha == 0.0) throw TrainError("alpha must be nonzero");
    if (latent_dim < 2) throw TrainError("latent_dim must be >= 2");
    if (truncation <= 0.0) throw TrainError("truncation must be positive");
    if (learning_rate <= 0.0) throw TrainError("learning_rate must be positive");
    if (beta1 <= 0.0 || beta1 >= 1.0) throw TrainError("beta1 must lie in (0, 1)");
    if (beta2 <= 0.0 || beta2 >= 1.0) throw TrainError("beta2 must lie in (0, 1)");
    if (epsilon <= 0.0) throw TrainError("epsilon must be positive");
    if (steps < 1) throw TrainError("steps must be >= 1");
}

std::uint64_t TrainConfig::digest() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix_d = [&](double v) { h = fnv1a_bytes(h, &v, sizeof v); };
    auto mix_i = [&](std::int64_t v) { h = fnv1a_bytes(h, &v, sizeof v); };
    mix_i(batch_size);
    mix_i(num_directions);
    mix_i(static_cast<int>(kind));
    mix_i(hidden_layers);
    mix_d(tau);
    mix_d(alpha);
    mix_i(latent_dim);
    mix_d(truncation);
    mix_d(learning_rate);
    mix_d(beta1);
    mix_d(beta2);
    mix_d(epsilon);
    mix_i(steps);
    mix_i(static_cast<std::int64_t>(seed));
    h = fnv1a_bytes(h, target_layer.data(), target_layer.size());
    return h;
}

void adam_step(Matrix& param, const Matrix& grad, Matrix& m, Matrix& v, long t, double lr,
               double beta1, double beta2, double eps) {
    if (param.rows() != grad.rows() || param.cols() != grad.cols())
        throw TrainError("adam_step: parameter/gradient shape mismatch");
    if (m.size() == 0) m = Matrix::Zero(param.rows(), param.cols());
    if (v.size() == 0) v = Matrix::Zero(param.rows(), param.cols());
    if (beta1 <= 0.0 || beta1 >= 1.0 || beta2 <= 0.0 || beta2 >= 1.0)
        throw TrainError("adam_step: betas must lie in (0, 1)");

    m = beta1 * m + (1.0 - beta1) * grad;
    v = (beta2 * v.array() + (1.0 - beta2) * grad.array().square()).matrix();
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    param.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
}

diffmath::Bindings StepGraph::bindings_for(const dir::DirectionSet& set,
                                           const std::vector<Vector>& batch) const {
    if (batch.size() != z_names.size())
        throw TrainError("bindings_for: batch size does not match the step graph");
    diffmath::Bindings b;
    for (size_t i = 0; i < batch.size(); ++i) b[z_names[i]] = batch[i];
    for (const dir::DirectionModel& m : set.models) dir::bind_params(m, b);
    return b;
}

StepGraph build_step_graph(const gen::GeneratorSpec& g, const dir::DirectionSet& set,
                           const TrainConfig& cfg) {
    StepGraph sg;
    const int N = cfg.batch_size;
    const int K = set.K();

    std::vector<diffmath::NodeId> zs;
    for (int i = 0; i < N; ++i) {
        std::string name = "z" + std::to_string(i);
        sg.z_names.push_back(name);
        zs.push_back(sg.graph.input(name, set.d));
    }

    // Base features once per sample, shared across all K edits.
    std::vector<diffmath::NodeId> base;
    for (int i = 0; i < N; ++i) base.push_back(g.features_node(sg.graph, zs[static_cast<size_t>(i)]));

    std::vector<std::vector<diffmath::NodeId>> f(static_cast<size_t>(N),
                                                 std::vector<diffmath::NodeId>(static_cast<size_t>(K)));
    sg.pre_bn.assign(static_cast<size_t>(K), {});
    for (int k = 0; k < K; ++k) {
        const dir::DirectionModel& m = set.models[static_cast<size_t>(k)];
        std::vector<diffmath::NodeId> edited = dir::build_edit_batch(
            sg.graph, m, zs, cfg.alpha, dir::ParamMode::Inputs, dir::BnMode::Batch,
            &sg.pre_bn[static_cast<size_t>(k)]);
        for (int i = 0; i < N; ++i) {
            diffmath::NodeId h = g.features_node(sg.graph, edited[static_cast<size_t>(i)]);
            f[static_cast<size_t>(i)][static_cast<size_t>(k)] =
                sg.graph.sub(h, base[static_cast<size_t>(i)]);
        }
    }
    sg.loss = obj::build_contrastive_loss(sg.graph, f, cfg.tau);

    for (const dir::DirectionModel& m : set.models)
        m.for_each_param([&](const std::string& name, const Matrix&) {
            sg.param_names.push_back(name);
        });
    return sg;
}

namespace {

std::vector<Vector> sample_batch(std::mt19937_64& rng, const TrainConfig& cfg) {
    std::vector<Vector> batch;
    batch.reserve(static_cast<size_t>(cfg.batch_size));
    for (int i = 0; i < cfg.batch_size; ++i)
        batch.push_back(gen::sample_latent(rng, cfg.latent_dim, cfg.truncation));
    return batch;
}

void update_running_stats(dir::DirectionSet& set, const StepGraph& sg,
                          const diffmath::Evaluation& ev) {
    for (int k = 0; k < set.K(); ++k) {
        dir::DirectionModel& m = set.models[static_cast<size_t>(k)];
        const auto& nodes = sg.pre_bn[static_cast<size_t>(k)];
        for (size_t l = 0; l < nodes.size(); ++l) {
            const Matrix& x = ev.value(nodes[l]);
            Vector mu = x.rowwise().mean();
            Matrix centered = x.colwise() - mu;
            Vector var = centered.array().square().rowwise().mean();
            dir::BatchNormState& s = m.bn[l];
            s.running_mean = (1.0 - kBnMomentum) * s.running_mean + kBnMomentum * mu;
            s.running_var = (1.0 - kBnMomentum) * s.running_var + kBnMomentum * var;
        }
    }
}

}  // namespace

StepResult training_step(const gen::GeneratorSpec& g, const dir::DirectionSet& set,
                         const TrainConfig& cfg, std::mt19937_64& rng) {
    cfg.validate();
    StepGraph sg = build_step_graph(g, set, cfg);
    std::vector<Vector> batch = sample_batch(rng, cfg);
    diffmath::GradientResult res =
        diffmath::gradient(sg.graph, sg.loss, sg.bindings_for(set, batch), sg.param_names);
    StepResult out;
    out.loss = res.eval.scalar(sg.loss);
    out.grads = std::move(res.grads);
    return out;
}

TrainResult train(const TrainConfig& cfg, const gen::GeneratorSpec& g) {
    cfg.validate();
    if (g.latent_dim() != cfg.latent_dim)
        throw TrainError("latent_dim " + std::to_string(cfg.latent_dim) +
                         " does not match the generator (" + std::to_string(g.latent_dim()) + ")");

    TrainResult result;
    result.set = dir::init_direction_models(cfg.kind, cfg.num_directions, cfg.latent_dim,
                                            cfg.seed, cfg.hidden_layers);
    dir::DirectionSet& set = result.set;

    StepGraph sg = build_step_graph(g, set, cfg);
    std::mt19937_64 rng(cfg.seed);
    AdamState adam;

    const std::uint64_t gen_digest_before = g.param_digest();

    for (int step = 0; step < cfg.steps; ++step) {
        auto t0 = std::chrono::steady_clock::now();
        std::vector<Vector> batch = sample_batch(rng, cfg);

        diffmath::GradientResult res;
        try {
            res = diffmath::gradient(sg.graph, sg.loss, sg.bindings_for(set, batch),
                                     sg.param_names);
        } catch (const diffmath::DegenerateError& e) {
            throw TrainAbort(step, e.what());
        }
        double loss = res.eval.scalar(sg.loss);
        if (!std::isfinite(loss))
            throw TrainAbort(step, "non-finite loss " + std::to_string(loss));

        adam.t += 1;
        for (dir::DirectionModel& m : set.models) {
            m.for_each_param([&](const std::string& name, Matrix& p) {
                adam_step(p, res.grads.at(name), adam.m[name], adam.v[name], adam.t,
                          cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);
            });
        }
        update_running_stats(set, sg, res.eval);

        auto t1 = std::chrono::steady_clock::now();
        result.trace.loss.push_back(loss);
        result.trace.wall_ms.push_back(
            std::chrono::duration<double, std::milli>(t1 - t0).count());
    }

    if (g.param_digest() != gen_digest_before)
        throw TrainError("frozen-generator contract violated: parameter digest changed");

    set.steps_trained = cfg.steps;
    set.config_digest = cfg.digest();
    result.trace.config_digest = cfg.digest();
    result.trace.final_param_digest = param_digest(set);
    return result;
}

std::uint64_t param_digest(const dir::DirectionSet& set) {
    std::uint64_t h = 1469598103934665603ULL;
    for (const dir::DirectionModel& m : set.models) {
        m.for_each_param([&](const std::string& name, const Matrix& p) {
            h = fnv1a_bytes(h, name.data(), name.size());
            h = fnv1a_matrix(h, p);
        });
        for (const dir::BatchNormState& s : m.bn) {
            h = fnv1a_matrix(h, s.running_mean);
            h = fnv1a_matrix(h, s.running_var);
        }
    }
    return h;
}

}  // namespace latentdir::train
