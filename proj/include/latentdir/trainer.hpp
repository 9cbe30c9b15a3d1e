#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "latentdir/directions.hpp"
#include "latentdir/generators.hpp"
#include "latentdir/objective.hpp"

namespace latentdir::train {

using diffmath::Matrix;
using diffmath::Vector;

class TrainError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when training hits a degenerate direction or a non-finite loss;
/// carries the step index. Exit code 2 at the CLI boundary.
class TrainAbort : public TrainError {
public:
    TrainAbort(int step, const std::string& msg)
        : TrainError("training aborted at step " + std::to_string(step) + ": " + msg),
          step_(step) {}
    int step() const { return step_; }

private:
    int step_;
};

struct TrainConfig {
    int batch_size = 16;
    int num_directions = 32;
    dir::Kind kind = dir::Kind::Global;
    int hidden_layers = 2;
    double tau = 0.5;
    double alpha = 1.0;
    int latent_dim = 128;
    double truncation = 0.4;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    int steps = 1000;
    std::uint64_t seed = 0;
    std::string target_layer = "features";

    /// Throws TrainError naming the offending field.
    void validate() const;
    std::uint64_t digest() const;
};

struct AdamState {
    std::map<std::string, Matrix> m;
    std::map<std::string, Matrix> v;
    long t = 0;
};

/// One Adam update with bias correction. `t` is the post-increment step
/// counter (1 on the first update).
void adam_step(Matrix& param, const Matrix& grad, Matrix& m, Matrix& v, long t, double lr,
               double beta1, double beta2, double eps);

struct LossTrace {
    std::vector<double> loss;
    std::vector<double> wall_ms;
    std::uint64_t config_digest = 0;
    std::uint64_t final_param_digest = 0;
};

struct TrainResult {
    dir::DirectionSet set;
    LossTrace trace;
};

/// The per-step expression graph: latent batch and direction parameters as
/// inputs, total contrastive loss as the root. Built once per run.
struct StepGraph {
    diffmath::Graph graph;
    diffmath::NodeId loss = -1;
    std::vector<std::string> z_names;                       // one per batch slot
    std::vector<std::string> param_names;                   // all trainable params
    std::vector<std::vector<diffmath::NodeId>> pre_bn;      // [model][hidden layer]

    diffmath::Bindings bindings_for(const dir::DirectionSet& set,
                                    const std::vector<Vector>& batch) const;
};

StepGraph build_step_graph(const gen::GeneratorSpec& g, const dir::DirectionSet& set,
                           const TrainConfig& cfg);

struct StepResult {
    double loss = 0.0;
    std::map<std::string, Matrix> grads;
};

/// One forward/backward pass on a fresh batch drawn from `rng`; no update.
StepResult training_step(const gen::GeneratorSpec& g, const dir::DirectionSet& set,
                         const TrainConfig& cfg, std::mt19937_64& rng);

TrainResult train(const TrainConfig& cfg, const gen::GeneratorSpec& g);

std::uint64_t param_digest(const dir::DirectionSet& set);

}  // namespace latentdir::train
