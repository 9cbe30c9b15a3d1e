#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "latentdir/diffmath.hpp"

namespace latentdir::dir {

using diffmath::Matrix;
using diffmath::Vector;

class DirectionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Kind { Global, Linear, Nonlinear };

std::string kind_name(Kind k);
Kind parse_kind(const std::string& s);

/// Batch-norm mode for the nonlinear model: batch statistics inside the
/// trainer, running statistics everywhere else (traversal, evaluation).
enum class BnMode { Batch, Running };

/// Whether direction parameters enter the graph as bindable inputs (trainer)
/// or baked-in constants (evaluation).
enum class ParamMode { Inputs, Constants };

struct BatchNormState {
    Matrix gain;          // h x 1
    Matrix shift;         // h x 1
    Matrix running_mean;  // h x 1
    Matrix running_var;   // h x 1
};

struct AffineLayer {
    Matrix W;
    Matrix b;  // rows x 1
};

/// One direction model D: (z, alpha) -> z + alpha * u with ||u|| = 1.
///   global:    u = theta / ||theta||
///   linear:    u = M z / ||M z||
///   nonlinear: u = NN(z) / ||NN(z)||, NN = 1-3 affine layers, ReLU + batch
///              norm after each hidden layer.
struct DirectionModel {
    Kind kind = Kind::Global;
    int index = 0;
    int d = 0;
    Matrix theta;                     // d x 1 (global)
    Matrix M;                         // d x d (linear)
    std::vector<AffineLayer> layers;  // nonlinear
    std::vector<BatchNormState> bn;   // one per hidden layer

    /// Visits every trainable parameter with a stable name; running stats are
    /// excluded (they are tracked, not optimized).
    void for_each_param(const std::function<void(const std::string&, Matrix&)>& fn);
    void for_each_param(const std::function<void(const std::string&, const Matrix&)>& fn) const;
};

struct DirectionSet {
    Kind kind = Kind::Global;
    int d = 0;
    std::uint64_t seed = 0;
    std::vector<DirectionModel> models;
    int steps_trained = 0;
    std::uint64_t config_digest = 0;

    int K() const { return static_cast<int>(models.size()); }
};

DirectionSet init_direction_models(Kind kind, int K, int d, std::uint64_t seed,
                                   int hidden_layers = 2);

/// Builds edit(z, alpha) for one latent column node. Parameters enter per
/// `pm`; batch norm runs per `bn` (Running uses the stored statistics).
diffmath::NodeId build_edit(diffmath::Graph& g, const DirectionModel& m, diffmath::NodeId z,
                            double alpha, ParamMode pm, BnMode bn);

/// Batch form: one shared forward pass over the d x N latent matrix so batch
/// norm sees the whole batch; returns the N edited columns. `pre_bn_out`,
/// when non-null, receives the node ids of each pre-batch-norm activation
/// matrix (for running-stat updates).
std::vector<diffmath::NodeId> build_edit_batch(diffmath::Graph& g, const DirectionModel& m,
                                               const std::vector<diffmath::NodeId>& zs,
                                               double alpha, ParamMode pm, BnMode bn,
                                               std::vector<diffmath::NodeId>* pre_bn_out = nullptr);

/// Numeric edit with running batch-norm statistics (inference mode).
Vector edit(const DirectionModel& m, const Vector& z, double alpha);

/// Binds the model's current parameter values under their graph input names.
void bind_params(const DirectionModel& m, diffmath::Bindings& out);

std::string serialize_direction_set(const DirectionSet& set);
DirectionSet parse_direction_set(const std::string& text);

void save_direction_set(const DirectionSet& set, const std::string& path);
DirectionSet load_direction_set(const std::string& path);

}  // namespace latentdir::dir
