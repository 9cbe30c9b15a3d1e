#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "latentdir/diffmath.hpp"
#include "latentdir/image.hpp"

namespace latentdir::gen {

using diffmath::Matrix;
using diffmath::Vector;

class GeneratorError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct SyntheticMixingParams {
    Matrix W;      // F x d, orthonormal rows
    Vector b;      // F
    double gamma;  // saturation gain, >= 1
};

struct MlpLayer {
    enum class Activation { Tanh, Relu, None };
    std::string name;
    Matrix W;
    Vector b;
    Activation act = Activation::None;
};

/// A frozen differentiable generator with a selectable target feature layer.
/// Synthetic variant: h = tanh(gamma * (W z + b)) with orthonormal W rows, so
/// the ground-truth latent direction for factor j is row j of W.
class GeneratorSpec {
public:
    enum class Kind { SyntheticMixing, MlpFile };

    static GeneratorSpec make_synthetic(std::uint64_t seed, int d, int F, int grid,
                                        double gamma);
    static GeneratorSpec load_mlp(const std::string& path, const std::string& target_layer);
    static GeneratorSpec from_mlp_json(const std::string& json_text,
                                       const std::string& target_layer);

    Kind kind() const { return kind_; }
    int latent_dim() const { return d_; }
    int feature_dim() const { return feature_dim_; }
    int grid() const { return grid_; }
    const std::string& target_layer() const { return target_layer_; }
    const SyntheticMixingParams& mixing() const;

    /// Feed-forward up to the target layer as a differentiable expression.
    /// Generator parameters enter as constants; gradients reach z only.
    diffmath::NodeId features_node(diffmath::Graph& g, diffmath::NodeId z) const;
    Vector features(const Vector& z) const;

    /// Grayscale blob render driven by the first four feature components.
    img::Image render(const Vector& z) const;

    /// Rows of the mixing matrix as latent-space unit vectors (synthetic only).
    std::vector<Vector> ground_truth_directions() const;

    std::uint64_t param_digest() const;

    /// Transfer variant: same mixing matrix, different bias.
    GeneratorSpec with_bias(const Vector& b) const;

    /// Descriptive identifier for reports.
    std::string id() const;

private:
    GeneratorSpec() = default;

    Kind kind_ = Kind::SyntheticMixing;
    int d_ = 0;
    int feature_dim_ = 0;
    int grid_ = 64;
    std::string target_layer_;
    std::optional<SyntheticMixingParams> mixing_;
    std::vector<MlpLayer> layers_;
    std::uint64_t seed_ = 0;
};

/// Truncation trick for a generic Gaussian prior: each component is a standard
/// normal resampled until |x| <= 2, then scaled by the truncation factor.
Vector sample_latent(std::mt19937_64& rng, int d, double truncation);

}  // namespace latentdir::gen
