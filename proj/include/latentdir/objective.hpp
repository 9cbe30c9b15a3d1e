#pragma once

#include <string>
#include <vector>

#include "latentdir/diffmath.hpp"
#include "latentdir/directions.hpp"
#include "latentdir/generators.hpp"

namespace latentdir::obj {

using diffmath::Matrix;
using diffmath::Vector;

class ObjectiveError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Feature divergences f_i^k = G_f(edit_k(z_i, alpha)) - G_f(z_i) for a batch
/// of N latents and K direction models.
struct DivergenceBatch {
    std::vector<std::vector<Vector>> f;  // [i][k], each of length F
    std::vector<Vector> latents;
    double alpha = 0.0;
    std::string generator_id;
    std::string layer;

    int N() const { return static_cast<int>(f.size()); }
    int K() const { return f.empty() ? 0 : static_cast<int>(f[0].size()); }
    int F() const { return (f.empty() || f[0].empty()) ? 0 : static_cast<int>(f[0][0].size()); }
};

struct LossValue {
    double total = 0.0;
    Matrix per_code;  // N x K
    double tau = 0.0;
};

DivergenceBatch feature_divergences(const gen::GeneratorSpec& g, const dir::DirectionSet& set,
                                    const std::vector<Vector>& batch, double alpha);

/// The generalized contrastive loss, per edited code:
///   l(z_i^k) = -log( sum_{j != i} exp(sim(f_i^k, f_j^k)/tau)
///                  / sum_j sum_{l != k} exp(sim(f_i^k, f_j^l)/tau) )
/// with guarded cosine similarity; total = mean over all N*K edited codes.
/// Vectorized over the NK x NK similarity matrix.
LossValue contrastive_loss(const DivergenceBatch& div, double tau);

/// Quadruple-loop reference with no vectorization or shared subexpressions;
/// the semantic anchor for contrastive_loss.
double loss_oracle(const DivergenceBatch& div, double tau);

/// Builds the same loss as a differentiable expression over divergence nodes
/// f[i][k]. Summation order is fixed (ascending j, then l) so results are
/// bit-stable. Returns the scalar total node.
diffmath::NodeId build_contrastive_loss(diffmath::Graph& g,
                                        const std::vector<std::vector<diffmath::NodeId>>& f,
                                        double tau);

/// Pairwise NT-Xent reference (the specialization the loss above generalizes):
/// average of l(x_i, x_j) over the ordered positive pairs of N two-view
/// samples, with l as in the standard formulation over 2N projections.
double nt_xent_average(const std::vector<std::pair<Vector, Vector>>& pairs, double tau);

}  // namespace latentdir::obj
