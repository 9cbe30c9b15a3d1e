#pragma once

#include <string>
#include <vector>

#include "latentdir/directions.hpp"
#include "latentdir/generators.hpp"
#include "latentdir/objective.hpp"

namespace latentdir::eval {

using diffmath::Matrix;
using diffmath::Vector;

class EvalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Exact O(n^3) Kuhn-Munkres on a rows x cols cost matrix. Rectangular
/// inputs are padded with zero-cost dummies; result[r] is the assigned
/// column or -1 when row r landed on a dummy.
std::vector<int> solve_assignment(const Matrix& cost);

/// Mean unit edit direction of one model over probe latents, re-normalized.
/// Exactly theta/||theta|| for global models. `variance_out`, when non-null,
/// receives the mean squared deviation of per-probe unit edits from the
/// fingerprint (0 for unconditional models).
Vector fingerprint(const dir::DirectionModel& m, const std::vector<Vector>& probes,
                   double alpha, double* variance_out = nullptr);

struct AlignmentReport {
    std::vector<int> assignment;        // learned k -> ground-truth j, or -1
    std::vector<double> cos_abs;        // per matched pair, index by k (-1 rows get 0)
    double mean_cos_abs = 0.0;          // over matched pairs only
    std::vector<int> unmatched;         // learned indices without a partner
    std::vector<double> fingerprint_variance;  // per learned direction
};

/// Optimal matching of learned fingerprints against ground-truth directions
/// under cost 1 - |cos|; sign- and permutation-invariant by construction.
AlignmentReport alignment_score(const dir::DirectionSet& set, const std::vector<Vector>& truth,
                                const std::vector<Vector>& probes, double alpha = 1.0);

/// Mean pairwise |cos| between fingerprints: 0 = fully diverse, 1 = collapsed.
double diversity_score(const dir::DirectionSet& set, const std::vector<Vector>& probes,
                       double alpha = 1.0);

/// Mean over edited codes of (same-direction mean cosine) minus
/// (cross-direction mean cosine) of feature divergences; lies in [-2, 2].
double identifiability_margin(const gen::GeneratorSpec& g, const dir::DirectionSet& set,
                              const std::vector<Vector>& batch, double alpha, double tau);

struct RescoreReport {
    int direction = -1;
    int factor = -1;
    std::vector<double> alphas;
    Matrix scores;                  // probes x alphas
    std::vector<double> baseline;   // score at alpha = 0 per probe
    double monotone_fraction = 0.0;
};

/// Probe read-out h_j(edit_k(z, alpha)) over a symmetric alpha grid, where j
/// is the ground-truth factor the alignment assigned to direction k.
RescoreReport rescoring(const gen::GeneratorSpec& g, const dir::DirectionSet& set,
                        const AlignmentReport& align, int k,
                        const std::vector<double>& alpha_grid,
                        const std::vector<Vector>& probes);

/// Alignment of a frozen set against another generator's ground truth.
AlignmentReport transfer_eval(const dir::DirectionSet& set, const gen::GeneratorSpec& gen_b,
                              const std::vector<Vector>& probes, double alpha = 1.0);

}  // namespace latentdir::eval
