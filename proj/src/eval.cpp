#include "latentdir/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace latentdir::eval {

std::vector<int> solve_assignment(const Matrix& cost) {
    const int rows = static_cast<int>(cost.rows());
    const int cols = static_cast<int>(cost.cols());
    if (rows == 0 || cols == 0) throw EvalError("solve_assignment: empty cost matrix");
    if (!cost.allFinite()) throw EvalError("solve_assignment: non-finite cost entry");

    const int n = std::max(rows, cols);
    auto at = [&](int r, int c) -> double {
        return (r < rows && c < cols) ? cost(r, c) : 0.0;  // dummy padding
    };

    // Kuhn-Munkres with potentials, 1-based internals.
    std::vector<double> u(static_cast<size_t>(n) + 1, 0.0), v(static_cast<size_t>(n) + 1, 0.0);
    std::vector<int> p(static_cast<size_t>(n) + 1, 0), way(static_cast<size_t>(n) + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(static_cast<size_t>(n) + 1,
                                 std::numeric_limits<double>::infinity());
        std::vector<char> used(static_cast<size_t>(n) + 1, 0);
        do {
            used[static_cast<size_t>(j0)] = 1;
            int i0 = p[static_cast<size_t>(j0)];
            int j1 = 0;
            double delta = std::numeric_limits<double>::infinity();
            for (int j = 1; j <= n; ++j) {
                if (used[static_cast<size_t>(j)]) continue;
                double cur = at(i0 - 1, j - 1) - u[static_cast<size_t>(i0)] - v[static_cast<size_t>(j)];
                if (cur < minv[static_cast<size_t>(j)]) {
                    minv[static_cast<size_t>(j)] = cur;
                    way[static_cast<size_t>(j)] = j0;
                }
                if (minv[static_cast<size_t>(j)] < delta) {
                    delta = minv[static_cast<size_t>(j)];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[static_cast<size_t>(j)]) {
                    u[static_cast<size_t>(p[static_cast<size_t>(j)])] += delta;
                    v[static_cast<size_t>(j)] -= delta;
                } else {
                    minv[static_cast<size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (p[static_cast<size_t>(j0)] != 0);
        do {
            int j1 = way[static_cast<size_t>(j0)];
            p[static_cast<size_t>(j0)] = p[static_cast<size_t>(j1)];
            j0 = j1;
        } while (j0);
    }

    std::vector<int> result(static_cast<size_t>(rows), -1);
    for (int j = 1; j <= n; ++j) {
        int i = p[static_cast<size_t>(j)];
        if (i >= 1 && i <= rows && j <= cols) result[static_cast<size_t>(i - 1)] = j - 1;
    }
    return result;
}

Vector fingerprint(const dir::DirectionModel& m, const std::vector<Vector>& probes,
                   double alpha, double* variance_out) {
    if (probes.empty()) throw EvalError("fingerprint: need at least one probe latent");
    if (alpha == 0.0) throw EvalError("fingerprint: alpha must be nonzero");
    if (m.kind == dir::Kind::Global) {
        if (variance_out) *variance_out = 0.0;
        Vector u = m.theta.col(0);
        return u / u.norm();
    }

    std::vector<Vector> units;
    units.reserve(probes.size());
    Vector mean = Vector::Zero(m.d);
    for (const Vector& z : probes) {
        Vector u = (dir::edit(m, z, alpha) - z) / alpha;
        mean += u;
        units.push_back(std::move(u));
    }
    mean /= static_cast<double>(probes.size());
    if (variance_out) {
        double var = 0.0;
        for (const Vector& u : units) var += (u - mean).squaredNorm();
        *variance_out = var / static_cast<double>(units.size());
    }
    double n = mean.norm();
    if (n < 1e-12) throw EvalError("fingerprint: mean edit direction vanished for direction " +
                                   std::to_string(m.index));
    return mean / n;
}

AlignmentReport alignment_score(const dir::DirectionSet& set, const std::vector<Vector>& truth,
                                const std::vector<Vector>& probes, double alpha) {
    if (truth.empty()) throw EvalError("alignment_score: empty ground truth");
    const int K = set.K();
    const int T = static_cast<int>(truth.size());

    AlignmentReport report;
    report.fingerprint_variance.resize(static_cast<size_t>(K), 0.0);
    std::vector<Vector> prints;
    prints.reserve(static_cast<size_t>(K));
    for (int k = 0; k < K; ++k)
        prints.push_back(fingerprint(set.models[static_cast<size_t>(k)], probes, alpha,
                                     &report.fingerprint_variance[static_cast<size_t>(k)]));

    Matrix cost(K, T);
    for (int k = 0; k < K; ++k)
        for (int j = 0; j < T; ++j) {
            double c = std::abs(prints[static_cast<size_t>(k)].dot(truth[static_cast<size_t>(j)]) /
                                (prints[static_cast<size_t>(k)].norm() *
                                 truth[static_cast<size_t>(j)].norm()));
            cost(k, j) = 1.0 - c;
        }

    report.assignment = solve_assignment(cost);
    report.cos_abs.assign(static_cast<size_t>(K), 0.0);
    double sum = 0.0;
    int matched = 0;
    for (int k = 0; k < K; ++k) {
        int j = report.assignment[static_cast<size_t>(k)];
        if (j < 0) {
            report.unmatched.push_back(k);
            continue;
        }
        report.cos_abs[static_cast<size_t>(k)] = 1.0 - cost(k, j);
        sum += report.cos_abs[static_cast<size_t>(k)];
        ++matched;
    }
    report.mean_cos_abs = matched ? sum / matched : 0.0;
    return report;
}

double diversity_score(const dir::DirectionSet& set, const std::vector<Vector>& probes,
                       double alpha) {
    const int K = set.K();
    if (K < 2) throw EvalError("diversity_score: need K >= 2");
    std::vector<Vector> prints;
    prints.reserve(static_cast<size_t>(K));
    for (const dir::DirectionModel& m : set.models)
        prints.push_back(fingerprint(m, probes, alpha));
    double sum = 0.0;
    int count = 0;
    for (int k = 0; k < K; ++k)
        for (int l = k + 1; l < K; ++l) {
            sum += std::abs(prints[static_cast<size_t>(k)].dot(prints[static_cast<size_t>(l)]));
            ++count;
        }
    return sum / count;
}

double identifiability_margin(const gen::GeneratorSpec& g, const dir::DirectionSet& set,
                              const std::vector<Vector>& batch, double alpha, double tau) {
    (void)tau;  // the margin is temperature-free; kept for interface symmetry
    obj::DivergenceBatch div = obj::feature_divergences(g, set, batch, alpha);
    const int N = div.N();
    const int K = div.K();

    auto cos = [&](int i, int k, int j, int l) {
        const Vector& a = div.f[static_cast<size_t>(i)][static_cast<size_t>(k)];
        const Vector& b = div.f[static_cast<size_t>(j)][static_cast<size_t>(l)];
        return a.dot(b) / ((a.norm() + 1e-12) * (b.norm() + 1e-12));
    };

    double total = 0.0;
    for (int i = 0; i < N; ++i)
        for (int k = 0; k < K; ++k) {
            double same = 0.0;
            for (int j = 0; j < N; ++j)
                if (j != i) same += cos(i, k, j, k);
            same /= (N - 1);
            double cross = 0.0;
            for (int j = 0; j < N; ++j)
                for (int l = 0; l < K; ++l)
                    if (l != k) cross += cos(i, k, j, l);
            cross /= static_cast<double>(N) * (K - 1);
            total += same - cross;
        }
    return total / (static_cast<double>(N) * K);
}

RescoreReport rescoring(const gen::GeneratorSpec& g, const dir::DirectionSet& set,
                        const AlignmentReport& align, int k,
                        const std::vector<double>& alpha_grid,
                        const std::vector<Vector>& probes) {
    if (g.kind() != gen::GeneratorSpec::Kind::SyntheticMixing)
        throw EvalError("rescoring needs a synthetic generator (ground-truth read-out)");
    if (k < 0 || k >= set.K()) throw EvalError("rescoring: direction index out of range");
    if (static_cast<int>(align.assignment.size()) != set.K())
        throw EvalError("rescoring: alignment report does not match the direction set");
    int factor = align.assignment[static_cast<size_t>(k)];
    if (factor < 0)
        throw EvalError("rescoring: direction " + std::to_string(k) +
                        " is unassigned to any ground-truth factor");
    if (alpha_grid.empty()) throw EvalError("rescoring: empty alpha grid");
    // symmetric, ascending, containing 0
    std::vector<double> sorted = alpha_grid;
    std::sort(sorted.begin(), sorted.end());
    if (sorted != alpha_grid) throw EvalError("rescoring: alpha grid must be ascending");
    for (double a : alpha_grid)
        if (std::find(alpha_grid.begin(), alpha_grid.end(), -a) == alpha_grid.end())
            throw EvalError("rescoring: alpha grid must be symmetric around 0");
    if (std::find(alpha_grid.begin(), alpha_grid.end(), 0.0) == alpha_grid.end())
        throw EvalError("rescoring: alpha grid must contain 0 (the baseline)");

    const dir::DirectionModel& m = set.models[static_cast<size_t>(k)];
    RescoreReport report;
    report.direction = k;
    report.factor = factor;
    report.alphas = alpha_grid;
    report.scores = Matrix(static_cast<int>(probes.size()), static_cast<int>(alpha_grid.size()));
    report.baseline.resize(probes.size());

    int monotone = 0;
    for (size_t p = 0; p < probes.size(); ++p) {
        for (size_t a = 0; a < alpha_grid.size(); ++a) {
            Vector edited = alpha_grid[a] == 0.0 ? probes[p] : dir::edit(m, probes[p], alpha_grid[a]);
            report.scores(static_cast<int>(p), static_cast<int>(a)) = g.features(edited)(factor);
        }
        report.baseline[p] = g.features(probes[p])(factor);
        bool inc = true, dec = true;
        for (size_t a = 1; a < alpha_grid.size(); ++a) {
            double prev = report.scores(static_cast<int>(p), static_cast<int>(a - 1));
            double cur = report.scores(static_cast<int>(p), static_cast<int>(a));
            if (!(cur > prev)) inc = false;
            if (!(cur < prev)) dec = false;
        }
        if (inc || dec) ++monotone;
    }
    report.monotone_fraction =
        probes.empty() ? 0.0 : static_cast<double>(monotone) / static_cast<double>(probes.size());
    return report;
}

AlignmentReport transfer_eval(const dir::DirectionSet& set, const gen::GeneratorSpec& gen_b,
                              const std::vector<Vector>& probes, double alpha) {
    if (gen_b.latent_dim() != set.d)
        throw EvalError("transfer_eval: latent dimension mismatch (directions d=" +
                        std::to_string(set.d) + ", generator d=" +
                        std::to_string(gen_b.latent_dim()) + ")");
    return alignment_score(set, gen_b.ground_truth_directions(), probes, alpha);
}

}  // namespace latentdir::eval
