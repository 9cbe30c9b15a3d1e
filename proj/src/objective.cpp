#include "latentdir/objective.hpp"

#include <cmath>

namespace latentdir::obj {

namespace {

constexpr double kNormGuard = 1e-12;

double guarded_cos(const Vector& a, const Vector& b) {
    return a.dot(b) / ((a.norm() + kNormGuard) * (b.norm() + kNormGuard));
}

void check_loss_preconditions(const DivergenceBatch& div, double tau) {
    if (tau <= 0.0) throw ObjectiveError("tau must be positive");
    if (div.N() < 2) throw ObjectiveError("contrastive loss needs N >= 2 samples");
    if (div.K() < 2) throw ObjectiveError("contrastive loss needs K >= 2 directions");
    for (const auto& row : div.f) {
        if (static_cast<int>(row.size()) != div.K())
            throw ObjectiveError("ragged divergence batch: every sample needs K entries");
        for (const Vector& v : row) {
            if (static_cast<int>(v.size()) != div.F())
                throw ObjectiveError("ragged divergence batch: inconsistent feature length");
            if (!v.allFinite()) throw ObjectiveError("non-finite feature divergence");
        }
    }
}

}  // namespace

DivergenceBatch feature_divergences(const gen::GeneratorSpec& g, const dir::DirectionSet& set,
                                    const std::vector<Vector>& batch, double alpha) {
    const int N = static_cast<int>(batch.size());
    if (N < 2) throw ObjectiveError("feature divergences need N >= 2 (no positive pairs otherwise)");
    for (const Vector& z : batch)
        if (static_cast<int>(z.size()) != g.latent_dim())
            throw ObjectiveError("latent length does not match the generator");

    DivergenceBatch div;
    div.latents = batch;
    div.alpha = alpha;
    div.generator_id = g.id();
    div.layer = g.target_layer();
    div.f.assign(static_cast<size_t>(N), {});

    std::vector<Vector> base(static_cast<size_t>(N));
    for (int i = 0; i < N; ++i) base[static_cast<size_t>(i)] = g.features(batch[static_cast<size_t>(i)]);

    for (int i = 0; i < N; ++i) {
        div.f[static_cast<size_t>(i)].reserve(static_cast<size_t>(set.K()));
        for (const dir::DirectionModel& m : set.models) {
            Vector edited = dir::edit(m, batch[static_cast<size_t>(i)], alpha);
            div.f[static_cast<size_t>(i)].push_back(g.features(edited) - base[static_cast<size_t>(i)]);
        }
    }
    return div;
}

LossValue contrastive_loss(const DivergenceBatch& div, double tau) {
    check_loss_preconditions(div, tau);
    const int N = div.N();
    const int K = div.K();
    const int F = div.F();
    const int NK = N * K;

    // Rows indexed by i*K + k.
    Matrix D(NK, F);
    Vector norms(NK);
    for (int i = 0; i < N; ++i)
        for (int k = 0; k < K; ++k) {
            D.row(i * K + k) = div.f[static_cast<size_t>(i)][static_cast<size_t>(k)].transpose();
            norms(i * K + k) = div.f[static_cast<size_t>(i)][static_cast<size_t>(k)].norm() + kNormGuard;
        }
    Matrix U = D.array().colwise() / norms.array();
    Matrix E = ((U * U.transpose()).array() / tau).exp();

    LossValue out;
    out.tau = tau;
    out.per_code = Matrix::Zero(N, K);
    for (int i = 0; i < N; ++i)
        for (int k = 0; k < K; ++k) {
            const int row = i * K + k;
            double num = 0.0;
            for (int j = 0; j < N; ++j)
                if (j != i) num += E(row, j * K + k);
            double den = 0.0;
            for (int j = 0; j < N; ++j)
                for (int l = 0; l < K; ++l)
                    if (l != k) den += E(row, j * K + l);
            out.per_code(i, k) = std::log(den) - std::log(num);
        }
    out.total = out.per_code.mean();
    return out;
}

double loss_oracle(const DivergenceBatch& div, double tau) {
    check_loss_preconditions(div, tau);
    const int N = div.N();
    const int K = div.K();

    double total = 0.0;
    for (int i = 0; i < N; ++i) {
        for (int k = 0; k < K; ++k) {
            double num = 0.0;
            for (int j = 0; j < N; ++j) {
                if (j == i) continue;
                num += std::exp(guarded_cos(div.f[static_cast<size_t>(i)][static_cast<size_t>(k)],
                                            div.f[static_cast<size_t>(j)][static_cast<size_t>(k)]) /
                                tau);
            }
            double den = 0.0;
            for (int j = 0; j < N; ++j) {
                for (int l = 0; l < K; ++l) {
                    if (l == k) continue;
                    den += std::exp(
                        guarded_cos(div.f[static_cast<size_t>(i)][static_cast<size_t>(k)],
                                    div.f[static_cast<size_t>(j)][static_cast<size_t>(l)]) /
                        tau);
                }
            }
            total += -std::log(num / den);
        }
    }
    return total / (static_cast<double>(N) * static_cast<double>(K));
}

diffmath::NodeId build_contrastive_loss(diffmath::Graph& g,
                                        const std::vector<std::vector<diffmath::NodeId>>& f,
                                        double tau) {
    if (tau <= 0.0) throw ObjectiveError("tau must be positive");
    const int N = static_cast<int>(f.size());
    const int K = N > 0 ? static_cast<int>(f[0].size()) : 0;
    if (N < 2 || K < 2) throw ObjectiveError("contrastive loss needs N >= 2 and K >= 2");

    auto flat = [&](int i, int k) { return f[static_cast<size_t>(i)][static_cast<size_t>(k)]; };
    const int NK = N * K;

    // exp(sim/tau) per unordered pair, built once and reused.
    std::vector<diffmath::NodeId> pair_exp(static_cast<size_t>(NK) * static_cast<size_t>(NK),
                                           -1);
    auto exp_sim = [&](int a, int b) {
        if (a > b) std::swap(a, b);
        diffmath::NodeId& slot = pair_exp[static_cast<size_t>(a) * static_cast<size_t>(NK) +
                                          static_cast<size_t>(b)];
        if (slot < 0) {
            diffmath::NodeId s =
                g.cosine_similarity(flat(a / K, a % K), flat(b / K, b % K));
            slot = g.exp(g.scale(s, 1.0 / tau));
        }
        return slot;
    };

    std::vector<diffmath::NodeId> per_code;
    per_code.reserve(static_cast<size_t>(NK));
    for (int i = 0; i < N; ++i) {
        for (int k = 0; k < K; ++k) {
            const int row = i * K + k;
            std::vector<diffmath::NodeId> num_terms;
            for (int j = 0; j < N; ++j)
                if (j != i) num_terms.push_back(exp_sim(row, j * K + k));
            std::vector<diffmath::NodeId> den_terms;
            for (int j = 0; j < N; ++j)
                for (int l = 0; l < K; ++l)
                    if (l != k) den_terms.push_back(exp_sim(row, j * K + l));
            diffmath::NodeId num = g.add_many(num_terms);
            diffmath::NodeId den = g.add_many(den_terms);
            per_code.push_back(g.sub(g.log(den), g.log(num)));
        }
    }
    return g.mean(g.concat_cols(per_code));
}

double nt_xent_average(const std::vector<std::pair<Vector, Vector>>& pairs, double tau) {
    if (tau <= 0.0) throw ObjectiveError("tau must be positive");
    if (pairs.size() < 2) throw ObjectiveError("NT-Xent needs at least 2 positive pairs");

    // 2N projections, pair p contributing rows 2p and 2p+1.
    std::vector<Vector> z;
    for (const auto& [a, b] : pairs) {
        z.push_back(a);
        z.push_back(b);
    }
    const int M = static_cast<int>(z.size());
    auto pair_loss = [&](int i, int j) {
        double num = std::exp(guarded_cos(z[static_cast<size_t>(i)], z[static_cast<size_t>(j)]) / tau);
        double den = 0.0;
        for (int k = 0; k < M; ++k)
            if (k != i)
                den += std::exp(guarded_cos(z[static_cast<size_t>(i)], z[static_cast<size_t>(k)]) / tau);
        return -std::log(num / den);
    };
    double total = 0.0;
    for (size_t p = 0; p < pairs.size(); ++p) {
        int a = static_cast<int>(2 * p);
        total += pair_loss(a, a + 1);
        total += pair_loss(a + 1, a);
    }
    return total / (2.0 * static_cast<double>(pairs.size()));
}

}  // namespace latentdir::obj
