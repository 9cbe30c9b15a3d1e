#include "latentdir/directions.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

namespace latentdir::dir {

namespace {

using diffmath::Graph;
using diffmath::NodeId;

std::string prefix(const DirectionModel& m) { return "dir" + std::to_string(m.index); }

std::string degenerate_label(const DirectionModel& m) {
    return "direction " + std::to_string(m.index);
}

constexpr double kDegenerateNorm = 1e-10;

NodeId param_node(Graph& g, ParamMode pm, const std::string& name, const Matrix& value) {
    if (pm == ParamMode::Inputs)
        return g.input(name, static_cast<int>(value.rows()), static_cast<int>(value.cols()));
    return g.constant(value);
}

std::vector<double> flatten(const Matrix& m) {
    std::vector<double> out;
    out.reserve(static_cast<size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) out.push_back(m(r, c));
    return out;
}

Matrix unflatten(const std::vector<double>& v, int rows, int cols, const std::string& ctx) {
    if (static_cast<int>(v.size()) != rows * cols)
        throw DirectionError(ctx + ": expected " + std::to_string(rows * cols) +
                             " values, got " + std::to_string(v.size()));
    Matrix m(rows, cols);
    size_t i = 0;
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = v[i++];
    return m;
}

void check_finite(const Matrix& m, const std::string& ctx) {
    if (!m.allFinite()) throw DirectionError(ctx + ": non-finite parameter");
}

// JSON has no NaN literal; nlohmann dumps non-finite doubles as null. Map them
// back to NaN here so check_finite rejects them with the model context.
std::vector<double> read_doubles(const nlohmann::json& arr, const std::string& ctx) {
    if (!arr.is_array()) throw DirectionError(ctx + ": expected an array of numbers");
    std::vector<double> out;
    out.reserve(arr.size());
    for (const auto& e : arr) {
        if (e.is_null())
            out.push_back(std::numeric_limits<double>::quiet_NaN());
        else if (e.is_number())
            out.push_back(e.get<double>());
        else
            throw DirectionError(ctx + ": expected an array of numbers");
    }
    return out;
}

}  // namespace

std::string kind_name(Kind k) {
    switch (k) {
        case Kind::Global: return "global";
        case Kind::Linear: return "linear";
        case Kind::Nonlinear: return "nonlinear";
    }
    return "?";
}

Kind parse_kind(const std::string& s) {
    if (s == "global") return Kind::Global;
    if (s == "linear") return Kind::Linear;
    if (s == "nonlinear") return Kind::Nonlinear;
    throw DirectionError("unknown direction kind '" + s + "'");
}

void DirectionModel::for_each_param(
    const std::function<void(const std::string&, Matrix&)>& fn) {
    const std::string p = prefix(*this);
    switch (kind) {
        case Kind::Global:
            fn(p + ".theta", theta);
            break;
        case Kind::Linear:
            fn(p + ".M", M);
            break;
        case Kind::Nonlinear:
            for (size_t i = 0; i < layers.size(); ++i) {
                fn(p + ".L" + std::to_string(i) + ".W", layers[i].W);
                fn(p + ".L" + std::to_string(i) + ".b", layers[i].b);
            }
            for (size_t i = 0; i < bn.size(); ++i) {
                fn(p + ".bn" + std::to_string(i) + ".gain", bn[i].gain);
                fn(p + ".bn" + std::to_string(i) + ".shift", bn[i].shift);
            }
            break;
    }
}

void DirectionModel::for_each_param(
    const std::function<void(const std::string&, const Matrix&)>& fn) const {
    const_cast<DirectionModel*>(this)->for_each_param(
        [&](const std::string& name, Matrix& m) { fn(name, m); });
}

DirectionSet init_direction_models(Kind kind, int K, int d, std::uint64_t seed,
                                   int hidden_layers) {
    if (K < 2) throw DirectionError("K must be >= 2 (the contrastive loss needs negatives)");
    if (d < 2) throw DirectionError("latent dimension must be >= 2");
    if (kind == Kind::Nonlinear && (hidden_layers < 1 || hidden_layers > 3))
        throw DirectionError("nonlinear direction models use 1-3 dense layers, got " +
                             std::to_string(hidden_layers));

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto gaussian = [&](int r, int c) {
        Matrix m(r, c);
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) m(i, j) = normal(rng);
        return m;
    };

    DirectionSet set;
    set.kind = kind;
    set.d = d;
    set.seed = seed;
    for (int k = 0; k < K; ++k) {
        DirectionModel m;
        m.kind = kind;
        m.index = k;
        m.d = d;
        switch (kind) {
            case Kind::Global: {
                m.theta = gaussian(d, 1);
                m.theta /= m.theta.norm();
                break;
            }
            case Kind::Linear:
                m.M = Matrix::Identity(d, d) + 0.1 * gaussian(d, d);
                break;
            case Kind::Nonlinear: {
                // hidden width = d; Kaiming fan-in scaling.
                int prev = d;
                for (int layer = 0; layer < hidden_layers; ++layer) {
                    int width = d;
                    AffineLayer al;
                    al.W = std::sqrt(2.0 / prev) * gaussian(width, prev);
                    al.b = Matrix::Zero(width, 1);
                    m.layers.push_back(std::move(al));
                    prev = width;
                }
                for (int layer = 0; layer + 1 < hidden_layers; ++layer) {
                    BatchNormState s;
                    s.gain = Matrix::Ones(d, 1);
                    s.shift = Matrix::Zero(d, 1);
                    s.running_mean = Matrix::Zero(d, 1);
                    s.running_var = Matrix::Ones(d, 1);
                    m.bn.push_back(std::move(s));
                }
                break;
            }
        }
        set.models.push_back(std::move(m));
    }
    return set;
}

std::vector<NodeId> build_edit_batch(Graph& g, const DirectionModel& m,
                                     const std::vector<NodeId>& zs, double alpha, ParamMode pm,
                                     BnMode bn, std::vector<NodeId>* pre_bn_out) {
    if (zs.empty()) throw DirectionError("build_edit_batch: empty batch");
    const std::string p = prefix(m);
    const std::string label = degenerate_label(m);
    std::vector<NodeId> out;
    out.reserve(zs.size());

    switch (m.kind) {
        case Kind::Global: {
            NodeId theta = param_node(g, pm, p + ".theta", m.theta);
            NodeId u = g.l2_normalize(theta, kDegenerateNorm, label);
            NodeId step = g.scale(u, alpha);
            for (NodeId z : zs) out.push_back(g.add(z, step));
            return out;
        }
        case Kind::Linear: {
            NodeId M = param_node(g, pm, p + ".M", m.M);
            NodeId Z = zs.size() == 1 ? zs[0] : g.concat_cols(zs);
            NodeId raw = g.matmul(M, Z);
            for (size_t i = 0; i < zs.size(); ++i) {
                NodeId ui = g.l2_normalize(zs.size() == 1 ? raw : g.col(raw, static_cast<int>(i)),
                                           kDegenerateNorm, label);
                out.push_back(g.add(zs[i], g.scale(ui, alpha)));
            }
            return out;
        }
        case Kind::Nonlinear: {
            NodeId X = zs.size() == 1 ? zs[0] : g.concat_cols(zs);
            const size_t L = m.layers.size();
            for (size_t l = 0; l < L; ++l) {
                NodeId W = param_node(g, pm, p + ".L" + std::to_string(l) + ".W", m.layers[l].W);
                NodeId b = param_node(g, pm, p + ".L" + std::to_string(l) + ".b", m.layers[l].b);
                X = g.add(g.matmul(W, X), b);
                if (l + 1 < L) {
                    X = g.relu(X);
                    if (pre_bn_out) pre_bn_out->push_back(X);
                    const BatchNormState& s = m.bn[l];
                    NodeId gain = param_node(g, pm, p + ".bn" + std::to_string(l) + ".gain", s.gain);
                    NodeId shift =
                        param_node(g, pm, p + ".bn" + std::to_string(l) + ".shift", s.shift);
                    if (bn == BnMode::Batch)
                        X = g.batch_norm(X, gain, shift);
                    else
                        X = g.batch_norm(X, gain, shift, g.constant(s.running_mean),
                                         g.constant(s.running_var));
                }
            }
            for (size_t i = 0; i < zs.size(); ++i) {
                NodeId ui = g.l2_normalize(zs.size() == 1 ? X : g.col(X, static_cast<int>(i)),
                                           kDegenerateNorm, label);
                out.push_back(g.add(zs[i], g.scale(ui, alpha)));
            }
            return out;
        }
    }
    throw DirectionError("unreachable");
}

NodeId build_edit(Graph& g, const DirectionModel& m, NodeId z, double alpha, ParamMode pm,
                  BnMode bn) {
    if (bn == BnMode::Batch && m.kind == Kind::Nonlinear && m.layers.size() > 1)
        throw DirectionError("batch statistics need a batch; use build_edit_batch");
    return build_edit_batch(g, m, {z}, alpha, pm, bn).front();
}

Vector edit(const DirectionModel& m, const Vector& z, double alpha) {
    if (static_cast<int>(z.size()) != m.d)
        throw DirectionError("edit: latent length " + std::to_string(z.size()) +
                             " does not match model dimension " + std::to_string(m.d));
    Graph g;
    NodeId z_in = g.constant(z);
    NodeId e = build_edit(g, m, z_in, alpha, ParamMode::Constants, BnMode::Running);
    return diffmath::evaluate(g, {}).value(e).col(0);
}

void bind_params(const DirectionModel& m, diffmath::Bindings& out) {
    m.for_each_param([&](const std::string& name, const Matrix& v) { out[name] = v; });
}

std::string serialize_direction_set(const DirectionSet& set) {
    nlohmann::json doc;
    doc["version"] = 1;
    doc["kind"] = kind_name(set.kind);
    doc["d"] = set.d;
    doc["K"] = set.K();
    doc["seed"] = set.seed;
    doc["steps_trained"] = set.steps_trained;
    doc["config_digest"] = set.config_digest;
    nlohmann::json models = nlohmann::json::array();
    for (const DirectionModel& m : set.models) {
        nlohmann::json jm;
        jm["index"] = m.index;
        switch (m.kind) {
            case Kind::Global:
                jm["theta"] = flatten(m.theta);
                break;
            case Kind::Linear:
                jm["M"] = flatten(m.M);
                break;
            case Kind::Nonlinear: {
                nlohmann::json layers = nlohmann::json::array();
                for (const AffineLayer& l : m.layers) {
                    layers.push_back({{"rows", l.W.rows()},
                                      {"cols", l.W.cols()},
                                      {"W", flatten(l.W)},
                                      {"b", flatten(l.b)}});
                }
                jm["layers"] = layers;
                nlohmann::json bns = nlohmann::json::array();
                for (const BatchNormState& s : m.bn) {
                    bns.push_back({{"gain", flatten(s.gain)},
                                   {"shift", flatten(s.shift)},
                                   {"running_mean", flatten(s.running_mean)},
                                   {"running_var", flatten(s.running_var)}});
                }
                jm["bn"] = bns;
                break;
            }
        }
        models.push_back(std::move(jm));
    }
    doc["models"] = std::move(models);
    return doc.dump(2) + "\n";
}

DirectionSet parse_direction_set(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw DirectionError(std::string("malformed direction-set file: ") + e.what());
    }
    if (doc.value("version", -1) != 1)
        throw DirectionError("unsupported direction-set version " +
                             std::to_string(doc.value("version", -1)));
    DirectionSet set;
    set.kind = parse_kind(doc.at("kind").get<std::string>());
    set.d = doc.at("d").get<int>();
    set.seed = doc.at("seed").get<std::uint64_t>();
    set.steps_trained = doc.value("steps_trained", 0);
    set.config_digest = doc.value("config_digest", std::uint64_t{0});
    int K = doc.at("K").get<int>();
    if (K < 2) throw DirectionError("direction-set file has K=" + std::to_string(K) +
                                    "; K must be >= 2");
    const auto& models = doc.at("models");
    if (static_cast<int>(models.size()) != K)
        throw DirectionError("model count disagrees with K");
    for (const auto& jm : models) {
        DirectionModel m;
        m.kind = set.kind;
        m.index = jm.at("index").get<int>();
        m.d = set.d;
        const std::string ctx = "model " + std::to_string(m.index);
        switch (set.kind) {
            case Kind::Global:
                m.theta = unflatten(read_doubles(jm.at("theta"), ctx), set.d, 1, ctx);
                check_finite(m.theta, ctx);
                break;
            case Kind::Linear:
                m.M = unflatten(read_doubles(jm.at("M"), ctx), set.d, set.d, ctx);
                check_finite(m.M, ctx);
                break;
            case Kind::Nonlinear: {
                int prev = set.d;
                for (const auto& jl : jm.at("layers")) {
                    AffineLayer l;
                    int rows = jl.at("rows").get<int>();
                    int cols = jl.at("cols").get<int>();
                    if (cols != prev)
                        throw DirectionError(ctx + ": layer input width " + std::to_string(cols) +
                                             " does not chain from " + std::to_string(prev));
                    l.W = unflatten(read_doubles(jl.at("W"), ctx), rows, cols, ctx);
                    l.b = unflatten(read_doubles(jl.at("b"), ctx), rows, 1, ctx);
                    check_finite(l.W, ctx);
                    check_finite(l.b, ctx);
                    prev = rows;
                    m.layers.push_back(std::move(l));
                }
                if (prev != set.d)
                    throw DirectionError(ctx + ": output width must equal latent dimension");
                for (const auto& jb : jm.at("bn")) {
                    BatchNormState s;
                    int h = static_cast<int>(jb.at("gain").size());
                    s.gain = unflatten(read_doubles(jb.at("gain"), ctx), h, 1, ctx);
                    s.shift = unflatten(read_doubles(jb.at("shift"), ctx), h, 1, ctx);
                    s.running_mean =
                        unflatten(read_doubles(jb.at("running_mean"), ctx), h, 1, ctx);
                    s.running_var =
                        unflatten(read_doubles(jb.at("running_var"), ctx), h, 1, ctx);
                    for (const Matrix* mat : {&s.gain, &s.shift, &s.running_mean, &s.running_var})
                        check_finite(*mat, ctx);
                    m.bn.push_back(std::move(s));
                }
                if (m.bn.size() + 1 != m.layers.size())
                    throw DirectionError(ctx + ": batch-norm count must be layers-1");
                break;
            }
        }
        set.models.push_back(std::move(m));
    }
    return set;
}

void save_direction_set(const DirectionSet& set, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DirectionError("cannot open '" + path + "' for writing");
    os << serialize_direction_set(set);
    if (!os) throw DirectionError("short write to '" + path + "'");
}

DirectionSet load_direction_set(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DirectionError("cannot read direction-set file '" + path + "'");
    std::stringstream buf;
    buf << is.rdbuf();
    return parse_direction_set(buf.str());
}

}  // namespace latentdir::dir
