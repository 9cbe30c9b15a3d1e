#include "latentdir/diffmath.hpp"

#include <cmath>
#include <sstream>

namespace latentdir::diffmath {

namespace {

[[noreturn]] void fail(NodeId id, const std::string& msg) {
    std::ostringstream os;
    os << "node " << id << ": " << msg;
    throw DiffMathError(os.str());
}

bool is_scalar(const Node& n) { return n.rows == 1 && n.cols == 1; }

}  // namespace

NodeId Graph::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

void Graph::check_same_shape(NodeId a, NodeId b, const char* what) const {
    const Node& na = node(a);
    const Node& nb = node(b);
    if (na.rows != nb.rows || na.cols != nb.cols) {
        std::ostringstream os;
        os << what << ": shape mismatch " << na.rows << "x" << na.cols << " vs "
           << nb.rows << "x" << nb.cols << " (nodes " << a << ", " << b << ")";
        throw DiffMathError(os.str());
    }
}

NodeId Graph::input(const std::string& name, int rows, int cols) {
    auto it = inputs_.find(name);
    if (it != inputs_.end()) {
        const Node& n = node(it->second);
        if (n.rows != rows || n.cols != cols)
            throw DiffMathError("input '" + name + "' redeclared with a different shape");
        return it->second;
    }
    if (rows <= 0 || cols <= 0) throw DiffMathError("input '" + name + "' has empty shape");
    Node n;
    n.op = Op::Input;
    n.rows = rows;
    n.cols = cols;
    n.name = name;
    NodeId id = push(std::move(n));
    inputs_[name] = id;
    return id;
}

NodeId Graph::constant(const Matrix& v) {
    if (v.size() == 0) throw DiffMathError("constant has empty shape");
    Node n;
    n.op = Op::Constant;
    n.rows = static_cast<int>(v.rows());
    n.cols = static_cast<int>(v.cols());
    n.value = v;
    return push(std::move(n));
}

NodeId Graph::constant_scalar(double v) {
    return constant(Matrix::Constant(1, 1, v));
}

NodeId Graph::add(NodeId a, NodeId b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    bool broadcast = nb.cols == 1 && na.cols > 1 && nb.rows == na.rows;
    if (!broadcast) check_same_shape(a, b, "add");
    Node n;
    n.op = Op::Add;
    n.args = {a, b};
    n.rows = na.rows;
    n.cols = na.cols;
    return push(std::move(n));
}

NodeId Graph::sub(NodeId a, NodeId b) {
    check_same_shape(a, b, "sub");
    const Node& na = node(a);
    Node n;
    n.op = Op::Sub;
    n.args = {a, b};
    n.rows = na.rows;
    n.cols = na.cols;
    return push(std::move(n));
}

NodeId Graph::scale(NodeId a, double c) {
    const Node& na = node(a);
    Node n;
    n.op = Op::Scale;
    n.args = {a};
    n.rows = na.rows;
    n.cols = na.cols;
    n.scalar = c;
    return push(std::move(n));
}

NodeId Graph::matmul(NodeId a, NodeId b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    if (na.cols != nb.rows) {
        std::ostringstream os;
        os << "matmul: inner dimensions disagree, " << na.rows << "x" << na.cols
           << " * " << nb.rows << "x" << nb.cols << " (nodes " << a << ", " << b << ")";
        throw DiffMathError(os.str());
    }
    Node n;
    n.op = Op::MatMul;
    n.args = {a, b};
    n.rows = na.rows;
    n.cols = nb.cols;
    return push(std::move(n));
}

NodeId Graph::tanh(NodeId a) {
    const Node& na = node(a);
    Node n;
    n.op = Op::Tanh;
    n.args = {a};
    n.rows = na.rows;
    n.cols = na.cols;
    return push(std::move(n));
}

NodeId Graph::relu(NodeId a) {
    const Node& na = node(a);
    Node n;
    n.op = Op::Relu;
    n.args = {a};
    n.rows = na.rows;
    n.cols = na.cols;
    return push(std::move(n));
}

NodeId Graph::batch_norm(NodeId x, NodeId gain, NodeId shift) {
    const Node& nx = node(x);
    const Node& ng = node(gain);
    const Node& ns = node(shift);
    if (ng.rows != nx.rows || ng.cols != 1 || ns.rows != nx.rows || ns.cols != 1)
        fail(x, "batch_norm: gain/shift must be column vectors matching the row count");
    if (nx.cols < 2)
        fail(x, "batch_norm: batch statistics need at least 2 columns");
    Node n;
    n.op = Op::BatchNorm;
    n.args = {x, gain, shift};
    n.rows = nx.rows;
    n.cols = nx.cols;
    return push(std::move(n));
}

NodeId Graph::batch_norm(NodeId x, NodeId gain, NodeId shift, NodeId mean, NodeId var) {
    const Node& nx = node(x);
    for (NodeId v : {gain, shift, mean, var}) {
        const Node& nv = node(v);
        if (nv.rows != nx.rows || nv.cols != 1)
            fail(x, "batch_norm: per-feature vectors must be Rx1 matching the input rows");
    }
    Node n;
    n.op = Op::BatchNorm;
    n.args = {x, gain, shift, mean, var};
    n.rows = nx.rows;
    n.cols = nx.cols;
    return push(std::move(n));
}

NodeId Graph::l2_norm(NodeId a) {
    Node n;
    n.op = Op::L2Norm;
    n.args = {a};
    n.rows = 1;
    n.cols = 1;
    return push(std::move(n));
}

NodeId Graph::l2_normalize(NodeId a, double min_norm, const std::string& label) {
    const Node& na = node(a);
    Node n;
    n.op = Op::L2Normalize;
    n.args = {a};
    n.rows = na.rows;
    n.cols = na.cols;
    n.min_norm = min_norm;
    n.name = label;
    return push(std::move(n));
}

NodeId Graph::dot(NodeId a, NodeId b) {
    check_same_shape(a, b, "dot");
    Node n;
    n.op = Op::Dot;
    n.args = {a, b};
    n.rows = 1;
    n.cols = 1;
    return push(std::move(n));
}

NodeId Graph::cosine_similarity(NodeId a, NodeId b) {
    check_same_shape(a, b, "cosine_similarity");
    Node n;
    n.op = Op::CosSim;
    n.args = {a, b};
    n.rows = 1;
    n.cols = 1;
    return push(std::move(n));
}

NodeId Graph::exp(NodeId a) {
    const Node& na = node(a);
    Node n;
    n.op = Op::Exp;
    n.args = {a};
    n.rows = na.rows;
    n.cols = na.cols;
    return push(std::move(n));
}

NodeId Graph::log(NodeId a) {
    const Node& na = node(a);
    Node n;
    n.op = Op::Log;
    n.args = {a};
    n.rows = na.rows;
    n.cols = na.cols;
    return push(std::move(n));
}

NodeId Graph::sum(NodeId a) {
    Node n;
    n.op = Op::Sum;
    n.args = {a};
    n.rows = 1;
    n.cols = 1;
    return push(std::move(n));
}

NodeId Graph::mean(NodeId a) {
    Node n;
    n.op = Op::Mean;
    n.args = {a};
    n.rows = 1;
    n.cols = 1;
    return push(std::move(n));
}

NodeId Graph::concat_cols(std::span<const NodeId> parts) {
    if (parts.empty()) throw DiffMathError("concat_cols: empty argument list");
    int rows = node(parts[0]).rows;
    int cols = 0;
    for (NodeId p : parts) {
        const Node& np = node(p);
        if (np.rows != rows) fail(p, "concat_cols: row counts disagree");
        cols += np.cols;
    }
    Node n;
    n.op = Op::ConcatCols;
    n.args.assign(parts.begin(), parts.end());
    n.rows = rows;
    n.cols = cols;
    return push(std::move(n));
}

NodeId Graph::col(NodeId a, int j) {
    const Node& na = node(a);
    if (j < 0 || j >= na.cols) fail(a, "col: index out of range");
    Node n;
    n.op = Op::Col;
    n.args = {a};
    n.rows = na.rows;
    n.cols = 1;
    n.col_index = j;
    return push(std::move(n));
}

NodeId Graph::add_many(std::span<const NodeId> terms) {
    if (terms.empty()) throw DiffMathError("add_many: empty argument list");
    NodeId acc = terms[0];
    for (size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
    return acc;
}

namespace testing {
NodeId wrong_adjoint_tanh(Graph& g, NodeId a) {
    NodeId t = g.tanh(a);
    const_cast<Node&>(g.node(t)).op = Op::TanhBadAdjoint;
    return t;
}
}  // namespace testing

double Evaluation::scalar(NodeId id) const {
    const Matrix& v = value(id);
    if (v.rows() != 1 || v.cols() != 1) throw DiffMathError("scalar() on a non-scalar node");
    return v(0, 0);
}

namespace {

void forward(const Graph& g, const Bindings& bindings, std::vector<Matrix>& values) {
    const int n = g.size();
    values.assign(static_cast<size_t>(n), Matrix());
    for (NodeId id = 0; id < n; ++id) {
        const Node& nd = g.node(id);
        auto arg = [&](int i) -> const Matrix& { return values[static_cast<size_t>(nd.args[static_cast<size_t>(i)])]; };
        Matrix& out = values[static_cast<size_t>(id)];
        switch (nd.op) {
            case Op::Input: {
                auto it = bindings.find(nd.name);
                if (it == bindings.end())
                    throw DiffMathError("unbound input '" + nd.name + "'");
                if (it->second.rows() != nd.rows || it->second.cols() != nd.cols) {
                    std::ostringstream os;
                    os << "input '" << nd.name << "': bound value is " << it->second.rows()
                       << "x" << it->second.cols() << ", declared " << nd.rows << "x" << nd.cols;
                    throw DiffMathError(os.str());
                }
                out = it->second;
                break;
            }
            case Op::Constant:
                out = nd.value;
                break;
            case Op::Add:
                if (nd.args.size() == 2 && g.node(nd.args[1]).cols == 1 && nd.cols > 1)
                    out = arg(0).colwise() + Eigen::VectorXd(arg(1).col(0));
                else
                    out = arg(0) + arg(1);
                break;
            case Op::Sub:
                out = arg(0) - arg(1);
                break;
            case Op::Scale:
                out = nd.scalar * arg(0);
                break;
            case Op::MatMul:
                out = arg(0) * arg(1);
                break;
            case Op::Tanh:
            case Op::TanhBadAdjoint:
                out = arg(0).array().tanh();
                break;
            case Op::Relu:
                out = arg(0).cwiseMax(0.0);
                break;
            case Op::BatchNorm: {
                const Matrix& x = arg(0);
                const Matrix& gain = arg(1);
                const Matrix& shift = arg(2);
                Vector mu, var;
                if (nd.args.size() == 5) {
                    mu = arg(3).col(0);
                    var = arg(4).col(0);
                } else {
                    mu = x.rowwise().mean();
                    Matrix centered = x.colwise() - mu;
                    var = centered.array().square().rowwise().mean();
                }
                Vector inv_std = (var.array() + Graph::kBatchNormEps).sqrt().inverse();
                Matrix xhat = (x.colwise() - mu).array().colwise() * inv_std.array();
                out = (xhat.array().colwise() * gain.col(0).array()).colwise() +
                      shift.col(0).array();
                break;
            }
            case Op::L2Norm:
                out = Matrix::Constant(1, 1, arg(0).norm());
                break;
            case Op::L2Normalize: {
                double nrm = arg(0).norm();
                if (nd.min_norm > 0.0 && nrm < nd.min_norm) {
                    std::string what = nd.name.empty() ? "l2_normalize" : nd.name;
                    throw DegenerateError(what + ": input norm " + std::to_string(nrm) +
                                          " below threshold");
                }
                // With a min-norm guard the norm is known positive, so divide
                // exactly; otherwise guard against zero input.
                double den = nd.min_norm > 0.0 ? nrm : nrm + Graph::kNormGuard;
                out = arg(0) / den;
                break;
            }
            case Op::Dot:
                out = Matrix::Constant(1, 1, (arg(0).array() * arg(1).array()).sum());
                break;
            case Op::CosSim: {
                double na = arg(0).norm() + Graph::kNormGuard;
                double nb = arg(1).norm() + Graph::kNormGuard;
                double d = (arg(0).array() * arg(1).array()).sum();
                out = Matrix::Constant(1, 1, d / (na * nb));
                break;
            }
            case Op::Exp:
                out = arg(0).array().exp();
                break;
            case Op::Log:
                out = arg(0).array().log();
                break;
            case Op::Sum:
                out = Matrix::Constant(1, 1, arg(0).sum());
                break;
            case Op::Mean:
                out = Matrix::Constant(1, 1, arg(0).mean());
                break;
            case Op::ConcatCols: {
                out.resize(nd.rows, nd.cols);
                int c = 0;
                for (NodeId a : nd.args) {
                    const Matrix& part = values[static_cast<size_t>(a)];
                    out.middleCols(c, part.cols()) = part;
                    c += static_cast<int>(part.cols());
                }
                break;
            }
            case Op::Col:
                out = arg(0).col(nd.col_index);
                break;
        }
    }
}

void backward(const Graph& g, NodeId root, const std::vector<Matrix>& values,
              std::vector<Matrix>& grads) {
    const int n = g.size();
    const Node& rn = g.node(root);
    if (rn.rows != 1 || rn.cols != 1)
        throw DiffMathError("gradient: root must be scalar-valued");

    // Only nodes the root depends on participate.
    std::vector<char> needed(static_cast<size_t>(n), 0);
    needed[static_cast<size_t>(root)] = 1;
    for (NodeId id = root; id >= 0; --id) {
        if (!needed[static_cast<size_t>(id)]) continue;
        for (NodeId a : g.node(id).args) needed[static_cast<size_t>(a)] = 1;
    }

    grads.assign(static_cast<size_t>(n), Matrix());
    auto grad_of = [&](NodeId id) -> Matrix& {
        Matrix& m = grads[static_cast<size_t>(id)];
        if (m.size() == 0) {
            const Node& nd = g.node(id);
            m = Matrix::Zero(nd.rows, nd.cols);
        }
        return m;
    };
    grad_of(root)(0, 0) = 1.0;

    for (NodeId id = root; id >= 0; --id) {
        if (!needed[static_cast<size_t>(id)]) continue;
        const Node& nd = g.node(id);
        if (grads[static_cast<size_t>(id)].size() == 0) continue;  // unreached
        const Matrix& gout = grads[static_cast<size_t>(id)];
        auto val = [&](int i) -> const Matrix& { return values[static_cast<size_t>(nd.args[static_cast<size_t>(i)])]; };
        switch (nd.op) {
            case Op::Input:
            case Op::Constant:
                break;
            case Op::Add: {
                grad_of(nd.args[0]) += gout;
                const Node& nb = g.node(nd.args[1]);
                if (nb.cols == 1 && nd.cols > 1)
                    grad_of(nd.args[1]) += gout.rowwise().sum();
                else
                    grad_of(nd.args[1]) += gout;
                break;
            }
            case Op::Sub:
                grad_of(nd.args[0]) += gout;
                grad_of(nd.args[1]) -= gout;
                break;
            case Op::Scale:
                grad_of(nd.args[0]) += nd.scalar * gout;
                break;
            case Op::MatMul:
                grad_of(nd.args[0]) += gout * val(1).transpose();
                grad_of(nd.args[1]) += val(0).transpose() * gout;
                break;
            case Op::Tanh: {
                const Matrix& y = values[static_cast<size_t>(id)];
                grad_of(nd.args[0]).array() += gout.array() * (1.0 - y.array().square());
                break;
            }
            case Op::TanhBadAdjoint: {
                // Deliberately wrong: uses 1 - y instead of 1 - y^2.
                const Matrix& y = values[static_cast<size_t>(id)];
                grad_of(nd.args[0]).array() += gout.array() * (1.0 - y.array());
                break;
            }
            case Op::Relu:
                grad_of(nd.args[0]).array() +=
                    gout.array() * (val(0).array() > 0.0).cast<double>();
                break;
            case Op::BatchNorm: {
                const Matrix& x = val(0);
                const Matrix& gain = val(1);
                const double m = static_cast<double>(x.cols());
                Vector mu, var;
                bool batch_stats = nd.args.size() == 3;
                if (batch_stats) {
                    mu = x.rowwise().mean();
                    Matrix centered = x.colwise() - mu;
                    var = centered.array().square().rowwise().mean();
                } else {
                    mu = val(3).col(0);
                    var = val(4).col(0);
                }
                Vector inv_std = (var.array() + Graph::kBatchNormEps).sqrt().inverse();
                Matrix xc = x.colwise() - mu;
                Matrix xhat = xc.array().colwise() * inv_std.array();
                Matrix dxhat = gout.array().colwise() * gain.col(0).array();
                grad_of(nd.args[1]) += (gout.array() * xhat.array()).rowwise().sum().matrix();
                grad_of(nd.args[2]) += gout.rowwise().sum();
                if (batch_stats) {
                    Vector dvar = (dxhat.array() * xc.array()).rowwise().sum().matrix();
                    dvar = (-0.5 * dvar.array() * inv_std.array().cube()).matrix();
                    Vector dmu = (-(dxhat.array().colwise() * inv_std.array()).rowwise().sum())
                                     .matrix() +
                                 (dvar.array() * (-2.0 / m) * xc.rowwise().sum().array()).matrix();
                    Matrix dx = (dxhat.array().colwise() * inv_std.array()).matrix();
                    dx += ((xc * (2.0 / m)).array().colwise() * dvar.array()).matrix();
                    dx.colwise() += Eigen::VectorXd(dmu / m);
                    grad_of(nd.args[0]) += dx;
                } else {
                    grad_of(nd.args[0]) +=
                        (dxhat.array().colwise() * inv_std.array()).matrix();
                }
                break;
            }
            case Op::L2Norm: {
                double nrm = val(0).norm();
                grad_of(nd.args[0]) += gout(0, 0) * val(0) / (nrm + Graph::kNormGuard);
                break;
            }
            case Op::L2Normalize: {
                const Matrix& x = val(0);
                double raw = x.norm();
                double nrm = nd.min_norm > 0.0 ? raw : raw + Graph::kNormGuard;
                double gx = (gout.array() * x.array()).sum();
                grad_of(nd.args[0]) +=
                    gout / nrm - x * (gx / (nrm * nrm * std::max(raw, Graph::kNormGuard)));
                break;
            }
            case Op::Dot:
                grad_of(nd.args[0]) += gout(0, 0) * val(1);
                grad_of(nd.args[1]) += gout(0, 0) * val(0);
                break;
            case Op::CosSim: {
                const Matrix& a = val(0);
                const Matrix& b = val(1);
                double ra = a.norm();
                double rb = b.norm();
                double na = ra + Graph::kNormGuard;
                double nb = rb + Graph::kNormGuard;
                double s = (a.array() * b.array()).sum() / (na * nb);
                double go = gout(0, 0);
                grad_of(nd.args[0]) +=
                    go * (b / (na * nb) - a * (s / (na * std::max(ra, Graph::kNormGuard))));
                grad_of(nd.args[1]) +=
                    go * (a / (na * nb) - b * (s / (nb * std::max(rb, Graph::kNormGuard))));
                break;
            }
            case Op::Exp:
                grad_of(nd.args[0]).array() +=
                    gout.array() * values[static_cast<size_t>(id)].array();
                break;
            case Op::Log:
                grad_of(nd.args[0]).array() += gout.array() / val(0).array();
                break;
            case Op::Sum:
                grad_of(nd.args[0]).array() += gout(0, 0);
                break;
            case Op::Mean:
                grad_of(nd.args[0]).array() += gout(0, 0) / static_cast<double>(val(0).size());
                break;
            case Op::ConcatCols: {
                int c = 0;
                for (NodeId a : nd.args) {
                    const Node& na = g.node(a);
                    grad_of(a) += gout.middleCols(c, na.cols);
                    c += na.cols;
                }
                break;
            }
            case Op::Col:
                grad_of(nd.args[0]).col(nd.col_index) += gout.col(0);
                break;
        }
    }
}

}  // namespace

Evaluation evaluate(const Graph& g, const Bindings& bindings) {
    Evaluation ev;
    forward(g, bindings, ev.values_);
    return ev;
}

GradientResult gradient(const Graph& g, NodeId root, const Bindings& bindings,
                        const std::vector<std::string>& wrt) {
    GradientResult res;
    forward(g, bindings, res.eval.values_);
    std::vector<Matrix> grads;
    backward(g, root, res.eval.values_, grads);
    for (const std::string& name : wrt) {
        if (!g.has_input(name)) throw DiffMathError("gradient: unknown input '" + name + "'");
        // locate the input node
        for (NodeId id = 0; id < g.size(); ++id) {
            const Node& nd = g.node(id);
            if (nd.op == Op::Input && nd.name == name) {
                Matrix& gm = grads[static_cast<size_t>(id)];
                res.grads[name] =
                    gm.size() ? gm : Matrix::Zero(nd.rows, nd.cols);
                break;
            }
        }
    }
    return res;
}

GradientReport check_gradient(const Graph& g, NodeId root, const Bindings& bindings,
                              const std::vector<std::string>& wrt, double eps, double tol) {
    if (eps <= 0.0) throw DiffMathError("check_gradient: eps must be positive");
    if (tol <= 0.0) throw DiffMathError("check_gradient: tol must be positive");

    GradientReport report;
    GradientResult res = gradient(g, root, bindings, wrt);
    report.analytic = res.grads;

    for (const std::string& name : wrt) {
        const Matrix& base = bindings.at(name);
        Matrix numeric = Matrix::Zero(base.rows(), base.cols());
        Bindings probe = bindings;
        for (Eigen::Index i = 0; i < base.size(); ++i) {
            probe[name] = base;
            probe[name](i) = base(i) + eps;
            double fp = evaluate(g, probe).scalar(root);
            probe[name](i) = base(i) - eps;
            double fm = evaluate(g, probe).scalar(root);
            numeric(i) = (fp - fm) / (2.0 * eps);
        }
        report.numeric[name] = numeric;

        const Matrix& analytic = report.analytic[name];
        for (Eigen::Index i = 0; i < base.size(); ++i) {
            double a = analytic(i);
            double nn = numeric(i);
            double rel = std::abs(a - nn) / std::max({std::abs(a), std::abs(nn), 1e-8});
            report.max_rel_error = std::max(report.max_rel_error, rel);
        }
    }
    report.pass = report.max_rel_error < tol;
    return report;
}

}  // namespace latentdir::diffmath
