#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace latentdir::diffmath {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

using NodeId = std::int32_t;

class DiffMathError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Thrown when an l2_normalize node with a minimum-norm guard sees an input
/// below the guard. The label identifies the offending construct (e.g. which
/// direction model produced a numerically zero direction).
class DegenerateError : public DiffMathError {
public:
    explicit DegenerateError(const std::string& msg) : DiffMathError(msg) {}
};

enum class Op {
    Input,
    Constant,
    Add,        // b may be a column vector broadcast across the columns of a
    Sub,
    Scale,      // multiply by a compile-time scalar
    MatMul,
    Tanh,
    Relu,
    BatchNorm,  // per-row standardize across columns, learned gain/shift
    L2Norm,
    L2Normalize,
    Dot,
    CosSim,
    Exp,
    Log,
    Sum,
    Mean,
    ConcatCols,
    Col,
    TanhBadAdjoint,  // test-only negative control
};

struct Node {
    Op op;
    std::vector<NodeId> args;
    int rows = 0;
    int cols = 0;
    Matrix value;            // Constant payload
    double scalar = 1.0;     // Scale factor
    std::string name;        // Input name, or degeneracy label for L2Normalize
    double min_norm = 0.0;   // L2Normalize degeneracy threshold (0 = no check)
    int col_index = 0;       // Col
};

using Bindings = std::map<std::string, Matrix>;

/// An immutable expression graph over double matrices. Nodes are appended in
/// construction order, which is therefore a valid topological order; forward
/// evaluation is a single in-order sweep and gradient accumulation a single
/// reverse sweep. Instances are safe to share across threads once built;
/// evaluate/gradient use per-call buffers.
class Graph {
public:
    // Reuses the existing node when an input with this name already exists
    // (shapes must agree).
    NodeId input(const std::string& name, int rows, int cols = 1);
    NodeId constant(const Matrix& v);
    NodeId constant_scalar(double v);

    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId scale(NodeId a, double c);
    NodeId matmul(NodeId a, NodeId b);
    NodeId tanh(NodeId a);
    NodeId relu(NodeId a);
    // Batch statistics across columns (training mode).
    NodeId batch_norm(NodeId x, NodeId gain, NodeId shift);
    // Supplied statistics, e.g. running averages (inference mode).
    NodeId batch_norm(NodeId x, NodeId gain, NodeId shift, NodeId mean, NodeId var);
    NodeId l2_norm(NodeId a);
    NodeId l2_normalize(NodeId a, double min_norm = 0.0, const std::string& label = {});
    NodeId dot(NodeId a, NodeId b);
    NodeId cosine_similarity(NodeId a, NodeId b);
    NodeId exp(NodeId a);
    NodeId log(NodeId a);
    NodeId sum(NodeId a);
    NodeId mean(NodeId a);
    NodeId concat_cols(std::span<const NodeId> parts);
    NodeId col(NodeId a, int j);

    // Left-to-right chained addition; fixed order keeps reductions bit-stable.
    NodeId add_many(std::span<const NodeId> terms);

    const Node& node(NodeId id) const { return nodes_.at(static_cast<size_t>(id)); }
    int size() const { return static_cast<int>(nodes_.size()); }
    bool has_input(const std::string& name) const { return inputs_.count(name) > 0; }

    static constexpr double kBatchNormEps = 1e-5;
    static constexpr double kNormGuard = 1e-12;

private:
    friend class Evaluation;
    friend struct GradientResult;

    NodeId push(Node n);
    void check_same_shape(NodeId a, NodeId b, const char* what) const;

    std::vector<Node> nodes_;
    std::map<std::string, NodeId> inputs_;
};

class Evaluation;
struct GradientResult;
Evaluation evaluate(const Graph& g, const Bindings& bindings);
GradientResult gradient(const Graph& g, NodeId root, const Bindings& bindings,
                        const std::vector<std::string>& wrt);

/// Forward values for every node of one evaluate() call.
class Evaluation {
public:
    const Matrix& value(NodeId id) const { return values_.at(static_cast<size_t>(id)); }
    double scalar(NodeId id) const;

private:
    friend Evaluation evaluate(const Graph&, const Bindings&);
    friend GradientResult gradient(const Graph&, NodeId, const Bindings&,
                                   const std::vector<std::string>&);
    std::vector<Matrix> values_;
};

Evaluation evaluate(const Graph& g, const Bindings& bindings);

struct GradientResult {
    Evaluation eval;
    std::map<std::string, Matrix> grads;
};

/// Reverse-mode gradient of a scalar-valued root with respect to the named
/// inputs. Every reachable node is visited exactly once.
GradientResult gradient(const Graph& g, NodeId root, const Bindings& bindings,
                        const std::vector<std::string>& wrt);

struct GradientReport {
    std::map<std::string, Matrix> analytic;
    std::map<std::string, Matrix> numeric;
    double max_rel_error = 0.0;
    bool pass = false;
};

/// Central-difference check: numeric gradient (f(x+eps)-f(x-eps))/(2 eps) per
/// coordinate, relative error |a-n| / max(|a|,|n|,1e-8).
GradientReport check_gradient(const Graph& g, NodeId root, const Bindings& bindings,
                              const std::vector<std::string>& wrt, double eps, double tol);

namespace testing {
// A tanh whose adjoint is deliberately wrong; negative control for the
// gradient checker.
NodeId wrong_adjoint_tanh(Graph& g, NodeId a);
}  // namespace testing

}  // namespace latentdir::diffmath
