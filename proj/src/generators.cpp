#include "latentdir/generators.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace latentdir::gen {

namespace {

std::uint64_t fnv1a(std::uint64_t h, const double* data, size_t count) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(data);
    for (size_t i = 0; i < count * sizeof(double); ++i) {
        h ^= bytes[i];
        h *= 1099511628211ULL;
    }
    return h;
}

MlpLayer::Activation parse_activation(const std::string& s) {
    if (s == "tanh") return MlpLayer::Activation::Tanh;
    if (s == "relu") return MlpLayer::Activation::Relu;
    if (s == "none") return MlpLayer::Activation::None;
    throw GeneratorError("unknown activation '" + s + "' (expected tanh|relu|none)");
}

}  // namespace

GeneratorSpec GeneratorSpec::make_synthetic(std::uint64_t seed, int d, int F, int grid,
                                            double gamma) {
    if (d < 2) throw GeneratorError("latent dimension must be >= 2");
    if (F < 2 || F > d)
        throw GeneratorError("feature dimension must satisfy 2 <= F <= d (got F=" +
                             std::to_string(F) + ", d=" + std::to_string(d) + ")");
    if (grid < 16) throw GeneratorError("grid must be >= 16 pixels");
    if (gamma < 1.0) throw GeneratorError("gamma must be >= 1");

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix A(d, F);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < F; ++j) A(i, j) = normal(rng);

    Eigen::HouseholderQR<Matrix> qr(A);
    Matrix Q = qr.householderQ() * Matrix::Identity(d, F);
    Matrix R = qr.matrixQR().topRows(F).triangularView<Eigen::Upper>();
    for (int j = 0; j < F; ++j)
        if (R(j, j) < 0.0) Q.col(j) = -Q.col(j);

    GeneratorSpec spec;
    spec.kind_ = Kind::SyntheticMixing;
    spec.d_ = d;
    spec.feature_dim_ = F;
    spec.grid_ = grid;
    spec.target_layer_ = "features";
    spec.seed_ = seed;
    spec.mixing_ = SyntheticMixingParams{Q.transpose(), Vector::Zero(F), gamma};
    return spec;
}

GeneratorSpec GeneratorSpec::load_mlp(const std::string& path, const std::string& target_layer) {
    std::ifstream is(path);
    if (!is) throw GeneratorError("cannot read generator file '" + path + "'");
    std::stringstream buf;
    buf << is.rdbuf();
    return from_mlp_json(buf.str(), target_layer);
}

GeneratorSpec GeneratorSpec::from_mlp_json(const std::string& json_text,
                                           const std::string& target_layer) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw GeneratorError(std::string("malformed generator file: ") + e.what());
    }
    if (!doc.contains("latent_dim") || !doc.contains("layers"))
        throw GeneratorError("generator file must contain latent_dim and layers");

    GeneratorSpec spec;
    spec.kind_ = Kind::MlpFile;
    spec.d_ = doc.at("latent_dim").get<int>();
    if (spec.d_ < 2) throw GeneratorError("latent_dim must be >= 2");

    int prev = spec.d_;
    std::vector<std::string> names;
    for (const auto& jl : doc.at("layers")) {
        MlpLayer layer;
        layer.name = jl.at("name").get<std::string>();
        if (std::find(names.begin(), names.end(), layer.name) != names.end())
            throw GeneratorError("duplicate layer name '" + layer.name + "'");
        names.push_back(layer.name);
        int rows = jl.at("rows").get<int>();
        int cols = jl.at("cols").get<int>();
        if (cols != prev)
            throw GeneratorError("layer '" + layer.name + "': expects " + std::to_string(cols) +
                                 " inputs but previous layer produces " + std::to_string(prev));
        auto weights = jl.at("weights").get<std::vector<double>>();
        if (static_cast<int>(weights.size()) != rows * cols)
            throw GeneratorError("layer '" + layer.name + "': weights length != rows*cols");
        layer.W = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                                 Eigen::RowMajor>>(weights.data(), rows, cols);
        auto bias = jl.at("bias").get<std::vector<double>>();
        if (static_cast<int>(bias.size()) != rows)
            throw GeneratorError("layer '" + layer.name + "': bias length != rows");
        layer.b = Eigen::Map<const Vector>(bias.data(), rows);
        layer.act = parse_activation(jl.at("activation").get<std::string>());
        for (double w : weights)
            if (!std::isfinite(w))
                throw GeneratorError("layer '" + layer.name + "': non-finite weight");
        spec.layers_.push_back(std::move(layer));
        prev = rows;
    }
    if (spec.layers_.empty()) throw GeneratorError("generator file contains no layers");

    auto it = std::find_if(spec.layers_.begin(), spec.layers_.end(),
                           [&](const MlpLayer& l) { return l.name == target_layer; });
    if (it == spec.layers_.end()) {
        std::string available;
        for (const auto& l : spec.layers_) {
            if (!available.empty()) available += ", ";
            available += l.name;
        }
        throw GeneratorError("unknown target layer '" + target_layer + "' (available: " +
                             available + ")");
    }
    spec.target_layer_ = target_layer;
    spec.feature_dim_ = static_cast<int>(it->W.rows());
    spec.grid_ = 64;
    return spec;
}

const SyntheticMixingParams& GeneratorSpec::mixing() const {
    if (!mixing_) throw GeneratorError("not a synthetic-mixing generator");
    return *mixing_;
}

diffmath::NodeId GeneratorSpec::features_node(diffmath::Graph& g, diffmath::NodeId z) const {
    const auto& zn = g.node(z);
    if (zn.rows != d_)
        throw GeneratorError("latent dimension mismatch: generator expects " +
                             std::to_string(d_) + ", got " + std::to_string(zn.rows));
    if (kind_ == Kind::SyntheticMixing) {
        const auto& mp = *mixing_;
        diffmath::NodeId pre = g.add(g.matmul(g.constant(mp.W), z), g.constant(mp.b));
        return g.tanh(g.scale(pre, mp.gamma));
    }
    diffmath::NodeId x = z;
    for (const MlpLayer& layer : layers_) {
        x = g.add(g.matmul(g.constant(layer.W), x), g.constant(layer.b));
        switch (layer.act) {
            case MlpLayer::Activation::Tanh: x = g.tanh(x); break;
            case MlpLayer::Activation::Relu: x = g.relu(x); break;
            case MlpLayer::Activation::None: break;
        }
        if (layer.name == target_layer_) return x;
    }
    throw GeneratorError("target layer '" + target_layer_ + "' not reached");
}

Vector GeneratorSpec::features(const Vector& z) const {
    if (kind_ == Kind::SyntheticMixing) {
        const auto& mp = *mixing_;
        if (z.size() != d_)
            throw GeneratorError("latent dimension mismatch: generator expects " +
                                 std::to_string(d_) + ", got " + std::to_string(z.size()));
        return ((mp.gamma * (mp.W * z + mp.b)).array().tanh()).matrix();
    }
    diffmath::Graph g;
    diffmath::NodeId z_in = g.input("z", d_);
    diffmath::NodeId h = features_node(g, z_in);
    return diffmath::evaluate(g, {{"z", z}}).value(h).col(0);
}

img::Image GeneratorSpec::render(const Vector& z) const {
    Vector h = features(z);
    auto factor = [&](int j) { return j < h.size() ? std::clamp(h(j), -1.0, 1.0) : 0.0; };
    const int G = grid_;
    const double cx = (factor(0) + 1.0) / 2.0 * (G - 1);
    const double cy = (factor(1) + 1.0) / 2.0 * (G - 1);
    const double sigma = G * (0.05 + 0.10 * (factor(2) + 1.0) / 2.0);
    const double amplitude = (factor(3) + 1.0) / 2.0;

    img::Image im;
    im.width = G;
    im.height = G;
    im.pixels.resize(static_cast<size_t>(G) * static_cast<size_t>(G));
    for (int q = 0; q < G; ++q)
        for (int p = 0; p < G; ++p) {
            double dx = p - cx;
            double dy = q - cy;
            double v = amplitude * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
            im.pixels[static_cast<size_t>(q) * G + p] =
                static_cast<std::uint8_t>(std::lround(255.0 * v));
        }
    return im;
}

std::vector<Vector> GeneratorSpec::ground_truth_directions() const {
    if (kind_ != Kind::SyntheticMixing)
        throw GeneratorError("ground-truth directions exist only for synthetic generators");
    std::vector<Vector> dirs;
    dirs.reserve(static_cast<size_t>(feature_dim_));
    for (int j = 0; j < feature_dim_; ++j) dirs.push_back(mixing_->W.row(j).transpose());
    return dirs;
}

std::uint64_t GeneratorSpec::param_digest() const {
    std::uint64_t h = 1469598103934665603ULL;
    if (mixing_) {
        h = fnv1a(h, mixing_->W.data(), static_cast<size_t>(mixing_->W.size()));
        h = fnv1a(h, mixing_->b.data(), static_cast<size_t>(mixing_->b.size()));
        h = fnv1a(h, &mixing_->gamma, 1);
    }
    for (const MlpLayer& l : layers_) {
        h = fnv1a(h, l.W.data(), static_cast<size_t>(l.W.size()));
        h = fnv1a(h, l.b.data(), static_cast<size_t>(l.b.size()));
    }
    return h;
}

GeneratorSpec GeneratorSpec::with_bias(const Vector& b) const {
    if (kind_ != Kind::SyntheticMixing)
        throw GeneratorError("with_bias applies to synthetic generators only");
    if (b.size() != feature_dim_) throw GeneratorError("bias length must equal F");
    GeneratorSpec copy = *this;
    copy.mixing_->b = b;
    return copy;
}

std::string GeneratorSpec::id() const {
    std::ostringstream os;
    if (kind_ == Kind::SyntheticMixing)
        os << "synthetic-mixing(seed=" << seed_ << ",d=" << d_ << ",F=" << feature_dim_ << ")";
    else
        os << "mlp-file(d=" << d_ << ",target=" << target_layer_ << ")";
    return os.str();
}

Vector sample_latent(std::mt19937_64& rng, int d, double truncation) {
    if (truncation <= 0.0) throw GeneratorError("truncation must be positive");
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector z(d);
    for (int i = 0; i < d; ++i) {
        double x = normal(rng);
        while (std::abs(x) > 2.0) x = normal(rng);
        z(i) = truncation * x;
    }
    return z;
}

}  // namespace latentdir::gen
