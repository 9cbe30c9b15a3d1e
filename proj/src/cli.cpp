#include "latentdir/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "latentdir/eval.hpp"
#include "latentdir/image.hpp"

namespace latentdir::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double require_number(const json& obj, const std::string& scope, const std::string& field,
                      double fallback, bool required = false) {
    if (!obj.contains(field)) {
        if (required) throw ConfigError("missing field '" + scope + "." + field + "'");
        return fallback;
    }
    if (!obj.at(field).is_number())
        throw ConfigError("field '" + scope + "." + field + "' must be a number");
    return obj.at(field).get<double>();
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    os << text;
    if (!os) throw std::runtime_error("short write to '" + path.string() + "'");
}

json alignment_to_json(const eval::AlignmentReport& r) {
    return json{{"assignment", r.assignment},
                {"cos_abs", r.cos_abs},
                {"mean_cos_abs", r.mean_cos_abs},
                {"unmatched", r.unmatched},
                {"fingerprint_variance", r.fingerprint_variance}};
}

std::vector<gen::Vector> sample_probes(std::mt19937_64& rng, int count, int d,
                                       double truncation) {
    std::vector<gen::Vector> probes;
    probes.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) probes.push_back(gen::sample_latent(rng, d, truncation));
    return probes;
}

bool alphas_valid(const std::vector<double>& alphas) {
    if (alphas.empty()) return false;
    if (!std::is_sorted(alphas.begin(), alphas.end())) return false;
    if (std::find(alphas.begin(), alphas.end(), 0.0) == alphas.end()) return false;
    for (double a : alphas)
        if (std::find(alphas.begin(), alphas.end(), -a) == alphas.end()) return false;
    return true;
}

}  // namespace

gen::GeneratorSpec RunConfig::build_generator() const {
    if (synthetic)
        return gen::GeneratorSpec::make_synthetic(synthetic->seed, synthetic->d, synthetic->F,
                                                  synthetic->grid, synthetic->gamma);
    if (generator_file)
        return gen::GeneratorSpec::load_mlp(generator_file->path, generator_file->target_layer);
    throw ConfigError("missing 'generator' block");
}

RunConfig parse_run_config(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    RunConfig cfg;

    if (!doc.contains("generator") || !doc.at("generator").is_object())
        throw ConfigError("missing field 'generator'");
    const json& g = doc.at("generator");
    const bool has_synth = g.contains("synthetic");
    const bool has_file = g.contains("file");
    if (has_synth == has_file)
        throw ConfigError("field 'generator' must contain exactly one of 'synthetic' or 'file'");
    if (has_synth) {
        const json& s = g.at("synthetic");
        SyntheticBlock blk;
        blk.seed = static_cast<std::uint64_t>(require_number(s, "generator.synthetic", "seed", 7));
        blk.d = static_cast<int>(require_number(s, "generator.synthetic", "d", 8));
        blk.F = static_cast<int>(require_number(s, "generator.synthetic", "F", 4));
        blk.grid = static_cast<int>(require_number(s, "generator.synthetic", "grid", 64));
        blk.gamma = require_number(s, "generator.synthetic", "gamma", 2.0);
        cfg.synthetic = blk;
        cfg.train.latent_dim = blk.d;
    } else {
        const json& f = g.at("file");
        FileBlock blk;
        if (!f.contains("path")) throw ConfigError("missing field 'generator.file.path'");
        blk.path = f.at("path").get<std::string>();
        if (!f.contains("target_layer"))
            throw ConfigError("missing field 'generator.file.target_layer'");
        blk.target_layer = f.at("target_layer").get<std::string>();
        cfg.generator_file = blk;
    }

    const json& t = doc.contains("train") ? doc.at("train") : json::object();
    train::TrainConfig& tc = cfg.train;
    tc.batch_size = static_cast<int>(require_number(t, "train", "batch_size", tc.batch_size));
    tc.num_directions =
        static_cast<int>(require_number(t, "train", "num_directions", tc.num_directions));
    if (t.contains("kind")) tc.kind = dir::parse_kind(t.at("kind").get<std::string>());
    tc.hidden_layers =
        static_cast<int>(require_number(t, "train", "hidden_layers", tc.hidden_layers));
    tc.tau = require_number(t, "train", "tau", tc.tau);
    tc.alpha = require_number(t, "train", "alpha", tc.alpha);
    tc.truncation = require_number(t, "train", "truncation", tc.truncation);
    tc.learning_rate = require_number(t, "train", "learning_rate", tc.learning_rate);
    tc.beta1 = require_number(t, "train", "beta1", tc.beta1);
    tc.beta2 = require_number(t, "train", "beta2", tc.beta2);
    tc.epsilon = require_number(t, "train", "epsilon", tc.epsilon);
    tc.steps = static_cast<int>(require_number(t, "train", "steps", tc.steps));
    tc.seed = static_cast<std::uint64_t>(require_number(t, "train", "seed", 0));
    if (t.contains("target_layer")) tc.target_layer = t.at("target_layer").get<std::string>();
    if (cfg.generator_file) tc.target_layer = cfg.generator_file->target_layer;

    if (doc.contains("output_dir")) cfg.output_dir = doc.at("output_dir").get<std::string>();

    try {
        tc.validate();
    } catch (const train::TrainError& e) {
        throw ConfigError(std::string("invalid config: ") + e.what());
    }
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read config file '" + path + "'");
    std::stringstream buf;
    buf << is.rdbuf();
    return parse_run_config(buf.str());
}

std::string serialize_run_config(const RunConfig& cfg) {
    json doc;
    json t;
    t["batch_size"] = cfg.train.batch_size;
    t["num_directions"] = cfg.train.num_directions;
    t["kind"] = dir::kind_name(cfg.train.kind);
    t["hidden_layers"] = cfg.train.hidden_layers;
    t["tau"] = cfg.train.tau;
    t["alpha"] = cfg.train.alpha;
    t["truncation"] = cfg.train.truncation;
    t["learning_rate"] = cfg.train.learning_rate;
    t["beta1"] = cfg.train.beta1;
    t["beta2"] = cfg.train.beta2;
    t["epsilon"] = cfg.train.epsilon;
    t["steps"] = cfg.train.steps;
    t["seed"] = cfg.train.seed;
    t["target_layer"] = cfg.train.target_layer;
    doc["train"] = std::move(t);
    if (cfg.synthetic) {
        doc["generator"]["synthetic"] = {{"seed", cfg.synthetic->seed},
                                         {"d", cfg.synthetic->d},
                                         {"F", cfg.synthetic->F},
                                         {"grid", cfg.synthetic->grid},
                                         {"gamma", cfg.synthetic->gamma}};
    } else if (cfg.generator_file) {
        doc["generator"]["file"] = {{"path", cfg.generator_file->path},
                                    {"target_layer", cfg.generator_file->target_layer}};
    }
    doc["output_dir"] = cfg.output_dir;
    return doc.dump(2) + "\n";
}

void apply_seed_override(RunConfig& cfg) {
    if (const char* env = std::getenv("LATENTDIR_SEED")) {
        try {
            cfg.train.seed = std::stoull(env);
        } catch (const std::exception&) {
            throw ConfigError("LATENTDIR_SEED is not a valid unsigned integer: '" +
                              std::string(env) + "'");
        }
    }
}

int cmd_train(const std::string& config_path) {
    RunConfig cfg;
    gen::GeneratorSpec generator = gen::GeneratorSpec::make_synthetic(0, 2, 2, 16, 1.0);
    try {
        cfg = load_run_config(config_path);
        apply_seed_override(cfg);
        generator = cfg.build_generator();
        cfg.train.latent_dim = generator.latent_dim();
        if (cfg.generator_file) cfg.train.target_layer = generator.target_layer();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }

    train::TrainResult result;
    try {
        result = train::train(cfg.train, generator);
    } catch (const train::TrainAbort& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitTrainAbort;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitTrainAbort;
    }

    try {
        fs::create_directories(cfg.output_dir);
        dir::save_direction_set(result.set, (fs::path(cfg.output_dir) / "directions.json").string());
        // Wall-times stay in memory only so that identical runs produce
        // byte-identical trace files.
        std::ostringstream trace;
        for (size_t i = 0; i < result.trace.loss.size(); ++i)
            trace << json{{"step", i}, {"loss", result.trace.loss[i]}}.dump() << "\n";
        write_text(fs::path(cfg.output_dir) / "trace.ndjson", trace.str());
        write_text(fs::path(cfg.output_dir) / "config.resolved.json", serialize_run_config(cfg));
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    }
    std::cout << "trained " << result.set.K() << " " << dir::kind_name(result.set.kind)
              << " directions for " << cfg.train.steps << " steps; final loss "
              << result.trace.loss.back() << "\n";
    return kExitOk;
}

int cmd_traverse(const std::string& directions_path, const std::string& config_path, int k,
                 const std::vector<double>& alphas, int n_latents) {
    dir::DirectionSet set;
    try {
        set = dir::load_direction_set(directions_path);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    }
    RunConfig cfg;
    gen::GeneratorSpec generator = gen::GeneratorSpec::make_synthetic(0, 2, 2, 16, 1.0);
    try {
        cfg = load_run_config(config_path);
        apply_seed_override(cfg);
        generator = cfg.build_generator();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    if (!alphas_valid(alphas)) {
        std::cerr << "error: alpha list must be ascending, symmetric, and contain 0\n";
        return kExitUsage;
    }
    if (k < 0 || k >= set.K()) {
        std::cerr << "error: direction index " << k << " out of range (K=" << set.K() << ")\n";
        return kExitUsage;
    }
    if (n_latents < 1) {
        std::cerr << "error: need at least one latent row\n";
        return kExitUsage;
    }
    if (set.d != generator.latent_dim()) {
        std::cerr << "error: directions have d=" << set.d << " but generator has d="
                  << generator.latent_dim() << "\n";
        return kExitUsage;
    }

    try {
        std::mt19937_64 rng(cfg.train.seed);
        std::vector<std::vector<img::Image>> grid;
        const dir::DirectionModel& model = set.models[static_cast<size_t>(k)];
        for (int r = 0; r < n_latents; ++r) {
            gen::Vector z = gen::sample_latent(rng, set.d, cfg.train.truncation);
            std::vector<img::Image> row;
            for (double a : alphas)
                row.push_back(generator.render(a == 0.0 ? z : dir::edit(model, z, a)));
            grid.push_back(std::move(row));
        }
        fs::create_directories(cfg.output_dir);
        img::save_pgm(img::montage(grid),
                      (fs::path(cfg.output_dir) / ("traversal_k" + std::to_string(k) + ".pgm"))
                          .string());
        for (size_t r = 0; r < grid.size(); ++r)
            for (size_t c = 0; c < grid[r].size(); ++c)
                img::save_pgm(grid[r][c],
                              (fs::path(cfg.output_dir) /
                               ("cell_" + std::to_string(r) + "_" + std::to_string(c) + ".pgm"))
                                  .string());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    }
    return kExitOk;
}

int cmd_eval(const std::string& directions_path, const std::string& config_path) {
    dir::DirectionSet set;
    try {
        set = dir::load_direction_set(directions_path);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    }
    RunConfig cfg;
    gen::GeneratorSpec generator = gen::GeneratorSpec::make_synthetic(0, 2, 2, 16, 1.0);
    try {
        cfg = load_run_config(config_path);
        apply_seed_override(cfg);
        generator = cfg.build_generator();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    if (generator.kind() != gen::GeneratorSpec::Kind::SyntheticMixing) {
        std::cerr << "error: eval needs a synthetic generator (its ground truth is the oracle); "
                     "mlp-file generators have none\n";
        return kExitUsage;
    }
    if (set.K() != cfg.train.num_directions) {
        std::cerr << "error: directions file has K=" << set.K() << " but config requests K="
                  << cfg.train.num_directions << "\n";
        return kExitUsage;
    }
    if (set.d != generator.latent_dim()) {
        std::cerr << "error: directions have d=" << set.d << " but generator has d="
                  << generator.latent_dim() << "\n";
        return kExitUsage;
    }

    try {
        std::mt19937_64 rng(cfg.train.seed + 1);
        auto probes = sample_probes(rng, 128, set.d, cfg.train.truncation);
        auto heldout = sample_probes(rng, cfg.train.batch_size, set.d, cfg.train.truncation);
        auto rescore_probes = sample_probes(rng, 100, set.d, cfg.train.truncation);

        auto truth = generator.ground_truth_directions();
        eval::AlignmentReport align =
            eval::alignment_score(set, truth, probes, cfg.train.alpha);
        double diversity = eval::diversity_score(set, probes, cfg.train.alpha);
        double margin = eval::identifiability_margin(generator, set, heldout, cfg.train.alpha,
                                                     cfg.train.tau);

        const std::vector<double> grid = {-3.0, -1.5, 0.0, 1.5, 3.0};
        json rescores = json::array();
        for (int k = 0; k < set.K(); ++k) {
            if (align.assignment[static_cast<size_t>(k)] < 0) continue;
            eval::RescoreReport r =
                eval::rescoring(generator, set, align, k, grid, rescore_probes);
            std::vector<double> mean_scores;
            for (int a = 0; a < r.scores.cols(); ++a)
                mean_scores.push_back(r.scores.col(a).mean());
            rescores.push_back({{"direction", r.direction},
                                {"factor", r.factor},
                                {"alphas", r.alphas},
                                {"mean_scores", mean_scores},
                                {"monotone_fraction", r.monotone_fraction}});
        }

        json report;
        report["alignment"] = alignment_to_json(align);
        report["diversity"] = diversity;
        report["identifiability_margin"] = margin;
        report["rescoring"] = rescores;
        fs::create_directories(cfg.output_dir);
        write_text(fs::path(cfg.output_dir) / "eval_report.json", report.dump(2) + "\n");

        std::cout << "evaluation of " << directions_path << " against "
                  << generator.id() << "\n";
        std::cout << "  mean |cos| (assigned): " << align.mean_cos_abs << "\n";
        std::cout << "  diversity (mean pairwise |cos|): " << diversity << "\n";
        std::cout << "  identifiability margin: " << margin << "\n";
        for (const auto& r : rescores)
            std::cout << "  direction " << r.at("direction").get<int>() << " -> factor "
                      << r.at("factor").get<int>() << ", monotone fraction "
                      << r.at("monotone_fraction").get<double>() << "\n";
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    }
    return kExitOk;
}

int cmd_transfer(const std::string& directions_path, const std::string& config_b_path) {
    dir::DirectionSet set;
    try {
        set = dir::load_direction_set(directions_path);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    }
    RunConfig cfg;
    gen::GeneratorSpec gen_b = gen::GeneratorSpec::make_synthetic(0, 2, 2, 16, 1.0);
    try {
        cfg = load_run_config(config_b_path);
        apply_seed_override(cfg);
        gen_b = cfg.build_generator();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    if (gen_b.kind() != gen::GeneratorSpec::Kind::SyntheticMixing) {
        std::cerr << "error: transfer evaluation needs a synthetic generator B\n";
        return kExitUsage;
    }
    if (set.d != gen_b.latent_dim()) {
        std::cerr << "error: directions have d=" << set.d << " but generator B has d="
                  << gen_b.latent_dim() << "\n";
        return kExitUsage;
    }
    try {
        std::mt19937_64 rng(cfg.train.seed + 1);
        auto probes = sample_probes(rng, 128, set.d, cfg.train.truncation);
        eval::AlignmentReport report = eval::transfer_eval(set, gen_b, probes, cfg.train.alpha);
        fs::create_directories(cfg.output_dir);
        write_text(fs::path(cfg.output_dir) / "transfer_report.json",
                   alignment_to_json(report).dump(2) + "\n");
        std::cout << "transfer alignment mean |cos| = " << report.mean_cos_abs << "\n";
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    }
    return kExitOk;
}

int cmd_export(const std::string& directions_path, const std::string& out_path) {
    try {
        dir::DirectionSet set = dir::load_direction_set(directions_path);
        dir::save_direction_set(set, out_path);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    }
    return kExitOk;
}

}  // namespace latentdir::cli
