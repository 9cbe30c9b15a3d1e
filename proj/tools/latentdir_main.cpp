#include <string>
#include <vector>

#include <CLI11.hpp>

#include "latentdir/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"latentdir - contrastive discovery of interpretable latent directions"};
    app.require_subcommand(1);

    std::string config_path;
    std::string directions_path;
    std::string out_path;
    int k = 0;
    int n_latents = 4;
    std::vector<double> alphas = {-3.0, -1.5, 0.0, 1.5, 3.0};

    auto* train = app.add_subcommand("train", "train direction models from a config file");
    train->add_option("config", config_path, "run config (JSON)")->required();

    auto* traverse =
        app.add_subcommand("traverse", "render a traversal grid for one direction");
    traverse->add_option("directions", directions_path, "trained directions file")->required();
    traverse->add_option("config", config_path, "run config (JSON)")->required();
    traverse->add_option("--k", k, "direction index");
    traverse->add_option("--alphas", alphas, "symmetric alpha grid including 0");
    traverse->add_option("--n", n_latents, "number of latent rows");

    auto* eval = app.add_subcommand("eval", "evaluate directions against ground truth");
    eval->add_option("directions", directions_path, "trained directions file")->required();
    eval->add_option("config", config_path, "run config (JSON)")->required();

    auto* transfer =
        app.add_subcommand("transfer", "evaluate directions against another generator");
    transfer->add_option("directions", directions_path, "trained directions file")->required();
    transfer->add_option("config", config_path, "generator-B run config (JSON)")->required();

    auto* exp = app.add_subcommand("export", "re-emit a directions file (validating round trip)");
    exp->add_option("directions", directions_path, "directions file")->required();
    exp->add_option("out", out_path, "output path")->required();

    auto* imp = app.add_subcommand("import", "load and re-save a directions file");
    imp->add_option("directions", directions_path, "directions file")->required();
    imp->add_option("out", out_path, "output path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : latentdir::cli::kExitUsage;
    }

    if (train->parsed()) return latentdir::cli::cmd_train(config_path);
    if (traverse->parsed())
        return latentdir::cli::cmd_traverse(directions_path, config_path, k, alphas, n_latents);
    if (eval->parsed()) return latentdir::cli::cmd_eval(directions_path, config_path);
    if (transfer->parsed()) return latentdir::cli::cmd_transfer(directions_path, config_path);
    if (exp->parsed() || imp->parsed())
        return latentdir::cli::cmd_export(directions_path, out_path);
    return latentdir::cli::kExitUsage;
}
