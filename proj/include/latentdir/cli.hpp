#pragma once

#include <optional>
#include <string>
#include <vector>

#include "latentdir/generators.hpp"
#include "latentdir/trainer.hpp"

namespace latentdir::cli {

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitTrainAbort = 2;
inline constexpr int kExitIo = 3;

struct SyntheticBlock {
    std::uint64_t seed = 7;
    int d = 8;
    int F = 4;
    int grid = 64;
    double gamma = 2.0;
};

struct FileBlock {
    std::string path;
    std::string target_layer;
};

/// File form of TrainConfig plus generator construction and output paths.
struct RunConfig {
    train::TrainConfig train;
    std::optional<SyntheticBlock> synthetic;
    std::optional<FileBlock> generator_file;
    std::string output_dir = "out";

    gen::GeneratorSpec build_generator() const;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);
std::string serialize_run_config(const RunConfig& cfg);

/// LATENTDIR_SEED, when set, overrides the config seed.
void apply_seed_override(RunConfig& cfg);

int cmd_train(const std::string& config_path);
int cmd_traverse(const std::string& directions_path, const std::string& config_path, int k,
                 const std::vector<double>& alphas, int n_latents);
int cmd_eval(const std::string& directions_path, const std::string& config_path);
int cmd_transfer(const std::string& directions_path, const std::string& config_b_path);
int cmd_export(const std::string& directions_path, const std::string& out_path);

}  // namespace latentdir::cli
