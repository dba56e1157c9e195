#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "spme/noise.hpp"
#include "spme/solver.hpp"

namespace spme {

enum class ExperimentKind { heat_check, fast_diffusion, soc_spde, sandpile, admissibility, yosida_continuation };

std::string to_string(ExperimentKind kind);

/// Invalid or incomplete configuration; key() names the offending entry.
class ConfigError : public std::invalid_argument {
public:
    ConfigError(std::string key, const std::string& message)
        : std::invalid_argument(key + ": " + message), key_(std::move(key)) {}
    const std::string& key() const { return key_; }

private:
    std::string key_;
};

struct PsiSpec {
    std::string kind = "linear";
    double rho = 1.0;
    double m = 0.5;
    double slope = 0.0;
};

struct InitialSpec {
    std::string kind = "sine";  // sine | zero
    double amplitude = 1.0;
    int mode_k = 1;
    int mode_l = 1;
};

struct ExtinctionSpec {
    double eps_rel = 1e-8;
    int checkpoints = 20;
    std::vector<double> sensitivity;  // extra eps_rel values
    int cm_random_fields = 10000;
    std::uint64_t cm_seed = 1;
};

struct SandpileSpec {
    int side = 64;
    int critical = 4;
    std::int64_t n_drives = 100000;
    std::optional<std::uint64_t> seed;
};

struct ExperimentConfig {
    ExperimentKind kind = ExperimentKind::admissibility;
    int dimension = 1;
    int n = 32;
    PsiSpec psi;
    std::vector<std::vector<Polynomial>> noise;  // noise[i][k]
    double nu = 1.0;
    SolverConfig solver;
    InitialSpec initial;
    int n_paths = 1;
    std::optional<std::uint64_t> seed;
    ExtinctionSpec extinction;
    std::vector<double> lambdas;
    SandpileSpec sandpile;
    std::string output_dir = "out";
    bool per_path = false;
    int threads = 0;
    std::string canonical;  // normalized JSON used for the config hash
};

/// Parses and structurally checks a JSON config; throws ConfigError.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::filesystem::path& path);

struct Diagnostic {
    std::string level;  // error | warning | info
    std::string key;
    std::string message;
};

struct Diagnostics {
    std::vector<Diagnostic> items;
    bool ok() const;
    std::string to_json() const;
};

/// Semantic checks (m range, dimension condition, nu vs noise, ...) plus a
/// dry run of the derived constants. Never throws for a parsed config.
Diagnostics validate(const ExperimentConfig& config);

struct RunOptions {
    std::optional<std::filesystem::path> out_dir;  // overrides output.dir
    int threads = 0;                               // overrides config threads when > 0
};

enum ExitCode : int { exit_ok = 0, exit_config = 2, exit_admissibility = 3, exit_numerical = 4 };

struct RunOutcome {
    int exit_code = exit_ok;
    std::string error_json;  // empty on success
    std::filesystem::path out_dir;
};

/// Runs a parsed config and writes manifest, CSVs and reports into the output directory.
RunOutcome run_experiment(const ExperimentConfig& config, const RunOptions& options = {});
/// Loads, validates and runs; config errors become exit code 2.
RunOutcome run_config_file(const std::filesystem::path& path, const RunOptions& options = {});

/// Polynomial noise fields of a config on its grid.
VectorFieldSet build_noise(const ExperimentConfig& config, const GridSpec& spec);
MonotoneGraph build_graph(const PsiSpec& psi);
GridField build_initial(const InitialSpec& initial, const GridSpec& spec);

}  // namespace spme
