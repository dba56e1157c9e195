// Experiment runner: `spme_cli run <config.json>` and `spme_cli validate <config.json>`.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "spme/experiment.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Stochastic porous-media and sandpile experiment runner"};
    app.set_version_flag("--version", std::string(SPME_VERSION));
    app.require_subcommand(1);

    std::string out_dir;
    int threads = 0;
    app.add_option("--out", out_dir, "Output directory (overrides output.dir)");
    app.add_option("--threads", threads, "Worker threads for Monte Carlo (default: $SPME_THREADS or 1)")
        ->check(CLI::NonNegativeNumber);

    std::string run_path;
    auto* run = app.add_subcommand("run", "Run an experiment and write its artifacts");
    run->add_option("config", run_path, "Experiment config (JSON)")->required();
    run->add_option("--out", out_dir, "Output directory (overrides output.dir)");
    run->add_option("--threads", threads, "Worker threads for Monte Carlo")->check(CLI::NonNegativeNumber);

    std::string validate_path;
    auto* validate = app.add_subcommand("validate", "Check a config and dry-run its constants");
    validate->add_option("config", validate_path, "Experiment config (JSON)")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : spme::exit_config;
    }

    if (*validate) {
        try {
            const auto config = spme::load_config(validate_path);
            const auto diag = spme::validate(config);
            std::cout << diag.to_json() << "\n";
            return diag.ok() ? spme::exit_ok : spme::exit_config;
        } catch (const spme::ConfigError& e) {
            spme::Diagnostics diag;
            diag.items.push_back({"error", e.key(), e.what()});
            std::cout << diag.to_json() << "\n";
            return spme::exit_config;
        }
    }

    spme::RunOptions options;
    if (!out_dir.empty()) options.out_dir = out_dir;
    options.threads = threads;
    const auto outcome = spme::run_config_file(run_path, options);
    if (outcome.exit_code != spme::exit_ok) {
        std::cout << outcome.error_json << "\n";
    } else {
        std::cout << "wrote " << outcome.out_dir.string() << "\n";
    }
    return outcome.exit_code;
}
