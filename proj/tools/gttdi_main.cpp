#include "gttdi/cli_io.hpp"

#include "CLI11.hpp"

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

namespace {

struct CommandSpec {
    const char* name;
    const char* help;
    bool corruption_flags; // accepts --pattern / --rate overrides
};

constexpr CommandSpec kCommands[] = {
    {"generate", "synthesize a road network and its ground-truth traffic", false},
    {"corrupt", "write observation masks for the configured corruption grid", true},
    {"build-graph", "construct geography and traffic-pattern edges", false},
    {"embed", "train token embeddings for the sensor-day descriptions", false},
    {"train", "fit the imputation model and save a checkpoint", false},
    {"impute", "complete a corrupted series with a trained checkpoint", true},
    {"evaluate", "score the model and baselines on the test split", true},
    {"ablate", "sweep one configuration axis and report per-cell metrics", false},
    {"check-grads", "audit the training gradients by finite differences", false},
};

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"graph transformer for traffic data imputation"};
    app.require_subcommand(0, 1);

    bool print_defaults = false;
    app.add_flag("--print-defaults", print_defaults,
                 "write the default configuration to stdout and exit");

    std::string config_path, out_dir, pattern, mask_path;
    std::int64_t seed = -1;
    double rate = -1.0;
    bool quiet = false;
    for (const CommandSpec& spec : kCommands) {
        CLI::App* sub = app.add_subcommand(spec.name, spec.help);
        sub->add_option("--config", config_path, "configuration file (defaults apply without one)")
            ->check(CLI::ExistingFile);
        sub->add_option("--seed", seed, "override the global seed")->check(CLI::NonNegativeNumber);
        sub->add_option("--out", out_dir, "override the output directory");
        sub->add_flag("--quiet", quiet, "suppress progress output");
        if (spec.corruption_flags) {
            sub->add_option("--pattern", pattern, "restrict the corruption grid to one pattern")
                ->check(CLI::IsMember({"rm", "nm"}));
            sub->add_option("--rate", rate, "restrict the corruption grid to one missing rate")
                ->check(CLI::Range(0.0, 1.0));
        }
    }

    CLI11_PARSE(app, argc, argv);

    if (print_defaults) {
        std::cout << gttdi::dump_experiment_config(gttdi::experiment_defaults());
        return 0;
    }
    if (app.get_subcommands().empty()) {
        std::cerr << "error: no command given (run with --help)\n";
        return 2;
    }

    const std::string command = app.get_subcommands().front()->get_name();
    try {
        gttdi::ExperimentConfig cfg = config_path.empty() ? gttdi::experiment_defaults()
                                                          : gttdi::load_experiment_config(config_path);
        if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
        if (!out_dir.empty()) cfg.out_dir = out_dir;
        if (!pattern.empty()) cfg.corruption_patterns = {gttdi::pattern_from_name(pattern)};
        if (rate >= 0.0) cfg.corruption_rates = {rate};
        std::ostream* log = quiet ? nullptr : &std::cout;

        if (command == "generate") gttdi::run_generate(cfg, log);
        else if (command == "corrupt") gttdi::run_corrupt(cfg, log);
        else if (command == "build-graph") gttdi::run_build_graph(cfg, log);
        else if (command == "embed") gttdi::run_embed(cfg, log);
        else if (command == "train") gttdi::run_train(cfg, log);
        else if (command == "impute") gttdi::run_impute(cfg, log);
        else if (command == "evaluate") gttdi::run_evaluate(cfg, log);
        else if (command == "ablate") gttdi::run_ablate(cfg, log);
        else if (command == "check-grads") {
            gttdi::GradCheckSummary s = gttdi::run_check_grads(cfg, log);
            if (s.max_rel > cfg.gradcheck_tolerance) {
                std::cerr << "error: gradient check failed: max relative error "
                          << s.max_rel << " at " << s.worst << " exceeds tolerance "
                          << cfg.gradcheck_tolerance << "\n";
                return 1;
            }
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
