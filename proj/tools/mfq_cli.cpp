#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "mfq/harness.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Mean-field Q-learning experiments"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::int64_t seed_offset = 0;
    std::size_t workers = 1;
    std::string format = "csv";

    struct Command {
        const char* name;
        const char* help;
        mfq::CommandResult (*run)(const mfq::ExperimentConfig&, const mfq::RunOptions&);
    };
    const Command commands[] = {
        {"bellman", "Solve the Bellman equation and write V", mfq::cmd_bellman},
        {"train", "Train one network per (N, seed)", mfq::cmd_train},
        {"limit", "Integrate the width-limit ODE", mfq::cmd_limit},
        {"compare", "Compare trained trajectories with the coupled ODE", mfq::cmd_compare},
        {"amatrix", "Estimate the kernel A and check positive definiteness", mfq::cmd_amatrix},
        {"regress", "Regression limit ODE and companion SGD runs", mfq::cmd_regress},
    };
    for (const auto& cmd : commands) {
        auto* sub = app.add_subcommand(cmd.name, cmd.help);
        sub->add_option("--config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", out_dir, "Output directory (overrides output_dir)");
        sub->add_option("--seed-offset", seed_offset, "Added to every seed in the config");
        sub->add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber);
        sub->add_option("--format", format, "Table format")->check(CLI::IsMember({"csv", "json"}));
    }
    CLI11_PARSE(app, argc, argv);

    try {
        const mfq::ExperimentConfig cfg = mfq::load_config(config_path);
        mfq::RunOptions opt;
        if (!out_dir.empty()) opt.out = out_dir;
        opt.seed_offset = seed_offset;
        opt.workers = workers;
        opt.format = mfq::parse_output_format(format);
        opt.log = &std::cerr;
        for (const auto& cmd : commands) {
            if (app.got_subcommand(cmd.name)) {
                const auto result = cmd.run(cfg, opt);
                std::cout << result.report.dump(2) << '\n';
                return result.exit_code;
            }
        }
    } catch (const mfq::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
