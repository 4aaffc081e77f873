// Command-line front end for the constellation routing workbench.
//
//   istn <command> [--config file.json] [--seed N] [--out dir]
//
// Commands: train, evaluate, compare, ablate, sweep, linkcalc, topology run
// a fresh experiment into a timestamped run directory; plotdata post-processes
// an existing training run directory into tidy per-metric CSV series.

#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "istn/config.hpp"
#include "istn/harness.hpp"

int main(int argc, char** argv) {
    CLI::App app{"packet-level satellite-terrestrial routing workbench"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_root = "runs";
    uint64_t seed = 0;
    int echo_every = 10;

    const std::vector<std::string> commands = {"train",  "evaluate", "compare", "ablate",
                                               "sweep",  "linkcalc", "topology"};
    for (const auto& name : commands) {
        auto* sub = app.add_subcommand(name);
        sub->add_option("--config", config_path, "JSON config file (merged over its preset)");
        sub->add_option("--seed", seed, "master seed (nonzero overrides the config)");
        sub->add_option("--out", out_root, "directory that receives the run folder");
        sub->add_option("--echo-every", echo_every, "progress print period in iterations");
    }
    std::string plot_run;
    auto* plot = app.add_subcommand("plotdata", "derive plot series from a training run");
    plot->add_option("--run", plot_run, "existing training run directory")->required();

    CLI11_PARSE(app, argc, argv);
    const std::string command = app.get_subcommands().front()->get_name();

    try {
        if (command == "plotdata") {
            istn::harness::emit_plotdata(plot_run);
            std::printf("plot series written to %s/plots\n", plot_run.c_str());
            return 0;
        }

        auto cfg = istn::config::load_config(config_path, seed);
        const auto echo = [&](const istn::cmadr::IterationStats& st) {
            if (echo_every <= 0 || st.iteration % echo_every != 0) return;
            std::printf(
                "iter %4d  reward %.3e  delay %.4fs  loss %.4f  maxE(st) %.1fJ  maxE(sat) "
                "%.1fJ  lambda_c %.3f\n",
                st.iteration, st.episode_reward, st.mean_delay_s, st.loss_rate,
                st.max_station_energy_j, st.max_sat_energy_j, st.lambda_central);
            std::fflush(stdout);
        };
        auto result = istn::harness::run_command(command, cfg, out_root, echo);
        std::printf("run directory: %s\n", result.dir.string().c_str());
        return 0;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
