#include <map>
#include <string>

#include <CLI11.hpp>

#include "hlsv/cli.hpp"

int main(int argc, char** argv)
{
    CLI::App app{"Calibrated Heston-type LSV particle simulator"};
    app.require_subcommand(1, 1);
    hlsv::CliOptions opt;
    const std::map<std::string, std::string> help{
        {"diagnose", "Feller ratio and critical time for the configured parameters"},
        {"dupire-build", "price the market grid and write the local-vol surface"},
        {"simulate", "run the particle system and write terminal particles"},
        {"price", "Monte Carlo calls at price.strikes against market prices"},
        {"strong-convergence", "time-step convergence study"},
        {"chaos", "propagation-of-chaos study over study.N_list"},
        {"cir-order", "strong order of the variance scheme"},
    };

    for (const auto& name : hlsv::subcommands()) {
        auto* sub = app.add_subcommand(name, help.at(name));
        sub->add_option("-c,--config", opt.config_path, "key = value config file (defaults if omitted)");
        sub->add_option("-s,--set", opt.overrides, "override one key, e.g. --set sim.N=2000");
        sub->add_option("-o,--out", opt.output_dir, "output directory (else output.dir, else $HLSV_OUT_DIR)");
        sub->add_option("-t,--threads", opt.threads, "cap on worker threads")->check(CLI::NonNegativeNumber);
        sub->callback([&opt, name] { opt.subcommand = name; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : hlsv::exit_config;
    }
    return hlsv::run_cli(opt);
}
