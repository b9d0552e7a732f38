// netpc_cli: run benchmark scenarios, parameter sweeps and decay measurements.

#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "netpc/bench.hpp"

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
};

netpc::ScenarioConfig load(const Common& c) {
    netpc::ScenarioConfig cfg = netpc::load_config(c.config);
    if (c.seed) cfg.seed = *c.seed;
    if (c.out_dir) cfg.output_dir = *c.out_dir;
    return cfg;
}

void report(const std::vector<std::filesystem::path>& files) {
    for (const auto& f : files) std::cout << "wrote " << f.string() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Distributed predictive control simulator for networked LTI systems"};
    app.require_subcommand(1);

    Common common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("config", common.config, "Scenario config file")->required()->check(CLI::ExistingFile);
        sub->add_option("--seed", common.seed, "Override the root seed");
        sub->add_option("--out-dir", common.out_dir, "Override the output directory");
    };

    auto* simulate = app.add_subcommand("simulate", "Run OPT and every configured controller");
    add_common(simulate);

    std::string vary, range;
    auto* sweep = app.add_subcommand("sweep", "Sweep k or kappa of the first non-OPT controller");
    add_common(sweep);
    sweep->add_option("--vary", vary, "Parameter to vary")->required()->check(CLI::IsMember({"k", "kappa"}));
    sweep->add_option("--range", range, "Inclusive range a..b or list a,b,c")->required();

    std::string mode;
    auto* decay = app.add_subcommand("decay", "Measure decay profiles");
    add_common(decay);
    decay->add_option("--mode", mode, "Measurement")->required()->check(CLI::IsMember({"kkt", "truncation", "trajectory"}));

    CLI11_PARSE(app, argc, argv);

    try {
        netpc::ScenarioConfig cfg = load(common);
        const std::filesystem::path out(cfg.output_dir);
        if (simulate->parsed()) {
            report(netpc::run_experiment(cfg, out, &std::cout).files);
        } else if (sweep->parsed()) {
            const auto values = netpc::detail::parse_int_list(range, "--range");
            const auto param = vary == "k" ? netpc::SweepParameter::K : netpc::SweepParameter::Kappa;
            report(netpc::run_sweep(cfg, param, values, out, &std::cout).files);
        } else if (decay->parsed()) {
            const auto res = netpc::run_decay(cfg, netpc::parse_decay_mode(mode), out);
            std::cout << netpc::decay_summary_json(res.profile).dump() << '\n';
            report(res.files);
        }
    } catch (const netpc::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
