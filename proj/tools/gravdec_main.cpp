// gravdec — experiment runner for the measurement-channel model of two
// gravitationally coupled mechanical oscillators.
//
// Exit codes: 0 success, 2 configuration error, 3 numerical abort,
// 4 embedded acceptance check failed (with --check).

#include <CLI11.hpp>
#include <cstdlib>
#include <iostream>

#include "gravdec/experiments.hpp"
#include "gravdec/version.hpp"

namespace {

constexpr int kExitConfigError = 2;
constexpr int kExitNumericsError = 3;
constexpr int kExitCheckFailure = 4;

std::string resolve_out_dir(const std::string& cli_out, const std::string& config_out) {
    if (!cli_out.empty()) return cli_out;
    if (const char* env = std::getenv("GRAVDEC_OUT"); env && *env) return env;
    return config_out;
}

void print_summary(const gravdec::ResultBundle& bundle) {
    std::cout << "experiment: " << bundle.experiment << '\n';
    for (const auto& s : bundle.summary) {
        std::cout << "  " << s.name << " = " << s.value;
        if (s.unit != "1") std::cout << ' ' << s.unit;
        std::cout << '\n';
    }
}

int print_checks(const std::vector<gravdec::CheckResult>& checks) {
    bool all = true;
    for (const auto& c : checks) {
        std::cout << (c.passed ? "[PASS] " : "[FAIL] ") << c.name << ": " << c.detail << '\n';
        all = all && c.passed;
    }
    return all ? 0 : kExitCheckFailure;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"gravitational classical-channel decoherence toolkit"};
    app.set_version_flag("--version", gravdec::kVersion);
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    bool check = false;
    std::uint64_t seed_override = 0;
    bool seed_given = false;

    auto* run_cmd = app.add_subcommand("run", "run one experiment from a config file");
    run_cmd->add_option("config", config_path, "JSON experiment config")->required();
    run_cmd->add_flag("--check", check, "run the embedded acceptance assertions");
    run_cmd->add_option("--out", out_dir, "output directory (overrides config and GRAVDEC_OUT)");
    run_cmd->add_option("--seed", seed_override, "override ensemble seed")
        ->each([&seed_given](const std::string&) { seed_given = true; });

    std::string param_path;
    std::string grid_spec;
    auto* sweep_cmd = app.add_subcommand("sweep", "run a 1-D parameter sweep");
    sweep_cmd->add_option("config", config_path, "JSON experiment config")->required();
    sweep_cmd->add_option("--param", param_path, "dotted path of the scalar to sweep")->required();
    sweep_cmd->add_option("--grid", grid_spec, "lin:a:b:n | log:a:b:n | list:v1,v2,...")
        ->required();
    sweep_cmd->add_option("--out", out_dir, "output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run_cmd->parsed()) {
            auto cfg = gravdec::load_config(config_path);
            if (seed_given) {
                cfg.seed = seed_override;
                cfg.echo["ensemble"]["seed"] = seed_override;
            }
            cfg.out_dir = resolve_out_dir(out_dir, cfg.out_dir);
            auto out = gravdec::run_experiment(cfg, check);
            gravdec::write_bundle(out.bundle, cfg.out_dir, cfg.formats);
            print_summary(out.bundle);
            std::cout << "wrote " << cfg.out_dir << '\n';
            if (check) return print_checks(out.checks);
            return 0;
        }

        // sweep
        std::ifstream in(config_path);
        if (!in) throw gravdec::config_error("cannot open config file: " + config_path);
        gravdec::Json base;
        try {
            in >> base;
        } catch (const std::exception& e) {
            throw gravdec::config_error(std::string("config parse error: ") + e.what());
        }
        const auto grid = gravdec::parse_grid(grid_spec);
        const std::string dir =
            resolve_out_dir(out_dir, base.contains("output")
                                         ? base["output"].value("directory", std::string("out"))
                                         : std::string("out"));
        const auto outputs = gravdec::run_sweep(base, param_path, grid, dir, true);
        std::cout << "swept " << param_path << " over " << grid.size() << " points into " << dir
                  << '\n';
        return 0;
    } catch (const gravdec::config_error& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfigError;
    } catch (const gravdec::numerics_error& e) {
        std::cerr << "numerical abort: " << e.what() << '\n';
        return kExitNumericsError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitNumericsError;
    }
}
