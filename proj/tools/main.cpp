#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include "commands.hpp"

using namespace couplemerton;

namespace {

struct Globals {
    std::string config_path;
    std::string out_path;
    std::optional<std::uint64_t> seed;
};

RunConfig load_config(const Globals& g) {
    return g.config_path.empty() ? RunConfig::parse_string(kBaselineConfig)
                                 : RunConfig::from_file(g.config_path);
}

// Writes to --out when given, stdout otherwise. The file is only created once
// the command has produced its full output.
int emit(const Globals& g, const std::string& text) {
    if (g.out_path.empty()) {
        std::cout << text;
        return 0;
    }
    std::ofstream f(g.out_path, std::ios::binary);
    if (!f) {
        std::cerr << "error: cannot write " << g.out_path << '\n';
        return cli::kExitConfig;
    }
    f << text;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Optimal wealth split, spending and portfolios for agents sharing one portfolio"};
    app.require_subcommand(1);
    app.fallthrough();

    Globals g;
    std::optional<double> x_override;
    std::optional<std::size_t> paths_override;
    app.add_option("--config", g.config_path, "config file (key = value); built-in baseline if omitted");
    app.add_option("--out", g.out_path, "write CSV output here instead of stdout");
    app.add_option("--seed", g.seed, "random seed override");

    auto* allocate = app.add_subcommand("allocate", "initial wealth split at x (or at fixed_y)");
    allocate->add_option("--x", x_override, "total initial wealth (overrides config)");

    cli::SweepOptions sweep_opts;
    auto* sweep = app.add_subcommand("sweep", "allocation fractions over a parameter grid");
    sweep->add_option("--var", sweep_opts.var, "x, theta0, gammaN or rhoN")->required();
    sweep->add_option("--from", sweep_opts.from)->required();
    sweep->add_option("--to", sweep_opts.to)->required();
    sweep->add_option("--steps", sweep_opts.steps, "grid points")->required();
    sweep->add_option("--x", x_override, "total initial wealth (overrides config)");

    std::vector<std::string> families{"rho", "gamma"};
    auto* compare = app.add_subcommand("csp-compare", "CSP over the two-level rho and gamma scenario grids");
    compare->add_option("--family", families, "rho and/or gamma (default both)");
    compare->add_option("--x", x_override, "total initial wealth (overrides config)");

    auto* verify = app.add_subcommand("verify", "Monte-Carlo verification report");
    verify->add_option("--paths", paths_override, "number of simulated paths");
    verify->add_option("--x", x_override, "total initial wealth (overrides config)");

    std::size_t agent_index = 1;
    auto* riccati = app.add_subcommand("riccati", "dump the affine coefficients of one agent");
    riccati->add_option("--agent", agent_index, "agent index, 1-based, terminal evaluator last");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : cli::kExitConfig;
    }

    try {
        RunConfig cfg = load_config(g);
        if (x_override) {
            cfg.erase("fixed_y");
            cfg.set("x", csv::num(*x_override));
        }
        if (g.seed) cfg.set("seed", std::to_string(*g.seed));
        if (paths_override) cfg.set("n_paths", std::to_string(*paths_override));
        const Scenario sc = to_scenario(cfg);

        std::ostringstream buf;
        int code = 0;
        if (*allocate) {
            std::unique_ptr<std::ostringstream> row;
            if (!g.out_path.empty()) row = std::make_unique<std::ostringstream>();
            code = cli::cmd_allocate(sc, std::cout, row.get(), std::cerr);
            if (row) {
                const int w = emit(g, row->str());
                if (w) return w;
            }
            return code;
        }
        if (*sweep) {
            code = cli::cmd_sweep(sc, sweep_opts, buf, std::cerr);
        } else if (*compare) {
            code = cli::cmd_csp_compare(sc, families, buf, std::cerr);
        } else if (*verify) {
            code = cli::cmd_verify(sc, buf, std::cerr);
        } else if (*riccati) {
            code = cli::cmd_riccati(sc, agent_index, buf, std::cerr);
        }
        const int w = emit(g, buf.str());
        return w ? w : code;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return cli::kExitConfig;
    } catch (const SingularityDetected& e) {
        std::cerr << "singularity: " << e.what() << '\n';
        return cli::kExitSingular;
    } catch (const NonFinite& e) {
        std::cerr << "non-finite value: " << e.what() << '\n';
        return cli::kExitSingular;
    } catch (const std::invalid_argument& e) {
        std::cerr << "invalid input: " << e.what() << '\n';
        return cli::kExitConfig;
    }
}
