#pragma once

#include <algorithm>
#include <charconv>
#include <exception>
#include <cstdint>
#include <iostream>
#include <optional>
#include <sstream>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "couplemerton/couplemerton.hpp"

namespace couplemerton::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitVerifyFailed = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitSingular = 3;

// Validation errors become ConfigError; warnings go to `err`.
inline void check_problem(const ProblemSpec& spec, std::ostream& err) {
    for (const Violation& v : validate(spec)) {
        if (v.severity == Severity::kWarning) {
            err << "warning: " << v.message << '\n';
        }
    }
    for (const Violation& v : validate(spec)) {
        if (v.severity == Severity::kError) throw ConfigError(v.field, v.message);
    }
}

// Settles total wealth: in fixed-y mode x = H(y).
inline AllocationResult resolve_allocation(Scenario& sc, const HFamily& family) {
    if (sc.fixed_y) {
        AllocationResult res = allocate_at_level(family, *sc.fixed_y);
        sc.spec.total_wealth_x = res.total_x;
        return res;
    }
    return allocate(family, sc.spec.total_wealth_x);
}

inline std::vector<std::string> agent_labels(const ProblemSpec& spec) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < spec.consumers.size(); ++i) out.push_back("x" + std::to_string(i + 1));
    out.push_back("x_terminal");
    return out;
}

inline int cmd_allocate(Scenario sc, std::ostream& out, std::ostream* csv_out, std::ostream& err) {
    if (sc.fixed_y) sc.spec.total_wealth_x = 1.0;  // placeholder so validation passes
    check_problem(sc.spec, err);
    const HFamily family = make_family(sc.spec, FamilyOptions{.n_grid = sc.n_grid});
    const AllocationResult res = resolve_allocation(sc, family);
    const auto labels = agent_labels(sc.spec);

    out << "y = " << (res.y ? csv::num(*res.y) : std::string("undefined (x = 0)")) << '\n';
    out << "x = " << csv::num(sc.spec.total_wealth_x) << '\n';
    for (std::size_t i = 0; i < labels.size(); ++i) {
        out << labels[i] << " = " << csv::num(res.x_alloc[i]) << '\n';
    }
    out << "csp = " << csv::num(res.csp) << '\n';
    out << "residual = " << csv::num(res.residual) << '\n';

    if (csv_out) {
        std::vector<std::string> head{"x"};
        head.insert(head.end(), labels.begin(), labels.end());
        head.insert(head.end(), {"csp", "y", "residual"});
        csv::write_row(*csv_out, head);
        std::vector<std::string> row{csv::num(sc.spec.total_wealth_x)};
        for (double v : res.x_alloc) row.push_back(csv::num(v));
        row.push_back(csv::num(res.csp));
        row.push_back(res.y ? csv::num(*res.y) : std::string());
        row.push_back(csv::num(res.residual));
        csv::write_row(*csv_out, row);
    }
    return kExitOk;
}

// Sweep variable: "x", "theta0", or an agent parameter gammaN / rhoN (also
// accepted as gamma.N / rho.N), N counting agents from 1 with the terminal
// evaluator last.
struct SweepVar {
    enum class Kind { kX, kTheta0, kGamma, kRho } kind = Kind::kX;
    std::size_t agent = 0;  // zero-based

    static SweepVar parse(const std::string& name, std::size_t n_agents) {
        if (name == "x") return {Kind::kX, 0};
        if (name == "theta0") return {Kind::kTheta0, 0};
        for (auto [prefix, kind] : {std::pair{std::string("gamma"), Kind::kGamma},
                                    std::pair{std::string("rho"), Kind::kRho}}) {
            if (!name.starts_with(prefix)) continue;
            std::string idx = name.substr(prefix.size());
            if (!idx.empty() && idx.front() == '.') idx.erase(0, 1);
            std::size_t n = 0;
            const auto [p, ec] = std::from_chars(idx.data(), idx.data() + idx.size(), n);
            if (ec == std::errc() && p == idx.data() + idx.size() && n >= 1 && n <= n_agents) {
                return {kind, n - 1};
            }
        }
        throw ConfigError("var", "unknown sweep variable '" + name +
                                     "' (use x, theta0, gammaN or rhoN with N in 1.." +
                                     std::to_string(n_agents) + ")");
    }

    void apply(ProblemSpec& spec, double v) const {
        auto agent_ref = [&]() -> AgentSpec& {
            return agent < spec.consumers.size() ? spec.consumers[agent] : *spec.terminal;
        };
        switch (kind) {
            case Kind::kX: spec.total_wealth_x = v; break;
            case Kind::kTheta0: spec.market.theta0 = v; break;
            case Kind::kGamma: agent_ref().gamma = v; break;
            case Kind::kRho: agent_ref().rho = v; break;
        }
    }
};

struct SweepOptions {
    std::string var = "x";
    double from = 0.0;
    double to = 1.0;
    std::size_t steps = 2;
    unsigned workers = 0;  // 0: hardware concurrency
};

// Rows come back in grid order. x sweeps and non-x sweeps in x mode hold
// total wealth; non-x sweeps in fixed-y mode hold y. Throws SingularityDetected
// if any grid point hits one; nothing is written in that case.
inline int cmd_sweep(Scenario sc, const SweepOptions& o, std::ostream& out, std::ostream& err) {
    if (!(o.from < o.to)) throw ConfigError("from", "sweep needs from < to");
    if (o.steps < 2) throw ConfigError("steps", "sweep needs steps >= 2");
    const std::size_t n_agents = sc.spec.agents().size();
    const SweepVar var = SweepVar::parse(o.var, n_agents);
    const bool hold_y = sc.fixed_y && var.kind != SweepVar::Kind::kX;
    if (sc.fixed_y && !hold_y) sc.spec.total_wealth_x = o.from;
    if (hold_y) sc.spec.total_wealth_x = 1.0;
    check_problem(sc.spec, err);

    const FamilyOptions fopts{.n_grid = sc.n_grid};
    const bool resolve_each = var.kind == SweepVar::Kind::kGamma;
    const std::vector<AffineCoefficients> shared =
        resolve_each ? std::vector<AffineCoefficients>{} : solve_agents(sc.spec, fopts);

    std::vector<double> grid(o.steps);
    for (std::size_t i = 0; i < o.steps; ++i) {
        grid[i] = o.from + (o.to - o.from) * static_cast<double>(i) / static_cast<double>(o.steps - 1);
    }
    std::vector<std::optional<AllocationResult>> results(o.steps);
    std::vector<std::exception_ptr> errors(o.steps);
    auto run_point = [&](std::size_t i) {
        try {
            ProblemSpec spec = sc.spec;
            var.apply(spec, grid[i]);
            std::ostringstream quiet;  // warnings were reported once for the base point
            check_problem(spec, quiet);
            const HFamily fam = resolve_each ? make_family(spec, fopts) : make_family(spec, shared);
            results[i] = hold_y ? allocate_at_level(fam, *sc.fixed_y) : allocate(fam, spec.total_wealth_x);
        } catch (...) {
            errors[i] = std::current_exception();
        }
    };
    unsigned workers = o.workers ? o.workers : std::max(1u, std::thread::hardware_concurrency());
    workers = static_cast<unsigned>(std::min<std::size_t>(workers, o.steps));
    {
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                for (std::size_t i = w; i < o.steps; i += workers) run_point(i);
            });
        }
    }
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }

    std::vector<std::string> head{o.var};
    for (std::size_t i = 0; i < sc.spec.consumers.size(); ++i) {
        head.push_back("x" + std::to_string(i + 1) + "_frac");
    }
    head.insert(head.end(), {"x_terminal_frac", "csp", "y"});
    csv::write_row(out, head);
    for (std::size_t i = 0; i < o.steps; ++i) {
        const AllocationResult& r = *results[i];
        std::vector<std::string> row{csv::num(grid[i])};
        for (double xi : r.x_alloc) row.push_back(csv::num(r.total_x > 0.0 ? xi / r.total_x : 0.0));
        row.push_back(csv::num(r.csp));
        row.push_back(r.y ? csv::num(*r.y) : std::string());
        csv::write_row(out, row);
    }
    return kExitOk;
}

// Two consumers plus a terminal evaluator; each label digit picks one of two
// values for that agent. The rho family fixes gamma = -3, the gamma family
// fixes rho = 0.0052.
struct CspScenario {
    std::string family;
    std::string label;
    double gamma[3];
    double rho[3];
};

inline const char* const kCspLabels[] = {"111", "121", "122", "112", "211", "212", "221", "222"};

inline std::vector<CspScenario> csp_scenarios(const std::string& family) {
    std::vector<CspScenario> out;
    for (const char* label : kCspLabels) {
        CspScenario sc{family, label, {}, {}};
        for (int i = 0; i < 3; ++i) {
            const bool second = label[i] == '2';
            if (family == "rho") {
                sc.gamma[i] = -3.0;
                sc.rho[i] = second ? 0.3 : 0.0052;
            } else if (family == "gamma") {
                sc.gamma[i] = second ? -9.0 : -3.0;
                sc.rho[i] = 0.0052;
            } else {
                throw ConfigError("family", "scenario family must be rho or gamma, got '" + family + "'");
            }
        }
        out.push_back(sc);
    }
    return out;
}

struct CspRow {
    CspScenario scenario;
    double csp = 0.0;
};

// CSP of every scenario at the config's market and wealth (x, or H(y) of the
// scenario itself in fixed-y mode).
inline std::vector<CspRow> csp_compare(const Scenario& base, const std::string& family) {
    std::vector<CspRow> rows;
    for (const CspScenario& cs : csp_scenarios(family)) {
        ProblemSpec spec;
        spec.market = base.spec.market;
        spec.consumers = {consumer(cs.gamma[0], cs.rho[0]), consumer(cs.gamma[1], cs.rho[1])};
        spec.terminal = terminal(cs.gamma[2], cs.rho[2]);
        const HFamily fam = make_family(spec, FamilyOptions{.n_grid = base.n_grid});
        const AllocationResult r = base.fixed_y ? allocate_at_level(fam, *base.fixed_y)
                                                : allocate(fam, base.spec.total_wealth_x);
        rows.push_back({cs, r.csp});
    }
    return rows;
}

inline int cmd_csp_compare(const Scenario& sc, const std::vector<std::string>& families,
                           std::ostream& out, std::ostream& err) {
    ProblemSpec probe = sc.spec;
    if (sc.fixed_y) probe.total_wealth_x = 1.0;
    check_problem(probe, err);
    csv::write_row(out, {"family", "label", "gamma1", "gamma2", "gamma3", "rho1", "rho2", "rho3", "csp"});
    for (const std::string& f : families) {
        for (const CspRow& r : csp_compare(sc, f)) {
            const CspScenario& s = r.scenario;
            csv::write_row(out, {s.family, s.label, csv::num(s.gamma[0]), csv::num(s.gamma[1]),
                                 csv::num(s.gamma[2]), csv::num(s.rho[0]), csv::num(s.rho[1]),
                                 csv::num(s.rho[2]), csv::num(r.csp)});
        }
    }
    return kExitOk;
}

// Report CSV; exit 1 if any check fails.
inline int cmd_verify(Scenario sc, std::ostream& out, std::ostream& err) {
    if (sc.fixed_y) sc.spec.total_wealth_x = 1.0;
    check_problem(sc.spec, err);
    if (sc.fixed_y) {
        resolve_allocation(sc, make_family(sc.spec, FamilyOptions{.n_grid = sc.n_grid}));
    }
    const PathSimulator source(sc.spec.market, sc.n_paths, sc.n_steps, sc.seed);
    VerifyOptions opts;
    opts.family.n_grid = sc.n_grid;
    const std::vector<ReportRow> rows = verification_report(sc.spec, source, opts);
    write_report_csv(out, rows);
    std::size_t failed = 0;
    for (const ReportRow& r : rows) {
        if (!r.pass) {
            ++failed;
            err << "FAILED " << r.check_name << " agent " << r.agent << ": estimate "
                << csv::num(r.estimate) << " vs " << csv::num(r.reference) << " (z = "
                << csv::num(r.z_score) << ")\n";
        }
    }
    return failed ? kExitVerifyFailed : kExitOk;
}

// Grid dump for one agent (1-based, terminal evaluator last). Past a blowup
// of A1 the coefficient fields are left empty; A1_closed is empty past the
// pole of the closed form. Returns 3 if the coefficients blew up on [0, T].
inline int cmd_riccati(const Scenario& sc, std::size_t agent_index, std::ostream& out,
                       std::ostream& err) {
    const std::vector<AgentSpec> agents = sc.spec.agents();
    if (agent_index < 1 || agent_index > agents.size()) {
        throw ConfigError("agent", "agent index must be in 1.." + std::to_string(agents.size()));
    }
    const AgentSpec& a = agents[agent_index - 1];
    const MarketParams& m = sc.spec.market;
    const AffineCoefficients c =
        solve_system(a.gamma, m, m.horizon_T, sc.n_grid, {.truncate_at_blowup = true});
    const std::vector<double> res = node_residuals(c, a.gamma, m);
    const std::vector<double> full = detail::uniform_grid(m.horizon_T, sc.n_grid);

    csv::write_row(out, {"s", "A1", "A2", "A3", "A1_closed", "residual"});
    for (std::size_t k = 0; k < full.size(); ++k) {
        std::string closed;
        try {
            closed = csv::num(a1_closed(a.gamma, m, full[k]));
        } catch (const SingularityDetected&) {
        }
        if (k < c.grid.size()) {
            csv::write_row(out, {csv::num(full[k]), csv::num(c.A1[k]), csv::num(c.A2[k]),
                                 csv::num(c.A3[k]), closed, csv::num(res[k])});
        } else {
            csv::write_row(out, {csv::num(full[k]), "", "", "", closed, ""});
        }
    }
    if (c.blowup_time) {
        err << "A1 blows up at s ~ " << csv::num(*c.blowup_time) << " < T = " << csv::num(m.horizon_T)
            << '\n';
        return kExitSingular;
    }
    return kExitOk;
}

}  // namespace couplemerton::cli
