#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "couplemerton/allocation.hpp"
#include "couplemerton/csv.hpp"
#include "couplemerton/model.hpp"
#include "couplemerton/policy.hpp"
#include "couplemerton/riccati.hpp"
#include "couplemerton/simulate.hpp"

namespace couplemerton {

struct EstimateWithError {
    double mean = 0.0;
    double std_error = 0.0;
    std::size_t n_paths = 0;

    // |mean - reference| in standard errors; a deterministic estimate
    // (std_error == 0) scores 0 on an exact hit and infinity otherwise.
    double z_score(double reference) const {
        const double d = std::abs(mean - reference);
        if (std_error > 0.0) return d / std_error;
        return d == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    }

    // Within n_se standard errors, or within abs_tol (relative to
    // max(1, |reference|)) for estimates whose noise vanishes.
    bool agrees(double reference, double n_se = 3.0, double abs_tol = 1e-8) const {
        const double d = std::abs(mean - reference);
        return d <= n_se * std_error || d <= abs_tol * std::max(1.0, std::abs(reference));
    }
};

namespace detail {

struct Moments {
    double n = 0.0, mean = 0.0, m2 = 0.0;

    void add(double x) {
        n += 1.0;
        const double d = x - mean;
        mean += d / n;
        m2 += d * (x - mean);
    }

    static Moments merge(const Moments& a, const Moments& b) {
        if (a.n == 0.0) return b;
        if (b.n == 0.0) return a;
        Moments m;
        m.n = a.n + b.n;
        const double d = b.mean - a.mean;
        m.mean = a.mean + d * b.n / m.n;
        m.m2 = a.m2 + b.m2 + d * d * a.n * b.n / m.n;
        return m;
    }
};

inline constexpr std::size_t kBlockPaths = 1024;

// Calls per_path(theta, z, out) for every path, where out has `width` slots,
// and returns the moments of each slot. Antithetic partners are averaged into
// one sample. Paths are cut into fixed blocks whose moments are merged by a
// pairwise tree in block order, so the result is the same for any number of
// worker threads.
template <PathSource S, class F>
std::vector<Moments> reduce_paths(const S& source, std::size_t width, F&& per_path,
                                  unsigned workers = std::thread::hardware_concurrency()) {
    const std::size_t n_paths = source.n_paths();
    const std::size_t n_blocks = (n_paths + kBlockPaths - 1) / kBlockPaths;
    const bool pairs = source.antithetic();
    std::vector<std::vector<Moments>> blocks(n_blocks, std::vector<Moments>(width));

    auto run_block = [&](std::size_t b) {
        std::vector<double> theta(source.n_steps() + 1), z(source.n_steps() + 1);
        std::vector<double> out(width), partner(width);
        const std::size_t end = std::min(n_paths, (b + 1) * kBlockPaths);
        for (std::size_t p = b * kBlockPaths; p < end; ++p) {
            source.fill(p, theta, z);
            std::fill(out.begin(), out.end(), 0.0);
            per_path(std::span<const double>(theta), std::span<const double>(z),
                     std::span<double>(out));
            if (pairs && p % 2 == 0) {
                partner = out;
                continue;
            }
            for (std::size_t j = 0; j < width; ++j) {
                blocks[b][j].add(pairs ? 0.5 * (out[j] + partner[j]) : out[j]);
            }
        }
    };

    const std::size_t n_workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(1, n_blocks));
    if (n_workers == 1) {
        for (std::size_t b = 0; b < n_blocks; ++b) run_block(b);
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < n_workers; ++w) {
            pool.emplace_back([&, w] {
                for (std::size_t b = w; b < n_blocks; b += n_workers) run_block(b);
            });
        }
    }

    while (blocks.size() > 1) {
        std::vector<std::vector<Moments>> next;
        for (std::size_t i = 0; i < blocks.size(); i += 2) {
            if (i + 1 == blocks.size()) {
                next.push_back(std::move(blocks[i]));
                continue;
            }
            std::vector<Moments> merged(width);
            for (std::size_t j = 0; j < width; ++j) {
                merged[j] = Moments::merge(blocks[i][j], blocks[i + 1][j]);
            }
            next.push_back(std::move(merged));
        }
        blocks = std::move(next);
    }
    return blocks.empty() ? std::vector<Moments>(width) : blocks.front();
}

inline EstimateWithError to_estimate(const Moments& m, std::size_t n_paths) {
    EstimateWithError e;
    e.mean = m.mean;
    e.n_paths = n_paths;
    e.std_error = m.n > 1.0 ? std::sqrt(std::max(0.0, m.m2 / (m.n - 1.0)) / m.n) : 0.0;
    return e;
}

// log of Z_t D_t I(y zeta_t), the P-weighted discounted spending at t.
inline double log_weighted_spending(const AgentSpec& a, const MarketParams& m, double log_y,
                                    double log_z, double t) {
    const double log_zd = log_z - m.r * t;
    return log_zd + (log_y + log_zd + a.rho * t) * inverse_marginal_exponent(a.gamma);
}

// Per-path discounted spending of an agent at level y: trapezoid over the
// grid for consumers, the horizon value for the terminal evaluator.
inline double path_spending(const AgentSpec& a, const MarketParams& m, double log_y,
                            std::span<const double> z, double dt) {
    const std::size_t n = z.size() - 1;
    if (!a.is_consumer()) {
        return std::exp(log_weighted_spending(a, m, log_y, std::log(z[n]), dt * n));
    }
    double acc = 0.0;
    for (std::size_t k = 0; k <= n; ++k) {
        const double w = (k == 0 || k == n) ? 0.5 : 1.0;
        acc += w * std::exp(log_weighted_spending(a, m, log_y, std::log(z[k]), dt * k));
    }
    return acc * dt;
}

inline std::size_t checkpoint_index(double t, double dt, std::size_t n_steps) {
    const double k = std::round(t / dt);
    if (k < 0.0 || k > static_cast<double>(n_steps) || std::abs(k * dt - t) > 1e-9 * std::max(1.0, t)) {
        throw std::invalid_argument("checkpoint is not on the simulation grid");
    }
    return static_cast<std::size_t>(k);
}

}  // namespace detail

// Monte-Carlo H_i(y) for several agents in one pass over the ensemble:
// E~[int_0^T D_u I(y zeta_u) du] for consumers and E~[D_T I(y zeta_T)] for the
// terminal evaluator, computed under P with Z-weighting.
template <PathSource S>
std::vector<EstimateWithError> estimate_h_mc(const std::vector<AgentSpec>& agents,
                                             const MarketParams& market, double y, const S& source) {
    if (!(y > 0.0)) throw std::invalid_argument("y must be positive");
    const double log_y = std::log(y);
    const double dt = source.dt();
    const auto moments = detail::reduce_paths(
        source, agents.size(),
        [&](std::span<const double>, std::span<const double> z, std::span<double> out) {
            for (std::size_t i = 0; i < agents.size(); ++i) {
                out[i] = detail::path_spending(agents[i], market, log_y, z, dt);
            }
        });
    std::vector<EstimateWithError> out;
    for (const auto& m : moments) out.push_back(detail::to_estimate(m, source.n_paths()));
    return out;
}

template <PathSource S>
EstimateWithError estimate_h_mc(const AgentSpec& agent, const MarketParams& market, double y,
                                const S& source) {
    return estimate_h_mc(std::vector<AgentSpec>{agent}, market, y, source).front();
}

struct BudgetReport {
    std::vector<EstimateWithError> per_agent;
    EstimateWithError total;
};

// E~ of each agent's discounted spending at the allocation's level y; at the
// optimum agent i's piece prices to x_i and the total to x.
template <PathSource S>
BudgetReport budget_check(const ProblemSpec& spec, const AllocationResult& allocation,
                          const S& source) {
    const std::vector<AgentSpec> agents = spec.agents();
    BudgetReport report;
    if (!allocation.y) {
        report.per_agent.assign(agents.size(), EstimateWithError{0.0, 0.0, source.n_paths()});
        report.total = EstimateWithError{0.0, 0.0, source.n_paths()};
        return report;
    }
    const double log_y = std::log(*allocation.y);
    const double dt = source.dt();
    const std::size_t n = agents.size();
    const auto moments = detail::reduce_paths(
        source, n + 1, [&](std::span<const double>, std::span<const double> z, std::span<double> out) {
            double total = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                out[i] = detail::path_spending(agents[i], spec.market, log_y, z, dt);
                total += out[i];
            }
            out[n] = total;
        });
    for (std::size_t i = 0; i < n; ++i) {
        report.per_agent.push_back(detail::to_estimate(moments[i], source.n_paths()));
    }
    report.total = detail::to_estimate(moments[n], source.n_paths());
    return report;
}

struct MartingaleReport {
    std::vector<double> times;
    std::vector<EstimateWithError> estimates;
    std::vector<double> z_scores;
    double reference = 0.0;
    double max_deviation = 0.0;  // in standard errors
};

// Tower-property check of the wealth formula: E[Z_t (D_t X_t + int_0^t D_s c_s ds)]
// must equal the time-0 wealth for every t. The reference is wealth_t at t = 0
// with the same coefficients. Each checkpoint evaluates the wealth integral on
// every path, so a coarse coefficient grid (64-256 intervals) is plenty here.
template <PathSource S>
MartingaleReport martingale_check(const AgentSpec& agent, const AffineCoefficients& coeffs,
                                  const MarketParams& market, double y, const S& source,
                                  const std::vector<double>& checkpoints) {
    const double dt = source.dt();
    std::vector<std::size_t> idx;
    for (double t : checkpoints) idx.push_back(detail::checkpoint_index(t, dt, source.n_steps()));
    const double log_y = std::log(y);

    MartingaleReport report;
    report.reference = wealth_t(agent, coeffs, market, PolicyState::initial(market, y));
    const auto moments = detail::reduce_paths(
        source, idx.size(),
        [&](std::span<const double> theta, std::span<const double> z, std::span<double> out) {
            const std::size_t last = *std::max_element(idx.begin(), idx.end());
            std::vector<double> spent(last + 1, 0.0);
            if (agent.is_consumer()) {
                double prev = std::exp(detail::log_weighted_spending(agent, market, log_y, 0.0, 0.0));
                for (std::size_t k = 1; k <= last; ++k) {
                    // D_s c_s (no Z weight) for the cumulative spending to t
                    const double cur = std::exp(
                        detail::log_weighted_spending(agent, market, log_y, std::log(z[k]), dt * k) -
                        std::log(z[k]));
                    spent[k] = spent[k - 1] + 0.5 * dt * (prev + cur);
                    prev = cur;
                }
            }
            for (std::size_t j = 0; j < idx.size(); ++j) {
                const std::size_t k = idx[j];
                const double t = dt * k;
                const PolicyState st = PolicyState::from_path(market, y, t, theta[k], z[k]);
                const double x_t = wealth_t(agent, coeffs, market, st);
                out[j] = z[k] * (std::exp(-market.r * t) * x_t + spent[k]);
            }
        });
    for (std::size_t j = 0; j < idx.size(); ++j) {
        const EstimateWithError e = detail::to_estimate(moments[j], source.n_paths());
        report.times.push_back(dt * idx[j]);
        report.estimates.push_back(e);
        const double z = e.agrees(report.reference, 0.0) ? 0.0 : e.z_score(report.reference);
        report.z_scores.push_back(z);
        report.max_deviation = std::max(report.max_deviation, z);
    }
    return report;
}

// E[Z_t] at each checkpoint.
template <PathSource S>
std::vector<EstimateWithError> measure_check(const S& source, const std::vector<double>& checkpoints) {
    std::vector<std::size_t> idx;
    for (double t : checkpoints) idx.push_back(detail::checkpoint_index(t, source.dt(), source.n_steps()));
    const auto moments = detail::reduce_paths(
        source, idx.size(), [&](std::span<const double>, std::span<const double> z, std::span<double> out) {
            for (std::size_t j = 0; j < idx.size(); ++j) out[j] = z[idx[j]];
        });
    std::vector<EstimateWithError> out;
    for (const auto& m : moments) out.push_back(detail::to_estimate(m, source.n_paths()));
    return out;
}

struct ReportRow {
    std::string check_name;
    std::string agent;
    double estimate = 0.0;
    double std_error = 0.0;
    double reference = 0.0;
    double z_score = 0.0;
    bool pass = false;
};

inline ReportRow make_row(std::string check, std::string agent, const EstimateWithError& e,
                          double reference) {
    const bool pass = e.agrees(reference);
    const double z = (pass && e.std_error == 0.0) ? 0.0 : e.z_score(reference);
    return {std::move(check), std::move(agent), e.mean, e.std_error, reference, z, pass};
}

inline void write_report_csv(std::ostream& os, const std::vector<ReportRow>& rows) {
    csv::write_row(os, {"check_name", "agent", "estimate", "std_error", "reference", "z_score", "pass"});
    for (const ReportRow& r : rows) {
        csv::write_row(os, {r.check_name, r.agent, csv::num(r.estimate), csv::num(r.std_error),
                            csv::num(r.reference), csv::num(r.z_score), r.pass ? "1" : "0"});
    }
}

struct VerifyOptions {
    std::vector<double> checkpoints{0.25, 0.5, 0.75};  // fractions of T
    std::size_t martingale_grid = 128;
    FamilyOptions family{};
};

// Every Monte-Carlo identity the closed forms rest on, one row per check:
// E[Z_t] = 1, H_i(1) = s_i, the budget pieces against the allocation, and the
// wealth martingale at the checkpoints.
template <PathSource S>
std::vector<ReportRow> verification_report(const ProblemSpec& spec, const S& source,
                                           const VerifyOptions& opts = {}) {
    const MarketParams& m = spec.market;
    const std::vector<AgentSpec> agents = spec.agents();
    auto label = [&](std::size_t i) {
        return agents[i].is_consumer() ? std::to_string(i + 1) : std::string("terminal");
    };
    std::vector<double> times;
    for (double f : opts.checkpoints) times.push_back(f * m.horizon_T);

    std::vector<ReportRow> rows;
    const auto z_means = measure_check(source, times);
    for (std::size_t j = 0; j < times.size(); ++j) {
        rows.push_back(make_row("measure_Z_t=" + csv::num(times[j]), "-", z_means[j], 1.0));
    }

    const std::vector<AffineCoefficients> coeffs = solve_agents(spec, opts.family);
    const HFamily family = make_family(spec, coeffs);
    const auto h_est = estimate_h_mc(agents, m, 1.0, source);
    for (std::size_t i = 0; i < agents.size(); ++i) {
        rows.push_back(make_row("h_mc_vs_s_value", label(i), h_est[i], family.terms()[i].s));
    }

    const AllocationResult alloc = allocate(family, spec.total_wealth_x);
    const BudgetReport budget = budget_check(spec, alloc, source);
    for (std::size_t i = 0; i < agents.size(); ++i) {
        rows.push_back(make_row("budget", label(i), budget.per_agent[i], alloc.x_alloc[i]));
    }
    rows.push_back(make_row("budget_total", "all", budget.total, spec.total_wealth_x));

    if (alloc.y) {
        FamilyOptions coarse = opts.family;
        coarse.n_grid = opts.martingale_grid;
        const std::vector<AffineCoefficients> coarse_coeffs = solve_agents(spec, coarse);
        for (std::size_t i = 0; i < agents.size(); ++i) {
            const MartingaleReport mr =
                martingale_check(agents[i], coarse_coeffs[i], m, *alloc.y, source, times);
            for (std::size_t j = 0; j < times.size(); ++j) {
                rows.push_back(make_row("martingale_t=" + csv::num(times[j]), label(i),
                                        mr.estimates[j], mr.reference));
            }
        }
    }
    return rows;
}

}  // namespace couplemerton
