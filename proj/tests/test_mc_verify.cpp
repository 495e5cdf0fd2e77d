#include <gtest/gtest.h>

#include <cmath>
#include <sstream>
#include <string>

#include "couplemerton/mc_verify.hpp"

using namespace couplemerton;

namespace {

// theta and Z of a path plus a few nonlinear functionals
void functionals(std::span<const double> th, std::span<const double> z, std::span<double> out) {
    out[0] = th.back();
    out[1] = z.back();
    out[2] = std::exp(th[th.size() / 2]) * z.back();
}

}  // namespace

TEST(Reduce, IndependentOfWorkerCount) {
    const PathSimulator sim(baseline_market(), 5 * detail::kBlockPaths + 37, 40, 11);
    const auto one = detail::reduce_paths(sim, 3, functionals, 1);
    const auto four = detail::reduce_paths(sim, 3, functionals, 4);
    const auto seven = detail::reduce_paths(sim, 3, functionals, 7);
    for (std::size_t j = 0; j < 3; ++j) {
        EXPECT_EQ(one[j].mean, four[j].mean);
        EXPECT_EQ(one[j].m2, four[j].m2);
        EXPECT_EQ(one[j].mean, seven[j].mean);
        EXPECT_EQ(one[j].m2, seven[j].m2);
    }
}

TEST(Reduce, MatchesDirectMoments) {
    const PathEnsemble e = simulate(baseline_market(), 3000, 10, 4, false);
    const auto mom = detail::reduce_paths(e, 3, functionals, 3);
    double sum = 0.0, sq = 0.0;
    for (std::size_t p = 0; p < e.n_paths(); ++p) sum += e.theta(p).back();
    const double mean = sum / e.n_paths();
    for (std::size_t p = 0; p < e.n_paths(); ++p) sq += (e.theta(p).back() - mean) * (e.theta(p).back() - mean);
    EXPECT_NEAR(mom[0].mean, mean, 1e-14);
    EXPECT_NEAR(mom[0].m2, sq, 1e-10 * sq);
    EXPECT_EQ(mom[0].n, 3000.0);
}

TEST(Reduce, PairsCountOnce) {
    const PathSimulator sim(baseline_market(), 2000, 10, 4);
    const auto mom = detail::reduce_paths(sim, 1, functionals, 2);
    EXPECT_EQ(mom[0].n, 1000.0);
    const auto single = detail::reduce_paths(
        sim, 1, [](std::span<const double> th, std::span<const double>, std::span<double> out) {
            out[0] = th.back();
        });
    // theta_T averages to its exact mean over each mirrored pair
    const MarketParams m = baseline_market();
    EXPECT_NEAR(single[0].mean, m.theta_bar + (m.theta0 - m.theta_bar) * std::exp(-m.lambda_theta),
                1e-12);
    EXPECT_LT(single[0].m2, 1e-20);
}

TEST(Estimate, StdErrorHalvesWithFourTimesPaths) {
    const ProblemSpec spec = baseline_problem();
    const auto agents = spec.agents();
    const PathSimulator small(spec.market, 10000, 50, 8);
    const PathSimulator large(spec.market, 40000, 50, 9);
    const auto a = estimate_h_mc(agents, spec.market, 1.0, small);
    const auto b = estimate_h_mc(agents, spec.market, 1.0, large);
    for (std::size_t i = 0; i < agents.size(); ++i) {
        EXPECT_NEAR(a[i].std_error / b[i].std_error, 2.0, 0.2) << i;
        EXPECT_EQ(b[i].n_paths, 40000u);
    }
}

TEST(Estimate, ZScoreConventions) {
    const EstimateWithError e{1.0, 0.1, 10};
    EXPECT_DOUBLE_EQ(e.z_score(1.25), 2.5);
    EXPECT_TRUE(e.agrees(1.25));
    EXPECT_FALSE(e.agrees(1.5));
    const EstimateWithError exact{2.0, 0.0, 10};
    EXPECT_EQ(exact.z_score(2.0), 0.0);
    EXPECT_TRUE(std::isinf(exact.z_score(2.1)));
    EXPECT_TRUE(exact.agrees(2.0 + 1e-10));
}

TEST(Verify, MonteCarloSeparatesCoefficientVariants) {
    // stormy theta and a large rate so the wrong variants sit far outside the noise
    ProblemSpec spec = baseline_problem();
    spec.market.sigma_theta = 0.5;
    spec.market.r = 0.3;
    spec.consumers = {consumer(-3.0, 0.01)};
    spec.terminal = terminal(-2.0, 0.01);
    const auto agents = spec.agents();
    const PathSimulator sim(spec.market, 160000, 100, 31);
    const auto mc = estimate_h_mc(agents, spec.market, 1.0, sim);

    const auto good = solve_agents(spec);
    const auto omitted = solve_agents(spec, {.term = CovarianceTerm::kOmitted});
    for (std::size_t i = 0; i < agents.size(); ++i) {
        const double s_good = s_value(good[i], agents[i], spec.market);
        const double s_omit = s_value(omitted[i], agents[i], spec.market);
        EXPECT_LT(mc[i].z_score(s_good), 4.0) << i;
        EXPECT_GT(mc[i].z_score(s_omit), 8.0) << i;
    }

    // terminal value under the exponent -(r (1 - gamma) + rho) / (1 - gamma)
    const AgentSpec& term = agents[1];
    const double printed = -(spec.market.r * (1.0 - term.gamma) + term.rho) / (1.0 - term.gamma);
    const double s_printed = s_value(good[1], term, spec.market) *
                             std::exp((printed - discount_exponent(term, spec.market)) * spec.market.horizon_T);
    EXPECT_GT(mc[1].z_score(s_printed), 8.0);
}

TEST(Verify, BudgetWithZeroWealth) {
    ProblemSpec spec = baseline_problem(0.0);
    const AllocationResult alloc = allocate(spec);
    const PathSimulator sim(spec.market, 100, 10, 1);
    const BudgetReport b = budget_check(spec, alloc, sim);
    ASSERT_EQ(b.per_agent.size(), 3u);
    for (const auto& e : b.per_agent) EXPECT_EQ(e.mean, 0.0);
    EXPECT_EQ(b.total.mean, 0.0);
    EXPECT_TRUE(b.total.agrees(0.0));
}

TEST(Verify, CheckpointMustBeOnGrid) {
    EXPECT_EQ(detail::checkpoint_index(0.5, 0.01, 100), 50u);
    EXPECT_THROW(detail::checkpoint_index(0.505, 0.01, 100), std::invalid_argument);
    EXPECT_THROW(detail::checkpoint_index(1.5, 0.01, 100), std::invalid_argument);
    EXPECT_THROW(detail::checkpoint_index(-0.1, 0.01, 100), std::invalid_argument);
    const PathSimulator sim(baseline_market(), 10, 7, 1);
    EXPECT_THROW(measure_check(sim, {0.5}), std::invalid_argument);
}

TEST(Verify, ReportRowsAndCsv) {
    const ProblemSpec spec = baseline_problem(2.0);
    const PathSimulator sim(spec.market, 20000, 100, 5);
    const auto rows = verification_report(spec, sim);
    // 3 measure + 3 h + 3 budget + 1 total + 3 agents x 3 martingale
    ASSERT_EQ(rows.size(), 19u);
    for (const ReportRow& r : rows) EXPECT_TRUE(r.pass) << r.check_name << " " << r.agent << " z=" << r.z_score;
    EXPECT_EQ(rows[3].check_name, "h_mc_vs_s_value");
    EXPECT_EQ(rows[5].agent, "terminal");

    std::ostringstream os;
    write_report_csv(os, rows);
    std::istringstream in(os.str());
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "check_name,agent,estimate,std_error,reference,z_score,pass");
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        EXPECT_EQ(std::count(line.begin(), line.end(), ','), 6) << line;
    }
    EXPECT_EQ(n, rows.size());
}

TEST(Verify, MakeRow) {
    const ReportRow hit = make_row("c", "1", {1.0, 0.0, 5}, 1.0);
    EXPECT_TRUE(hit.pass);
    EXPECT_EQ(hit.z_score, 0.0);
    const ReportRow miss = make_row("c", "1", {1.0, 0.01, 5}, 1.1);
    EXPECT_FALSE(miss.pass);
    EXPECT_NEAR(miss.z_score, 10.0, 1e-9);
}

TEST(Verify, EnsembleAndSimulatorAgree) {
    const ProblemSpec spec = baseline_problem();
    const PathSimulator sim(spec.market, 3000, 30, 99);
    const PathEnsemble e = simulate(spec.market, 3000, 30, 99);
    const auto a = estimate_h_mc(spec.agents(), spec.market, 1.3, sim);
    const auto b = estimate_h_mc(spec.agents(), spec.market, 1.3, e);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].mean, b[i].mean);
        EXPECT_EQ(a[i].std_error, b[i].std_error);
    }
}
