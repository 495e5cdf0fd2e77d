#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "couplemerton/mc_verify.hpp"
#include "couplemerton/simulate.hpp"

using namespace couplemerton;

static_assert(PathSource<PathSimulator>);
static_assert(PathSource<PathEnsemble>);

TEST(Simulate, SameSeedSamePaths) {
    const MarketParams m = baseline_market();
    const PathEnsemble a = simulate(m, 64, 50, 42);
    const PathEnsemble b = simulate(m, 64, 50, 42);
    EXPECT_TRUE(a == b);
    const PathEnsemble c = simulate(m, 64, 50, 43);
    EXPECT_FALSE(a == c);
    EXPECT_EQ(a.theta(0)[0], m.theta0);
    EXPECT_EQ(a.Z(0)[0], 1.0);
    EXPECT_DOUBLE_EQ(a.times().back(), m.horizon_T);
}

TEST(Simulate, PathIndependentOfOrder) {
    const PathSimulator sim(baseline_market(), 100, 30, 9);
    std::vector<double> t1(31), z1(31), t2(31), z2(31);
    sim.fill(77, t1, z1);
    sim.fill(3, t2, z2);
    sim.fill(77, t2, z2);
    EXPECT_EQ(t1, t2);
    EXPECT_EQ(z1, z2);
}

TEST(Simulate, AntitheticPairsMirrorTheta) {
    const MarketParams m = baseline_market();
    const PathEnsemble e = simulate(m, 10, 40, 5);
    ASSERT_TRUE(e.antithetic());
    for (std::size_t j = 0; j < 5; ++j) {
        const auto a = e.theta(2 * j), b = e.theta(2 * j + 1);
        for (std::size_t k = 0; k <= 40; ++k) {
            const double mean =
                m.theta_bar + (m.theta0 - m.theta_bar) * std::exp(-m.lambda_theta * e.times()[k]);
            EXPECT_NEAR(a[k] + b[k], 2 * mean, 1e-12);
        }
    }
    EXPECT_FALSE(simulate(m, 9, 10, 5).antithetic());
    EXPECT_FALSE(simulate(m, 10, 10, 5, false).antithetic());
}

TEST(Simulate, OrnsteinUhlenbeckMoments) {
    MarketParams m = baseline_market();
    m.theta0 = 0.2;
    m.sigma_theta = 0.4;
    const std::size_t n = 40000;
    const PathSimulator sim(m, n, 20, 77, false);
    const double T = m.horizon_T, lam = m.lambda_theta;
    const double mean = m.theta_bar + (m.theta0 - m.theta_bar) * std::exp(-lam * T);
    const double var = m.sigma_theta * m.sigma_theta * (1 - std::exp(-2 * lam * T)) / (2 * lam);
    const auto mom = detail::reduce_paths(
        sim, 2, [&](std::span<const double> th, std::span<const double>, std::span<double> out) {
            out[0] = th.back();
            out[1] = (th.back() - mean) * (th.back() - mean);
        });
    const EstimateWithError mu = detail::to_estimate(mom[0], n);
    const EstimateWithError v = detail::to_estimate(mom[1], n);
    EXPECT_LT(std::abs(mu.z_score(mean)), 4.0);
    EXPECT_LT(std::abs(v.z_score(var)), 4.0);
}

TEST(Simulate, StockThetaCovariance) {
    // E[Z_T theta_T] is the OU mean under the martingale measure, which only
    // comes out right if the theta and stock noises are jointly correct.
    MarketParams m = baseline_market();
    m.sigma_theta = 0.3;
    const std::size_t n = 100000;
    const PathSimulator sim(m, n, 200, 123);
    const double lam = m.lambda_theta, st = m.sigma_theta, T = m.horizon_T;
    // Under Q, d theta = (-lam (theta - bar) + st theta) dt - st dW~
    const double k = lam - st;
    const double target = (lam * m.theta_bar) / k + (m.theta0 - lam * m.theta_bar / k) * std::exp(-k * T);
    const auto mom = detail::reduce_paths(
        sim, 1, [&](std::span<const double> th, std::span<const double> z, std::span<double> out) {
            out[0] = z.back() * th.back();
        });
    const EstimateWithError e = detail::to_estimate(mom[0], n);
    EXPECT_LT(std::abs(e.z_score(target)), 4.0) << e.mean << " vs " << target;
}

TEST(Simulate, DensityHasUnitMean) {
    MarketParams m = baseline_market();
    const PathSimulator sim(m, 50000, 100, 2024);
    const auto est = measure_check(sim, {0.25, 0.5, 1.0});
    for (const auto& e : est) EXPECT_LT(std::abs(e.z_score(1.0)), 4.0);
}

TEST(Simulate, RejectsBadArguments) {
    const MarketParams m = baseline_market();
    EXPECT_THROW(PathSimulator(m, 0, 10, 1), std::invalid_argument);
    EXPECT_THROW(PathSimulator(m, 10, 0, 1), std::invalid_argument);
    MarketParams bad = m;
    bad.lambda_theta = 0.0;
    EXPECT_THROW(PathSimulator(bad, 10, 10, 1), std::invalid_argument);
    const PathSimulator sim(m, 4, 10, 1);
    std::vector<double> shortbuf(5), ok(11);
    EXPECT_THROW(sim.fill(0, shortbuf, ok), std::invalid_argument);
    EXPECT_THROW(sim.fill(4, ok, ok), std::out_of_range);
}
