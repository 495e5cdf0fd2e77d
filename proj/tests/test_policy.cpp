#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "couplemerton/allocation.hpp"
#include "couplemerton/policy.hpp"

using namespace couplemerton;

namespace {

struct Baseline {
    ProblemSpec spec = baseline_problem(2.0);
    std::vector<AgentSpec> agents = spec.agents();
    std::vector<AffineCoefficients> coeffs = solve_agents(spec);
};

// Wealth after a stock shock dW over an instant dt, moving theta and Z by
// their own dynamics. Independent of the portfolio formula.
double wealth_after(const AgentSpec& a, const AffineCoefficients& c, const MarketParams& m, double y,
                    double t, double theta, double z, double dw, double dt) {
    const double th1 = theta - m.lambda_theta * (theta - m.theta_bar) * dt - m.sigma_theta * dw;
    const double z1 = z * std::exp(-theta * dw - 0.5 * theta * theta * dt);
    return wealth_t(a, c, m, PolicyState::from_path(m, y, t + dt, th1, z1));
}

}  // namespace

TEST(Policy, InitialWealthIsAllocation) {
    Baseline s;
    const HFamily fam = make_family(s.spec, s.coeffs);
    const double y = 3.0;
    for (std::size_t i = 0; i < s.agents.size(); ++i) {
        const double x0 = wealth_t(s.agents[i], s.coeffs[i], s.spec.market,
                                   PolicyState::initial(s.spec.market, y));
        EXPECT_NEAR(x0, fam.terms()[i].value(y), 1e-13);
    }
}

TEST(Policy, HorizonValues) {
    Baseline s;
    const MarketParams& m = s.spec.market;
    const double y = 1.7, z = 0.83, th = 0.4;
    const PolicyState end = PolicyState::from_path(m, y, m.horizon_T, th, z);
    EXPECT_EQ(wealth_t(s.agents[0], s.coeffs[0], m, end), 0.0);
    const double zeta = state_price(s.agents[2], m, z, m.horizon_T);
    EXPECT_NEAR(wealth_t(s.agents[2], s.coeffs[2], m, end), consumption(s.agents[2], y, zeta), 1e-14);
    EXPECT_THROW(wealth_t(s.agents[0], s.coeffs[0], m, PolicyState::from_path(m, y, 1.5, th, z)),
                 std::out_of_range);
}

TEST(Policy, ConsumptionInvertsMarginalUtility) {
    const AgentSpec a = consumer(-3.0, 0.02);
    const double y = 2.5, zeta = 0.9;
    const double c = consumption(a, y, zeta);
    EXPECT_NEAR(std::pow(c, a.gamma - 1.0), y * zeta, 1e-13);
    EXPECT_THROW(consumption(a, 0.0, 1.0), std::invalid_argument);
}

TEST(Policy, WeightMatchesWealthDiffusion) {
    // dX / X = pi sigma dW + O(dt): recover pi from a symmetric stock shock
    Baseline s;
    s.spec.market.sigma_theta = 0.3;  // make hedging visible
    s.coeffs = solve_agents(s.spec);
    const MarketParams& m = s.spec.market;
    const double y = 2.0;
    for (double t : {0.0, 0.45}) {
        for (double th : {0.2, 0.9456, 1.4}) {
            const double z = 1.07;
            const PolicyState st = PolicyState::from_path(m, y, t, th, z);
            const PortfolioWeights w = portfolio_weights(s.agents, s.coeffs, m, st);
            for (std::size_t i = 0; i < s.agents.size(); ++i) {
                const double dw = 1e-5, dt = 1e-12;
                const double up = wealth_after(s.agents[i], s.coeffs[i], m, y, t, th, z, dw, dt);
                const double dn = wealth_after(s.agents[i], s.coeffs[i], m, y, t, th, z, -dw, dt);
                const double diffusion = (up - dn) / (2 * dw * w.wealth[i]);
                EXPECT_NEAR(w.weight[i] * m.sigma, diffusion, 1e-6) << i << " t=" << t << " th=" << th;
                EXPECT_NEAR(w.myopic[i] + w.hedging[i], w.weight[i], 1e-15);
            }
        }
    }
}

TEST(Policy, MyopicWhenThetaIsDeterministic) {
    Baseline s;
    s.spec.market.sigma_theta = 0.0;
    s.coeffs = solve_agents(s.spec);
    const MarketParams& m = s.spec.market;
    const PolicyState st = PolicyState::from_path(m, 3.0, 0.2, 0.7, 1.2);
    const PortfolioWeights w = portfolio_weights(s.agents, s.coeffs, m, st);
    for (std::size_t i = 0; i < s.agents.size(); ++i) {
        EXPECT_EQ(w.hedging[i], 0.0);
        const double expected = (1.0 / (1.0 - s.agents[i].gamma)) * (st.mu_t - m.r) / (m.sigma * m.sigma);
        EXPECT_NEAR(w.weight[i], expected, 4 * std::numeric_limits<double>::epsilon() * expected);
    }
}

TEST(Policy, HedgingSignFollowsGamma) {
    // risk-averse agents (gamma < 0) hedge long against falling theta when
    // theta > 0; risk-tolerant ones the other way
    ProblemSpec spec = baseline_problem(1.0);
    spec.consumers = {consumer(-3.0, 0.01), consumer(0.5, 0.01)};
    const auto agents = spec.agents();
    const auto coeffs = solve_agents(spec);
    const PolicyState st = PolicyState::from_path(spec.market, 1.0, 0.1, 0.9, 1.0);
    const PortfolioWeights w = portfolio_weights(agents, coeffs, spec.market, st);
    EXPECT_GT(w.hedging[0], 0.0);
    EXPECT_LT(w.hedging[1], 0.0);
}

TEST(Policy, TotalsAddUp) {
    Baseline s;
    const PolicyState st = PolicyState::from_path(s.spec.market, 2.0, 0.3, 0.8, 0.95);
    const PortfolioWeights w = portfolio_weights(s.agents, s.coeffs, s.spec.market, st);
    double wealth = 0.0, amount = 0.0;
    for (std::size_t i = 0; i < s.agents.size(); ++i) {
        wealth += w.wealth[i];
        amount += w.weight[i] * w.wealth[i];
    }
    EXPECT_NEAR(w.total_wealth, wealth, 1e-15);
    EXPECT_NEAR(w.total_amount, amount, 1e-15);
    EXPECT_NEAR(w.total_weight(), amount / wealth, 1e-15);
    EXPECT_THROW(portfolio_weights(s.agents, s.coeffs, s.spec.market,
                                   PolicyState::from_path(s.spec.market, 2.0, 1.0, 0.8, 1.0)),
                 std::out_of_range);
}
