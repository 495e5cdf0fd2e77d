#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

namespace couplemerton {

// Single-stock market with constant short rate and an Ornstein-Uhlenbeck
// market price of risk
//   d theta = -lambda_theta (theta - theta_bar) dt - sigma_theta dW,
// where W is the stock's Brownian motion (perfect negative correlation).
struct MarketParams {
    double r = 0.0;
    double sigma = 1.0;
    double lambda_theta = 1.0;
    double sigma_theta = 0.0;
    double theta_bar = 0.0;
    double theta0 = 0.0;
    double horizon_T = 1.0;

    // Stock drift implied by the market price of risk.
    double drift(double theta) const { return r + sigma * theta; }
};

enum class Role { kConsumer, kTerminal };

// CRRA agent, U(c) = c^gamma / gamma, relative risk aversion 1 - gamma.
struct AgentSpec {
    double gamma = -1.0;
    double rho = 0.0;
    Role role = Role::kConsumer;

    bool is_consumer() const { return role == Role::kConsumer; }
};

inline AgentSpec consumer(double gamma, double rho) { return {gamma, rho, Role::kConsumer}; }
inline AgentSpec terminal(double gamma, double rho) { return {gamma, rho, Role::kTerminal}; }

// Exponent of the inverse marginal utility, I(v) = v^{1/(gamma-1)}.
inline double inverse_marginal_exponent(double gamma) { return 1.0 / (gamma - 1.0); }

inline double inverse_marginal(const AgentSpec& agent, double v) {
    return std::pow(v, inverse_marginal_exponent(agent.gamma));
}

inline double crra_utility(double gamma, double c) { return std::pow(c, gamma) / gamma; }

struct ProblemSpec {
    MarketParams market;
    std::vector<AgentSpec> consumers;
    std::optional<AgentSpec> terminal;
    double total_wealth_x = 0.0;

    // Consumers in order, then the terminal evaluator if present.
    std::vector<AgentSpec> agents() const {
        std::vector<AgentSpec> all = consumers;
        if (terminal) all.push_back(*terminal);
        return all;
    }
};

// Market block used for the worked numbers throughout the project. theta0 is
// started at the long-run mean and sigma = 0.2; neither enters the allocation
// except through theta0.
inline MarketParams baseline_market() {
    MarketParams m;
    m.r = 0.048;
    m.sigma = 0.2;
    m.lambda_theta = 0.2712;
    m.sigma_theta = 0.0655;
    m.theta_bar = 0.9456;
    m.theta0 = 0.9456;
    m.horizon_T = 1.0;
    return m;
}

// Two consumers with gamma -9 and -3, terminal evaluator with gamma -2, all
// discounting at 1% per year.
inline ProblemSpec baseline_problem(double x = 1.0) {
    ProblemSpec spec;
    spec.market = baseline_market();
    spec.consumers = {consumer(-9.0, 0.01), consumer(-3.0, 0.01)};
    spec.terminal = terminal(-2.0, 0.01);
    spec.total_wealth_x = x;
    return spec;
}

}  // namespace couplemerton
