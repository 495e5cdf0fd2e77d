#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "couplemerton/model.hpp"
#include "couplemerton/riccati.hpp"

namespace couplemerton {

// Y_t = (y Z_t)^{-1} e^{r t}; every optimal control at t is a function of
// (t, theta_t, Y_t).
struct PolicyState {
    double t = 0.0;
    double theta_t = 0.0;
    double Y_t = 1.0;
    double mu_t = 0.0;

    static PolicyState from_path(const MarketParams& market, double y, double t, double theta,
                                 double Z) {
        if (!(y > 0.0) || !(Z > 0.0)) throw std::invalid_argument("y and Z must be positive");
        return {t, theta, std::exp(market.r * t) / (y * Z), market.drift(theta)};
    }

    static PolicyState initial(const MarketParams& market, double y) {
        return from_path(market, y, 0.0, market.theta0, 1.0);
    }
};

// zeta_t = Z_t e^{-r t} e^{rho t}
inline double state_price(const AgentSpec& agent, const MarketParams& market, double Z, double t) {
    return Z * std::exp((agent.rho - market.r) * t);
}

// c_t = I(y zeta_t) = (y zeta_t)^{1/(gamma-1)}
inline double consumption(const AgentSpec& agent, double y, double zeta) {
    if (!(y > 0.0) || !(zeta > 0.0)) throw std::invalid_argument("y and zeta must be positive");
    return inverse_marginal(agent, y * zeta);
}

// Optimal wealth at t. With c_t = I(y zeta_t),
//   consumer:  X_t = c_t int_0^{T-t} H(theta_t, s) ds
//   terminal:  X_t = c_t H(theta_t, T - t)
// so X_0 reproduces y^{1/(gamma-1)} s_i and the terminal X_T = I(y zeta_T).
inline double wealth_t(const AgentSpec& agent, const AffineCoefficients& coeffs,
                       const MarketParams& market, const PolicyState& state) {
    const double remaining = market.horizon_T - state.t;
    if (state.t < 0.0 || remaining < -1e-12 * market.horizon_T) {
        throw std::out_of_range("t must lie in [0, T]");
    }
    if (!(state.Y_t > 0.0)) throw std::invalid_argument("Y_t must be positive");
    const double level = std::exp(agent.rho * state.t) / state.Y_t;
    const double c = inverse_marginal(agent, level);
    const double tau = std::max(0.0, remaining);
    if (agent.is_consumer()) {
        if (tau == 0.0) return 0.0;
        return c * horizon_integral(coeffs, agent, market, state.theta_t, tau);
    }
    return c * h_integrand(coeffs, agent, market, state.theta_t, tau);
}

// Risky-asset positions. weight[i] is the fraction of agent i's wealth held in
// the stock, split into
//   myopic  = (mu - r) / ((1 - gamma) sigma^2)
//   hedging = -(sigma_theta / sigma) hedge_integral
// amount[i] = weight[i] * wealth[i] is the currency amount; totals add up the
// agents' positions.
struct PortfolioWeights {
    std::vector<double> myopic;
    std::vector<double> hedging;
    std::vector<double> weight;
    std::vector<double> wealth;
    std::vector<double> amount;
    double total_wealth = 0.0;
    double total_amount = 0.0;

    double total_weight() const { return total_amount / total_wealth; }
};

inline PortfolioWeights portfolio_weights(const std::vector<AgentSpec>& agents,
                                          const std::vector<AffineCoefficients>& coeffs,
                                          const MarketParams& market, const PolicyState& state) {
    if (agents.size() != coeffs.size()) throw std::invalid_argument("one coefficient set per agent");
    if (!(state.t < market.horizon_T)) throw std::out_of_range("t must lie in [0, T)");
    PortfolioWeights out;
    const double excess = (state.mu_t - market.r) / (market.sigma * market.sigma);
    for (std::size_t i = 0; i < agents.size(); ++i) {
        const AgentSpec& a = agents[i];
        const double myopic = excess / (1.0 - a.gamma);
        const double hedge =
            market.sigma_theta == 0.0
                ? 0.0
                : -(market.sigma_theta / market.sigma) *
                      hedge_integral(coeffs[i], a, market, state.theta_t, state.t);
        const double x = wealth_t(a, coeffs[i], market, state);
        out.myopic.push_back(myopic);
        out.hedging.push_back(hedge);
        out.weight.push_back(myopic + hedge);
        out.wealth.push_back(x);
        out.amount.push_back((myopic + hedge) * x);
        out.total_wealth += x;
        out.total_amount += (myopic + hedge) * x;
    }
    return out;
}

}  // namespace couplemerton
