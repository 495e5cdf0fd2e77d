#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "couplemerton/errors.hpp"
#include "couplemerton/model.hpp"

namespace couplemerton {

// The conditional moment
//   g(s, theta) = E[ exp( q/2 int theta^2 du + q int theta dW ) | theta_0 = theta ],
//   q = gamma / (1 - gamma),
// is exponential-affine, g = exp(A1 theta^2 / 2 + A2 theta + A3), with
//   A1' = sigma_theta^2 A1^2 - 2 kappa A1 + gamma / (1 - gamma)^2
//   A2' = lambda_theta theta_bar A1 - kappa A2 + sigma_theta^2 A1 A2
//   A3' = lambda_theta theta_bar A2 + sigma_theta^2 / 2 (A1 + A2^2)
// and A(0) = 0. Because theta and the stock share one Brownian motion, the
// exponent's dW term shifts the mean reversion seen by g:
//   kappa = lambda_theta + sigma_theta q.
// kOmitted drops that shift (kappa = lambda_theta). It does not describe the
// model and is kept only so diagnostics can compare the two systems.
enum class CovarianceTerm { kIncluded, kOmitted };

enum class CoefficientSource { kNumerical, kClosedForm };

struct RiccatiParams {
    double source = 0.0;  // gamma / (1 - gamma)^2
    double kappa = 0.0;   // effective mean reversion
    double sigma2 = 0.0;  // sigma_theta^2
    double pull = 0.0;    // lambda_theta * theta_bar
};

inline RiccatiParams riccati_params(double gamma, const MarketParams& market,
                                    CovarianceTerm term = CovarianceTerm::kIncluded) {
    if (!(gamma < 1.0) || gamma == 0.0) {
        throw std::invalid_argument("gamma must be nonzero and below 1");
    }
    const double one_minus = 1.0 - gamma;
    RiccatiParams p;
    p.source = gamma / (one_minus * one_minus);
    p.kappa = market.lambda_theta;
    if (term == CovarianceTerm::kIncluded) p.kappa += market.sigma_theta * gamma / one_minus;
    p.sigma2 = market.sigma_theta * market.sigma_theta;
    p.pull = market.lambda_theta * market.theta_bar;
    return p;
}

using AffineState = std::array<double, 3>;

inline AffineState riccati_rhs(const RiccatiParams& p, const AffineState& a) {
    return {p.sigma2 * a[0] * a[0] - 2.0 * p.kappa * a[0] + p.source,
            p.pull * a[0] - p.kappa * a[1] + p.sigma2 * a[0] * a[1],
            p.pull * a[1] + 0.5 * p.sigma2 * (a[0] + a[1] * a[1])};
}

// Discriminant of the A1 equation, kappa^2 - sigma_theta^2 gamma / (1-gamma)^2.
// A1 stays bounded on [0, inf) iff delta > 0.
inline double delta(double gamma, const MarketParams& market,
                    CovarianceTerm term = CovarianceTerm::kIncluded) {
    const RiccatiParams p = riccati_params(gamma, market, term);
    return p.kappa * p.kappa - p.source * p.sigma2;
}

// Largest gamma in (0, 1] below which delta stays positive; delta > 0 for
// every gamma < 0 regardless.
//
// kIncluded: (1 - gamma) delta = lambda^2 - gamma (lambda - sigma_theta)^2, so
// the threshold is lambda^2 / (lambda - sigma_theta)^2, capped at 1.
// kOmitted: with b = sigma_theta^2 / lambda^2 the root of
// gamma^2 - (2 + b) gamma + 1 is 2 / (2 + b + sqrt((2 + b)^2 - 4)).
inline double gamma_limit(const MarketParams& market,
                          CovarianceTerm term = CovarianceTerm::kIncluded) {
    const double lambda = market.lambda_theta;
    if (!(lambda > 0.0)) throw std::invalid_argument("lambda_theta must be positive");
    if (term == CovarianceTerm::kIncluded) {
        const double gap = lambda - market.sigma_theta;
        if (gap == 0.0) return 1.0;
        return std::min(1.0, lambda * lambda / (gap * gap));
    }
    const double b = market.sigma_theta * market.sigma_theta / (lambda * lambda);
    const double disc = std::max(0.0, (2.0 + b) * (2.0 + b) - 4.0);
    return 2.0 / (2.0 + b + std::sqrt(disc));
}

// A1, A2, A3 on a uniform grid over [0, span]. The derivative arrays hold the
// ODE right-hand side at each node and drive cubic Hermite interpolation in at().
struct AffineCoefficients {
    double agent_gamma = 0.0;
    std::vector<double> grid;
    std::vector<double> A1, A2, A3;
    double delta = 0.0;
    CoefficientSource source = CoefficientSource::kNumerical;
    CovarianceTerm term = CovarianceTerm::kIncluded;
    std::vector<double> dA1, dA2, dA3;
    std::optional<double> blowup_time;

    struct Values {
        double a1 = 0.0, a2 = 0.0, a3 = 0.0;
    };

    std::size_t intervals() const { return grid.size() - 1; }
    double span() const { return grid.back(); }
    double step() const { return grid[1] - grid[0]; }
    Values node(std::size_t k) const { return {A1[k], A2[k], A3[k]}; }

    Values at(double s) const {
        if (s < 0.0 || s > span() * (1.0 + 1e-12)) {
            throw std::out_of_range("time offset outside the coefficient grid");
        }
        const double h = step();
        const std::size_t k =
            std::min(static_cast<std::size_t>(s / h), intervals() - 1);
        const double t = std::clamp((s - grid[k]) / h, 0.0, 1.0);
        if (dA1.empty()) {
            return {std::lerp(A1[k], A1[k + 1], t), std::lerp(A2[k], A2[k + 1], t),
                    std::lerp(A3[k], A3[k + 1], t)};
        }
        const double t2 = t * t, t3 = t2 * t;
        const double h00 = 2 * t3 - 3 * t2 + 1, h10 = t3 - 2 * t2 + t;
        const double h01 = -2 * t3 + 3 * t2, h11 = t3 - t2;
        auto herm = [&](const std::vector<double>& v, const std::vector<double>& dv) {
            return h00 * v[k] + h10 * h * dv[k] + h01 * v[k + 1] + h11 * h * dv[k + 1];
        };
        return {herm(A1, dA1), herm(A2, dA2), herm(A3, dA3)};
    }
};

struct SolveOptions {
    CovarianceTerm term = CovarianceTerm::kIncluded;
    double blowup_bound = 1e10;
    // Return the coefficients up to the last finite node instead of throwing;
    // the blowup time is then stored in AffineCoefficients::blowup_time.
    bool truncate_at_blowup = false;
};

namespace detail {

inline std::vector<double> uniform_grid(double span, std::size_t n_intervals) {
    std::vector<double> grid(n_intervals + 1);
    for (std::size_t k = 0; k <= n_intervals; ++k) {
        grid[k] = span * static_cast<double>(k) / static_cast<double>(n_intervals);
    }
    return grid;
}

inline void fill_derivatives(AffineCoefficients& c, const RiccatiParams& p) {
    const std::size_t n = c.grid.size();
    c.dA1.resize(n);
    c.dA2.resize(n);
    c.dA3.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
        const AffineState d = riccati_rhs(p, {c.A1[k], c.A2[k], c.A3[k]});
        c.dA1[k] = d[0];
        c.dA2[k] = d[1];
        c.dA3[k] = d[2];
    }
}

// First time A1 reaches infinity when delta < 0.
inline double pole_time(const RiccatiParams& p, double disc) {
    const double sd = std::sqrt(-disc);
    return (std::numbers::pi - std::atan2(sd, p.kappa)) / sd;
}

}  // namespace detail

// Classical RK4 on n_grid uniform intervals of [0, span_S].
inline AffineCoefficients solve_system(double gamma, const MarketParams& market, double span_S,
                                       std::size_t n_grid, const SolveOptions& opts = {}) {
    if (!(span_S > 0.0)) throw std::invalid_argument("span_S must be positive");
    if (n_grid < 2) throw std::invalid_argument("n_grid must be at least 2");
    const RiccatiParams p = riccati_params(gamma, market, opts.term);

    AffineCoefficients c;
    c.agent_gamma = gamma;
    c.delta = delta(gamma, market, opts.term);
    c.source = CoefficientSource::kNumerical;
    c.term = opts.term;
    c.grid = detail::uniform_grid(span_S, n_grid);
    c.A1.assign(n_grid + 1, 0.0);
    c.A2.assign(n_grid + 1, 0.0);
    c.A3.assign(n_grid + 1, 0.0);

    const double h = span_S / static_cast<double>(n_grid);
    AffineState a{0.0, 0.0, 0.0};
    auto axpy = [](const AffineState& x, double w, const AffineState& d) {
        return AffineState{x[0] + w * d[0], x[1] + w * d[1], x[2] + w * d[2]};
    };
    for (std::size_t k = 0; k < n_grid; ++k) {
        const AffineState k1 = riccati_rhs(p, a);
        const AffineState k2 = riccati_rhs(p, axpy(a, 0.5 * h, k1));
        const AffineState k3 = riccati_rhs(p, axpy(a, 0.5 * h, k2));
        const AffineState k4 = riccati_rhs(p, axpy(a, h, k3));
        for (int i = 0; i < 3; ++i) a[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);

        if (!std::isfinite(a[0]) || std::abs(a[0]) > opts.blowup_bound ||
            !std::isfinite(a[1]) || !std::isfinite(a[2])) {
            const double when =
                c.delta < 0.0 ? detail::pole_time(p, c.delta) : c.grid[k + 1];
            if (opts.truncate_at_blowup && k >= 2) {
                c.grid.resize(k + 1);
                c.A1.resize(k + 1);
                c.A2.resize(k + 1);
                c.A3.resize(k + 1);
                c.blowup_time = when;
                break;
            }
            throw SingularityDetected("A1 blows up at s ~ " + std::to_string(when) +
                                          " before the requested span " + std::to_string(span_S),
                                      when);
        }
        c.A1[k + 1] = a[0];
        c.A2[k + 1] = a[1];
        c.A3[k + 1] = a[2];
    }
    detail::fill_derivatives(c, p);
    return c;
}

// Closed-form A1 with A1(0) = 0. With w = sqrt(|delta|) s:
//   delta > 0:  A1 = c tanh(w) / (sqrt(delta)  + kappa tanh(w))
//   delta = 0:  A1 = c s / (1 + kappa s)
//   delta < 0:  A1 = c sin(w) / (sqrt(-delta) cos(w) + kappa sin(w))
// where c = gamma / (1 - gamma)^2. The last branch has a pole at
// w = pi - atan2(sqrt(-delta), kappa).
inline double a1_closed(double gamma, const MarketParams& market, double s,
                        CovarianceTerm term = CovarianceTerm::kIncluded) {
    if (s < 0.0) throw std::invalid_argument("s must be nonnegative");
    const RiccatiParams p = riccati_params(gamma, market, term);
    const double disc = p.kappa * p.kappa - p.source * p.sigma2;
    if (disc > 0.0) {
        const double sd = std::sqrt(disc);
        const double th = std::tanh(sd * s);
        return p.source * th / (sd + p.kappa * th);
    }
    if (disc == 0.0) return p.source * s / (1.0 + p.kappa * s);
    const double pole = detail::pole_time(p, disc);
    if (s >= pole) {
        throw SingularityDetected("closed-form A1 has a pole at s = " + std::to_string(pole),
                                  pole);
    }
    const double sd = std::sqrt(-disc);
    const double w = sd * s;
    return p.source * std::sin(w) / (sd * std::cos(w) + p.kappa * std::sin(w));
}

// A1 from the closed form at every RK stage, A2 and A3 integrated against it.
inline AffineCoefficients tabulate_closed_form(double gamma, const MarketParams& market,
                                               double span_S, std::size_t n_grid,
                                               CovarianceTerm term = CovarianceTerm::kIncluded) {
    if (!(span_S > 0.0)) throw std::invalid_argument("span_S must be positive");
    if (n_grid < 2) throw std::invalid_argument("n_grid must be at least 2");
    const RiccatiParams p = riccati_params(gamma, market, term);
    AffineCoefficients c;
    c.agent_gamma = gamma;
    c.delta = delta(gamma, market, term);
    c.source = CoefficientSource::kClosedForm;
    c.term = term;
    c.grid = detail::uniform_grid(span_S, n_grid);
    c.A1.assign(n_grid + 1, 0.0);
    c.A2.assign(n_grid + 1, 0.0);
    c.A3.assign(n_grid + 1, 0.0);

    const double h = span_S / static_cast<double>(n_grid);
    auto rhs23 = [&](double a1, double a2) {
        return std::array<double, 2>{p.pull * a1 - p.kappa * a2 + p.sigma2 * a1 * a2,
                                     p.pull * a2 + 0.5 * p.sigma2 * (a1 + a2 * a2)};
    };
    double a2 = 0.0, a3 = 0.0;
    for (std::size_t k = 0; k < n_grid; ++k) {
        const double s0 = c.grid[k];
        const double a1_0 = a1_closed(gamma, market, s0, term);
        const double a1_m = a1_closed(gamma, market, s0 + 0.5 * h, term);
        const double a1_1 = a1_closed(gamma, market, s0 + h, term);
        const auto k1 = rhs23(a1_0, a2);
        const auto k2 = rhs23(a1_m, a2 + 0.5 * h * k1[0]);
        const auto k3 = rhs23(a1_m, a2 + 0.5 * h * k2[0]);
        const auto k4 = rhs23(a1_1, a2 + h * k3[0]);
        a2 += h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]);
        a3 += h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]);
        c.A1[k + 1] = a1_1;
        c.A2[k + 1] = a2;
        c.A3[k + 1] = a3;
    }
    detail::fill_derivatives(c, p);
    return c;
}

// Max absolute ODE residual at each node. Derivatives are second-order finite
// differences of the stored values (centered inside, one-sided at the ends).
inline std::vector<double> node_residuals(const AffineCoefficients& coeffs, double gamma,
                                          const MarketParams& market) {
    const std::size_t n = coeffs.grid.size();
    if (n < 3) throw std::invalid_argument("residual needs at least 3 grid points");
    const RiccatiParams p = riccati_params(gamma, market, coeffs.term);
    const double h = coeffs.step();
    auto fd = [&](const std::vector<double>& v, std::size_t k) {
        if (k == 0) return (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h);
        if (k == n - 1) return (3.0 * v[k] - 4.0 * v[k - 1] + v[k - 2]) / (2.0 * h);
        return (v[k + 1] - v[k - 1]) / (2.0 * h);
    };
    std::vector<double> out(n);
    for (std::size_t k = 0; k < n; ++k) {
        const AffineState rhs = riccati_rhs(p, {coeffs.A1[k], coeffs.A2[k], coeffs.A3[k]});
        out[k] = std::max({std::abs(fd(coeffs.A1, k) - rhs[0]), std::abs(fd(coeffs.A2, k) - rhs[1]),
                           std::abs(fd(coeffs.A3, k) - rhs[2])});
    }
    return out;
}

// Max residual over interior nodes.
inline double residual(const AffineCoefficients& coeffs, double gamma,
                       const MarketParams& market) {
    const std::vector<double> r = node_residuals(coeffs, gamma, market);
    return *std::max_element(r.begin() + 1, r.end() - 1);
}

// Deterministic part of the log of H per unit of horizon,
// (r gamma - rho) / (1 - gamma).
inline double discount_exponent(const AgentSpec& agent, const MarketParams& market) {
    return (market.r * agent.gamma - agent.rho) / (1.0 - agent.gamma);
}

inline double affine_exponent(const AffineCoefficients::Values& v, double theta) {
    return 0.5 * v.a1 * theta * theta + v.a2 * theta + v.a3;
}

// H(theta, tau) = exp(A1 theta^2/2 + A2 theta + A3 + (r gamma - rho) tau / (1 - gamma)):
// the time-0 price of I(y zeta_tau) per unit y^{1/(gamma-1)}.
inline double h_integrand(const AffineCoefficients& coeffs, const AgentSpec& agent,
                          const MarketParams& market, double theta, double tau) {
    return std::exp(affine_exponent(coeffs.at(tau), theta) +
                    discount_exponent(agent, market) * tau);
}

namespace detail {

// Simpson's rule on each grid interval, midpoints from the Hermite interpolant.
template <class F>
double integrate_horizon(const AffineCoefficients& coeffs, double upper, F&& f) {
    if (upper < 0.0 || upper > coeffs.span() * (1.0 + 1e-12)) {
        throw std::out_of_range("integration horizon outside the coefficient grid");
    }
    double total = 0.0;
    double f_left = f(0.0, coeffs.node(0));
    for (std::size_t k = 0; k < coeffs.intervals(); ++k) {
        const double a = coeffs.grid[k];
        if (a >= upper) break;
        const bool full = coeffs.grid[k + 1] <= upper;
        const double b = full ? coeffs.grid[k + 1] : upper;
        const double mid = 0.5 * (a + b);
        const double f_mid = f(mid, coeffs.at(mid));
        const double f_right = full ? f(b, coeffs.node(k + 1)) : f(b, coeffs.at(b));
        total += (b - a) / 6.0 * (f_left + 4.0 * f_mid + f_right);
        f_left = f_right;
    }
    return total;
}

}  // namespace detail

// int_0^upper H(theta, s) ds
inline double horizon_integral(const AffineCoefficients& coeffs, const AgentSpec& agent,
                               const MarketParams& market, double theta, double upper) {
    const double d = discount_exponent(agent, market);
    return detail::integrate_horizon(coeffs, upper, [&](double s, const auto& v) {
        return std::exp(affine_exponent(v, theta) + d * s);
    });
}

// Consumers: int_0^T H(theta0, s) ds. Terminal evaluator: H(theta0, T).
inline double s_value(const AffineCoefficients& coeffs, const AgentSpec& agent,
                      const MarketParams& market) {
    const double T = market.horizon_T;
    if (coeffs.span() < T * (1.0 - 1e-12)) {
        throw std::invalid_argument("coefficients do not cover the horizon");
    }
    if (agent.is_consumer()) return horizon_integral(coeffs, agent, market, market.theta0, T);
    return h_integrand(coeffs, agent, market, market.theta0, T);
}

inline double density_p(const AffineCoefficients& coeffs, const AgentSpec& agent,
                        const MarketParams& market, double theta_t, double t, double tau) {
    const double remaining = market.horizon_T - t;
    if (t < 0.0 || !(remaining > 0.0)) throw std::out_of_range("t must lie in [0, T)");
    if (tau < 0.0 || tau > remaining * (1.0 + 1e-12)) {
        throw std::out_of_range("tau must lie in [0, T - t]");
    }
    return h_integrand(coeffs, agent, market, theta_t, tau) /
           horizon_integral(coeffs, agent, market, theta_t, remaining);
}

// Sensitivity d/dtheta log of the agent's wealth factor at (theta_t, t):
// consumers average A1(tau) theta + A2(tau) against p(theta_t, t, tau); the
// terminal evaluator uses tau = T - t.
inline double hedge_integral(const AffineCoefficients& coeffs, const AgentSpec& agent,
                             const MarketParams& market, double theta_t, double t) {
    const double remaining = market.horizon_T - t;
    if (t < 0.0 || remaining < 0.0) throw std::out_of_range("t must lie in [0, T]");
    if (!agent.is_consumer()) {
        const auto v = coeffs.at(remaining);
        return v.a1 * theta_t + v.a2;
    }
    if (!(remaining > 0.0)) throw std::out_of_range("consumer hedge needs t < T");
    const double d = discount_exponent(agent, market);
    const double weighted =
        detail::integrate_horizon(coeffs, remaining, [&](double s, const auto& v) {
            return std::exp(affine_exponent(v, theta_t) + d * s) * (v.a1 * theta_t + v.a2);
        });
    return weighted / horizon_integral(coeffs, agent, market, theta_t, remaining);
}

}  // namespace couplemerton
