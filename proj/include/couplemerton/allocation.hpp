#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "couplemerton/errors.hpp"
#include "couplemerton/model.hpp"
#include "couplemerton/riccati.hpp"

namespace couplemerton {

// One agent's spending function H_i(y) = y^{1/(gamma_i - 1)} s_i.
struct HTerm {
    double gamma = -1.0;
    double s = 1.0;
    bool consumer = true;

    double exponent() const { return inverse_marginal_exponent(gamma); }
    double value(double y) const { return std::pow(y, exponent()) * s; }
    double derivative(double y) const { return exponent() * std::pow(y, exponent() - 1.0) * s; }
};

// H = sum_i H_i, strictly decreasing on (0, inf) from +inf to 0 whenever every
// s_i > 0.
class HFamily {
public:
    HFamily() = default;
    explicit HFamily(std::vector<HTerm> terms) : terms_(std::move(terms)) {
        for (const HTerm& t : terms_) {
            if (!(t.s > 0.0) || !std::isfinite(t.s)) throw NonFinite("s_i must be positive and finite");
            if (!(t.gamma < 1.0) || t.gamma == 0.0) {
                throw std::invalid_argument("gamma must be nonzero and below 1");
            }
        }
    }

    const std::vector<HTerm>& terms() const { return terms_; }
    std::size_t size() const { return terms_.size(); }

    double operator()(double y) const {
        if (!(y > 0.0)) throw std::invalid_argument("y must be positive");
        double total = 0.0;
        for (const HTerm& t : terms_) total += t.value(y);
        return total;
    }

    double derivative(double y) const {
        double total = 0.0;
        for (const HTerm& t : terms_) total += t.derivative(y);
        return total;
    }

private:
    std::vector<HTerm> terms_;
};

struct FamilyOptions {
    std::size_t n_grid = 2048;
    CovarianceTerm term = CovarianceTerm::kIncluded;
};

// Coefficients for every agent of the problem (consumers first) over [0, T].
inline std::vector<AffineCoefficients> solve_agents(const ProblemSpec& spec,
                                                    const FamilyOptions& opts = {}) {
    std::vector<AffineCoefficients> out;
    for (const AgentSpec& a : spec.agents()) {
        out.push_back(solve_system(a.gamma, spec.market, spec.market.horizon_T, opts.n_grid,
                                   {.term = opts.term}));
    }
    return out;
}

inline HFamily make_family(const ProblemSpec& spec, const std::vector<AffineCoefficients>& coeffs) {
    const std::vector<AgentSpec> agents = spec.agents();
    if (coeffs.size() != agents.size()) throw std::invalid_argument("one coefficient set per agent");
    std::vector<HTerm> terms;
    for (std::size_t i = 0; i < agents.size(); ++i) {
        terms.push_back({agents[i].gamma, s_value(coeffs[i], agents[i], spec.market),
                         agents[i].is_consumer()});
    }
    return HFamily(std::move(terms));
}

inline HFamily make_family(const ProblemSpec& spec, const FamilyOptions& opts = {}) {
    return make_family(spec, solve_agents(spec, opts));
}

inline double h_of_y(const HFamily& family, double y) { return family(y); }

// Y = H^{-1}. Brackets by doubling/halving from y = 1, bisects in log y to a
// relative width of 1e-12, then polishes with at most five guarded Newton steps.
inline double invert_y(const HFamily& family, double x) {
    if (!(x > 0.0) || !std::isfinite(x)) throw std::invalid_argument("x must be positive");
    constexpr double kLimit = 1e300;
    double lo = 1.0, hi = 1.0;
    if (family(1.0) > x) {
        while (family(hi) > x) {
            lo = hi;
            hi *= 2.0;
            if (hi > kLimit) throw NonFinite("bracket for Y(x) exceeded 1e300");
        }
    } else {
        while (family(lo) < x) {
            hi = lo;
            lo *= 0.5;
            if (lo < 1.0 / kLimit) throw NonFinite("bracket for Y(x) fell below 1e-300");
        }
    }
    if (lo == hi) return lo;

    while (hi / lo - 1.0 > 1e-12) {
        const double mid = std::sqrt(lo * hi);
        if (mid <= lo || mid >= hi) break;
        if (family(mid) > x) lo = mid;
        else hi = mid;
    }
    double y = std::sqrt(lo * hi);
    double err = std::abs(family(y) - x);
    for (int i = 0; i < 5 && err > 0.0; ++i) {
        const double next = y - (family(y) - x) / family.derivative(y);
        if (!(next > 0.0) || !std::isfinite(next)) break;
        const double next_err = std::abs(family(next) - x);
        if (next_err >= err) break;
        y = next;
        err = next_err;
    }
    return y;
}

struct AllocationResult {
    // Unset when x = 0: every allocation is then zero and no level exists.
    std::optional<double> y;
    std::vector<double> x_alloc;  // consumers in order, terminal evaluator last
    double csp = 0.0;
    std::vector<double> s_values;
    double residual = 0.0;  // |sum x_alloc - x|
    double total_x = 0.0;
};

// Split at a given level y.
inline AllocationResult allocate_at_level(const HFamily& family, double y) {
    if (!(y > 0.0)) throw std::invalid_argument("y must be positive");
    AllocationResult res;
    res.y = y;
    double consumed = 0.0, total = 0.0;
    for (const HTerm& t : family.terms()) {
        const double xi = t.value(y);
        res.x_alloc.push_back(xi);
        res.s_values.push_back(t.s);
        total += xi;
        if (t.consumer) consumed += xi;
    }
    res.total_x = total;
    res.csp = consumed / total;
    return res;
}

inline AllocationResult allocate(const HFamily& family, double x) {
    if (x == 0.0) {
        AllocationResult res;
        res.x_alloc.assign(family.size(), 0.0);
        for (const HTerm& t : family.terms()) res.s_values.push_back(t.s);
        return res;
    }
    AllocationResult res = allocate_at_level(family, invert_y(family, x));
    res.residual = std::abs(res.total_x - x);
    res.csp *= res.total_x / x;
    res.total_x = x;
    return res;
}

inline AllocationResult allocate(const ProblemSpec& spec, const FamilyOptions& opts = {}) {
    if (!(spec.total_wealth_x >= 0.0)) throw std::invalid_argument("x must be nonnegative");
    return allocate(make_family(spec, opts), spec.total_wealth_x);
}

inline double csp(const ProblemSpec& spec, const FamilyOptions& opts = {}) {
    if (!(spec.total_wealth_x > 0.0)) throw std::invalid_argument("csp needs x > 0");
    return allocate(spec, opts).csp;
}

// R(x) = -H(y) / (y H'(y)) at y = Y(x), i.e.
//   sum_i H_i(y) / sum_i H_i(y) / (1 - gamma_i).
inline double relative_risk_aversion(const HFamily& family, double x) {
    if (family.size() == 0) throw std::invalid_argument("empty family");
    const double g0 = family.terms().front().gamma;
    if (std::all_of(family.terms().begin(), family.terms().end(),
                    [&](const HTerm& t) { return t.gamma == g0; })) {
        return 1.0 - g0;
    }
    const double y = invert_y(family, x);
    double num = 0.0, den = 0.0;
    for (const HTerm& t : family.terms()) {
        const double w = t.value(y);
        num += w;
        den += w / (1.0 - t.gamma);
    }
    return num / den;
}

// CSP at each theta0 of the grid, total wealth held at spec.total_wealth_x.
// The Riccati coefficients do not depend on theta0 and are solved once.
inline std::vector<std::pair<double, double>> csp_theta_sensitivity(
    const ProblemSpec& spec, const std::vector<double>& theta_grid, const FamilyOptions& opts = {}) {
    const std::vector<AffineCoefficients> coeffs = solve_agents(spec, opts);
    std::vector<std::pair<double, double>> table;
    for (double theta0 : theta_grid) {
        ProblemSpec shifted = spec;
        shifted.market.theta0 = theta0;
        table.emplace_back(theta0, allocate(make_family(shifted, coeffs), spec.total_wealth_x).csp);
    }
    return table;
}

struct TerminalSplit {
    double epsilon = 0.5;
    double rest = 0.5;  // 1 - epsilon, without cancellation near epsilon = 1
    double value = 0.0;
};

// sup over eps in [0, 1] of b4 U4(eps x) + b5 U5((1 - eps) x) for CRRA U4, U5.
// The first-order condition b4 U4'(eps x) = b5 U5'((1 - eps) x) is monotone in
// u = logit(eps); it is solved by bisection on u.
inline TerminalSplit terminal_split(const AgentSpec& u4, const AgentSpec& u5, double x_T,
                                    double b4, double b5) {
    if (!(x_T > 0.0)) throw std::invalid_argument("x_T must be positive");
    if (!(b4 > 0.0) || !(b5 > 0.0)) throw std::invalid_argument("discount factors must be positive");
    const double g4 = u4.gamma, g5 = u5.gamma;
    const double offset = std::log(b4) - std::log(b5) + (g4 - g5) * std::log(x_T);
    auto foc = [&](double u) {
        const double log_eps = -std::log1p(std::exp(-u));
        const double log_rest = -std::log1p(std::exp(u));
        return offset + (g4 - 1.0) * log_eps - (g5 - 1.0) * log_rest;
    };
    double lo = -1.0, hi = 1.0;
    while (foc(lo) < 0.0) {
        hi = lo;
        lo *= 2.0;
    }
    while (foc(hi) > 0.0) {
        lo = hi;
        hi *= 2.0;
    }
    for (int i = 0; i < 400 && hi - lo > 1e-15 * std::max(1.0, std::abs(lo)); ++i) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;
        if (foc(mid) > 0.0) lo = mid;
        else hi = mid;
    }
    const double u = 0.5 * (lo + hi);
    TerminalSplit out;
    out.epsilon = 1.0 / (1.0 + std::exp(-u));
    out.rest = 1.0 / (1.0 + std::exp(u));
    out.value = b4 * crra_utility(g4, out.epsilon * x_T) + b5 * crra_utility(g5, out.rest * x_T);
    return out;
}

}  // namespace couplemerton
