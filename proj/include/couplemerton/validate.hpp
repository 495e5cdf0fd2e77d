#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "couplemerton/model.hpp"
#include "couplemerton/riccati.hpp"

namespace couplemerton {

enum class Severity { kError, kWarning };

struct Violation {
    Severity severity = Severity::kError;
    std::string field;
    std::string message;
};

inline bool has_errors(const std::vector<Violation>& violations) {
    for (const auto& v : violations) {
        if (v.severity == Severity::kError) return true;
    }
    return false;
}

inline std::vector<Violation> validate(const ProblemSpec& spec) {
    std::vector<Violation> out;
    auto error = [&](std::string field, std::string msg) {
        out.push_back({Severity::kError, std::move(field), std::move(msg)});
    };

    const MarketParams& m = spec.market;
    const std::pair<const char*, double> finite_fields[] = {
        {"r", m.r},         {"sigma", m.sigma},         {"lambda_theta", m.lambda_theta},
        {"sigma_theta", m.sigma_theta}, {"theta_bar", m.theta_bar}, {"theta0", m.theta0},
        {"T", m.horizon_T}, {"x", spec.total_wealth_x}};
    for (const auto& [name, value] : finite_fields) {
        if (!std::isfinite(value)) error(name, std::string(name) + " must be finite");
    }
    if (!(m.sigma > 0.0)) error("sigma", "sigma must be positive");
    if (!(m.lambda_theta > 0.0)) error("lambda_theta", "lambda_theta must be positive");
    if (!(m.sigma_theta >= 0.0)) error("sigma_theta", "sigma_theta must be nonnegative");
    if (!(m.horizon_T > 0.0)) error("T", "T must be positive");
    if (!(spec.total_wealth_x >= 0.0)) error("x", "x must be nonnegative");
    if (spec.consumers.empty()) error("consumers", "at least one consumer is required");
    if (!spec.terminal) error("terminal", "exactly one terminal evaluator is required");

    const std::vector<AgentSpec> agents = spec.agents();
    const bool market_ok = !has_errors(out);
    for (std::size_t i = 0; i < agents.size(); ++i) {
        const AgentSpec& a = agents[i];
        const std::string tag = "agent " + std::to_string(i + 1);
        const bool expect_consumer = i < spec.consumers.size();
        if (a.is_consumer() != expect_consumer) error(tag, tag + " has the wrong role");
        if (!std::isfinite(a.gamma) || !std::isfinite(a.rho)) {
            error(tag, tag + ": gamma and rho must be finite");
            continue;
        }
        if (a.gamma == 0.0) {
            error(tag, tag + ": gamma must be nonzero");
            continue;
        }
        if (!(a.gamma < 1.0)) {
            error(tag, tag + ": gamma must be below 1");
            continue;
        }
        if (market_ok) {
            const double d = delta(a.gamma, m);
            if (!(d > 0.0)) {
                out.push_back({Severity::kWarning, tag,
                               tag + ": delta = " + std::to_string(d) +
                                   " <= 0, A1 may blow up inside [0, T]; the numerical solver "
                                   "with singularity detection is used"});
            }
        }
    }
    return out;
}

}  // namespace couplemerton
