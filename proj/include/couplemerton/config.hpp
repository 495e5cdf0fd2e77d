#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

#include "couplemerton/model.hpp"

namespace couplemerton {

class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string key, const std::string& what)
        : std::runtime_error(what), key_(std::move(key)) {}
    const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

// Flat `key = value` configuration. Lines starting with '#' and text after a
// '#' are comments. Agents use indexed keys gamma.N, rho.N and optional role.N
// (consumer | terminal), N = 1, 2, ...; without role keys the highest index
// is the terminal evaluator.
class RunConfig {
public:
    static bool known_key(std::string_view key) {
        static const char* const kPlain[] = {"r",  "sigma",   "lambda_theta", "sigma_theta",
                                             "theta_bar", "theta0", "T",  "x",
                                             "fixed_y", "n_paths", "n_steps", "seed",
                                             "n_grid"};
        for (const char* k : kPlain) {
            if (key == k) return true;
        }
        for (std::string_view prefix : {"gamma.", "rho.", "role."}) {
            if (key.starts_with(prefix)) {
                const std::string_view idx = key.substr(prefix.size());
                unsigned n = 0;
                const auto [p, ec] = std::from_chars(idx.data(), idx.data() + idx.size(), n);
                return ec == std::errc() && p == idx.data() + idx.size() && n >= 1 && idx.front() != '0';
            }
        }
        return false;
    }

    static RunConfig parse(std::istream& in) {
        RunConfig cfg;
        std::string line;
        int line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
            const std::string body = trim(line);
            if (body.empty()) continue;
            const auto eq = body.find('=');
            if (eq == std::string::npos) {
                throw ConfigError("", "line " + std::to_string(line_no) + ": expected key = value");
            }
            cfg.set(trim(body.substr(0, eq)), trim(body.substr(eq + 1)));
        }
        return cfg;
    }

    static RunConfig parse_string(const std::string& text) {
        std::istringstream in(text);
        return parse(in);
    }

    static RunConfig from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("", "cannot open config file " + path);
        return parse(in);
    }

    void set(const std::string& key, const std::string& value) {
        if (!known_key(key)) throw ConfigError(key, "unknown config key '" + key + "'");
        values_[key] = value;
    }

    void erase(const std::string& key) { values_.erase(key); }
    bool has(const std::string& key) const { return values_.contains(key); }
    const std::map<std::string, std::string>& values() const { return values_; }

    double number(const std::string& key) const {
        const auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError(key, "missing required key '" + key + "'");
        return parse_double(key, it->second);
    }

    double number_or(const std::string& key, double fallback) const {
        return has(key) ? number(key) : fallback;
    }

    std::uint64_t count_or(const std::string& key, std::uint64_t fallback) const {
        const auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        std::uint64_t v = 0;
        const std::string& s = it->second;
        const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || p != s.data() + s.size()) {
            throw ConfigError(key, "key '" + key + "' needs a nonnegative integer, got '" + s + "'");
        }
        return v;
    }

    std::string text(const std::string& key) const {
        const auto it = values_.find(key);
        return it == values_.end() ? std::string() : it->second;
    }

private:
    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) return {};
        const auto e = s.find_last_not_of(" \t\r\n");
        return s.substr(b, e - b + 1);
    }

    static double parse_double(const std::string& key, const std::string& s) {
        double v = 0.0;
        const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v)) {
            throw ConfigError(key, "key '" + key + "' needs a finite number, got '" + s + "'");
        }
        return v;
    }

    std::map<std::string, std::string> values_;
};

// A config resolved into a problem plus run settings.
struct Scenario {
    ProblemSpec spec;
    std::optional<double> fixed_y;  // set: allocate at this level, x = H(y)
    std::size_t n_paths = 100000;
    std::size_t n_steps = 252;
    std::uint64_t seed = 1;
    std::size_t n_grid = 2048;
};

inline Scenario to_scenario(const RunConfig& cfg) {
    Scenario sc;
    MarketParams& m = sc.spec.market;
    m.r = cfg.number("r");
    m.sigma = cfg.number("sigma");
    m.lambda_theta = cfg.number("lambda_theta");
    m.sigma_theta = cfg.number("sigma_theta");
    m.theta_bar = cfg.number("theta_bar");
    m.theta0 = cfg.number("theta0");
    m.horizon_T = cfg.number("T");

    if (cfg.has("x") && cfg.has("fixed_y")) {
        throw ConfigError("fixed_y", "set either x or fixed_y, not both");
    }
    if (cfg.has("fixed_y")) {
        sc.fixed_y = cfg.number("fixed_y");
        if (!(*sc.fixed_y > 0.0)) throw ConfigError("fixed_y", "fixed_y must be positive");
    } else {
        sc.spec.total_wealth_x = cfg.number("x");
    }

    std::size_t n_agents = 0;
    while (cfg.has("gamma." + std::to_string(n_agents + 1)) ||
           cfg.has("rho." + std::to_string(n_agents + 1))) {
        ++n_agents;
    }
    if (n_agents == 0) throw ConfigError("gamma.1", "missing required key 'gamma.1'");
    for (const auto& [key, _] : cfg.values()) {
        for (std::string_view prefix : {"gamma.", "rho.", "role."}) {
            if (key.starts_with(prefix) &&
                std::stoul(key.substr(prefix.size())) > n_agents) {
                throw ConfigError(key, "agent keys must be numbered 1.." + std::to_string(n_agents) +
                                           " without gaps; found '" + key + "'");
            }
        }
    }
    for (std::size_t i = 1; i <= n_agents; ++i) {
        const std::string n = std::to_string(i);
        AgentSpec a{cfg.number("gamma." + n), cfg.number("rho." + n), Role::kConsumer};
        std::string role = cfg.text("role." + n);
        if (role.empty()) role = (i == n_agents) ? "terminal" : "consumer";
        if (role == "terminal") {
            if (i != n_agents) {
                throw ConfigError("role." + n, "the terminal evaluator must be the last agent");
            }
            a.role = Role::kTerminal;
            sc.spec.terminal = a;
        } else if (role == "consumer") {
            sc.spec.consumers.push_back(a);
        } else {
            throw ConfigError("role." + n, "role must be consumer or terminal, got '" + role + "'");
        }
    }

    sc.n_paths = cfg.count_or("n_paths", sc.n_paths);
    sc.n_steps = cfg.count_or("n_steps", sc.n_steps);
    sc.seed = cfg.count_or("seed", sc.seed);
    sc.n_grid = cfg.count_or("n_grid", sc.n_grid);
    if (sc.n_paths == 0) throw ConfigError("n_paths", "n_paths must be at least 1");
    if (sc.n_steps == 0) throw ConfigError("n_steps", "n_steps must be at least 1");
    if (sc.n_grid < 2) throw ConfigError("n_grid", "n_grid must be at least 2");
    return sc;
}

// Shipped default: the baseline market with two consumers (gamma -9, -3), a
// terminal evaluator (gamma -2), rho = 1% each, allocated at level y = 3.
inline constexpr const char* kBaselineConfig = R"(# baseline market, y fixed at 3
r = 0.048
sigma = 0.2
lambda_theta = 0.2712
sigma_theta = 0.0655
theta_bar = 0.9456
theta0 = 0.9456
T = 1
fixed_y = 3

gamma.1 = -9
rho.1 = 0.01
gamma.2 = -3
rho.2 = 0.01
gamma.3 = -2
rho.3 = 0.01
role.3 = terminal

n_paths = 100000
n_steps = 252
seed = 20241018
n_grid = 2048
)";

}  // namespace couplemerton
