#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "couplemerton/model.hpp"

namespace couplemerton {

// Anything that can hand out path p of an ensemble of (theta, Z) paths on a
// uniform grid of n_steps intervals.
template <class S>
concept PathSource = requires(const S& s, std::size_t p, std::span<double> buf) {
    { s.n_paths() } -> std::convertible_to<std::size_t>;
    { s.n_steps() } -> std::convertible_to<std::size_t>;
    { s.dt() } -> std::convertible_to<double>;
    { s.antithetic() } -> std::convertible_to<bool>;
    s.fill(p, buf, buf);
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace detail

// Regenerates any path on demand from (seed, path index), so results do not
// depend on evaluation order and nothing of size n_paths x n_steps is stored.
//
// theta moves with its exact OU transition. The stock increment dW and the OU
// noise int exp(-lambda (t_{k+1} - u)) dW_u are drawn jointly Gaussian, so the
// pair is exact at the grid points. Z uses the left-point exponential update
//   Z_{k+1} = Z_k exp(-theta_k dW_k - theta_k^2 dt / 2),
// which keeps E[Z_{k+1} | F_k] = Z_k exactly.
//
// With antithetic set, paths 2j and 2j+1 use negated normals; an odd last
// path then has no partner, so antithetic is only honoured for even n_paths.
class PathSimulator {
public:
    PathSimulator(const MarketParams& market, std::size_t n_paths, std::size_t n_steps,
                  std::uint64_t seed, bool antithetic = true)
        : market_(market),
          n_paths_(n_paths),
          n_steps_(n_steps),
          seed_(seed),
          antithetic_(antithetic && n_paths % 2 == 0) {
        if (n_paths == 0) throw std::invalid_argument("n_paths must be at least 1");
        if (n_steps == 0) throw std::invalid_argument("n_steps must be at least 1");
        for (double v : {market.r, market.sigma, market.lambda_theta, market.sigma_theta,
                         market.theta_bar, market.theta0, market.horizon_T}) {
            if (!std::isfinite(v)) throw std::invalid_argument("market parameters must be finite");
        }
        if (!(market.lambda_theta > 0.0)) throw std::invalid_argument("lambda_theta must be positive");
        if (!(market.horizon_T > 0.0)) throw std::invalid_argument("T must be positive");

        dt_ = market.horizon_T / static_cast<double>(n_steps);
        sqrt_dt_ = std::sqrt(dt_);
        const double lam = market.lambda_theta;
        decay_ = std::exp(-lam * dt_);
        const double var_noise = -std::expm1(-2.0 * lam * dt_) / (2.0 * lam);
        const double cov = -std::expm1(-lam * dt_) / lam;
        slope_ = cov / dt_;
        resid_sd_ = std::sqrt(std::max(0.0, var_noise - cov * cov / dt_));
    }

    std::size_t n_paths() const { return n_paths_; }
    std::size_t n_steps() const { return n_steps_; }
    double dt() const { return dt_; }
    bool antithetic() const { return antithetic_; }
    std::uint64_t seed() const { return seed_; }
    const MarketParams& market() const { return market_; }
    double time(std::size_t k) const { return dt_ * static_cast<double>(k); }

    // Writes n_steps + 1 values of theta and Z for path p.
    void fill(std::size_t p, std::span<double> theta, std::span<double> z) const {
        if (p >= n_paths_) throw std::out_of_range("path index out of range");
        if (theta.size() < n_steps_ + 1 || z.size() < n_steps_ + 1) {
            throw std::invalid_argument("path buffers too short");
        }
        const std::uint64_t stream = antithetic_ ? p / 2 : p;
        const double sign = (antithetic_ && p % 2 == 1) ? -1.0 : 1.0;
        std::mt19937_64 engine(detail::splitmix64(seed_ ^ detail::splitmix64(stream + 1)));
        std::normal_distribution<double> normal;

        const double bar = market_.theta_bar, vol = market_.sigma_theta;
        double th = market_.theta0;
        double log_z = 0.0;
        theta[0] = th;
        z[0] = 1.0;
        for (std::size_t k = 0; k < n_steps_; ++k) {
            const double dw = sign * sqrt_dt_ * normal(engine);
            const double extra = sign * resid_sd_ * normal(engine);
            log_z += -th * dw - 0.5 * th * th * dt_;
            th = bar + (th - bar) * decay_ - vol * (slope_ * dw + extra);
            theta[k + 1] = th;
            z[k + 1] = std::exp(log_z);
        }
    }

private:
    MarketParams market_;
    std::size_t n_paths_;
    std::size_t n_steps_;
    std::uint64_t seed_;
    bool antithetic_;
    double dt_ = 0.0, sqrt_dt_ = 0.0, decay_ = 0.0, slope_ = 0.0, resid_sd_ = 0.0;
};

// Materialized ensemble, row-major n_paths x (n_steps + 1).
class PathEnsemble {
public:
    PathEnsemble() = default;

    explicit PathEnsemble(const PathSimulator& sim)
        : n_paths_(sim.n_paths()),
          n_steps_(sim.n_steps()),
          dt_(sim.dt()),
          seed_(sim.seed()),
          antithetic_(sim.antithetic()),
          times_(sim.n_steps() + 1),
          theta_(sim.n_paths() * (sim.n_steps() + 1)),
          z_(sim.n_paths() * (sim.n_steps() + 1)) {
        for (std::size_t k = 0; k <= n_steps_; ++k) times_[k] = sim.time(k);
        for (std::size_t p = 0; p < n_paths_; ++p) sim.fill(p, theta_row_mut(p), z_row_mut(p));
    }

    std::size_t n_paths() const { return n_paths_; }
    std::size_t n_steps() const { return n_steps_; }
    double dt() const { return dt_; }
    std::uint64_t seed() const { return seed_; }
    bool antithetic() const { return antithetic_; }
    const std::vector<double>& times() const { return times_; }

    std::span<const double> theta(std::size_t p) const {
        return {theta_.data() + p * (n_steps_ + 1), n_steps_ + 1};
    }
    std::span<const double> Z(std::size_t p) const {
        return {z_.data() + p * (n_steps_ + 1), n_steps_ + 1};
    }

    void fill(std::size_t p, std::span<double> theta_out, std::span<double> z_out) const {
        const auto t = theta(p);
        const auto zz = Z(p);
        std::copy(t.begin(), t.end(), theta_out.begin());
        std::copy(zz.begin(), zz.end(), z_out.begin());
    }

    bool operator==(const PathEnsemble&) const = default;

private:
    std::span<double> theta_row_mut(std::size_t p) {
        return {theta_.data() + p * (n_steps_ + 1), n_steps_ + 1};
    }
    std::span<double> z_row_mut(std::size_t p) {
        return {z_.data() + p * (n_steps_ + 1), n_steps_ + 1};
    }

    std::size_t n_paths_ = 0;
    std::size_t n_steps_ = 0;
    double dt_ = 0.0;
    std::uint64_t seed_ = 0;
    bool antithetic_ = false;
    std::vector<double> times_;
    std::vector<double> theta_;
    std::vector<double> z_;
};

inline PathEnsemble simulate(const MarketParams& market, std::size_t n_paths, std::size_t n_steps,
                             std::uint64_t seed, bool antithetic = true) {
    return PathEnsemble(PathSimulator(market, n_paths, n_steps, seed, antithetic));
}

}  // namespace couplemerton
