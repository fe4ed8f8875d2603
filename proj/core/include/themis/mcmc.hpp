#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "themis/tensor.hpp"

namespace themis {

/// Adaptive random-walk Metropolis settings for the Normal(mu, sigma^2) fit.
struct McmcConfig {
    std::size_t chains = 2;
    std::size_t draws = 1000;   // kept per chain, after warm-up
    std::size_t warmup = 500;
    double target_acceptance = 0.3;
    double prior_mu_sd = 10.0;        // mu ~ Normal(0, prior_mu_sd^2)
    double prior_sigma_scale = 10.0;  // sigma ~ HalfNormal(prior_sigma_scale)

    void validate() const;
};

/// Post-warm-up draws, one vector per chain.
struct PosteriorDraws {
    std::vector<std::vector<double>> mu;
    std::vector<std::vector<double>> sigma;
    std::vector<double> acceptance;  // per chain, post-warm-up

    double mean_mu() const;
    double sd_mu() const;
    /// All chains' mu draws concatenated in chain order.
    std::vector<double> pooled_mu() const;
};

/// Sufficient statistics of the samples; the likelihood only needs these.
struct NormalSummary {
    std::size_t count = 0;
    double mean = 0.0;
    double sum_sq_dev = 0.0;  // sum of (x - mean)^2

    static NormalSummary of(std::span<const double> samples);
};

/// Random-walk Metropolis over (mu, log sigma) with Gaussian proposals whose
/// scale is adapted during warm-up toward cfg.target_acceptance, then frozen.
/// Chain c draws from the sub-stream derive_seed(seed, {c}).
/// sigma is floored at 1e-9 * (1 + |mean|) so constant data stays proper.
PosteriorDraws fit_posterior(std::span<const double> samples, const McmcConfig& cfg, std::uint64_t seed);
PosteriorDraws fit_posterior(const NormalSummary& summary, const McmcConfig& cfg, std::uint64_t seed);

/// Batch-means Monte Carlo standard error of the chain mean: floor(sqrt(L))
/// batches of floor(L / b) draws (remainder dropped), sd of the batch means
/// (n - 1) over sqrt(number of batches). Requires L >= 4.
double mcse(std::span<const double> chain);
/// Multi-chain form: batch means from every chain are pooled.
double mcse(const std::vector<std::vector<double>>& chains);

}  // namespace themis
