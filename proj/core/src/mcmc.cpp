#include "themis/mcmc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "themis/rng.hpp"

namespace themis {

void McmcConfig::validate() const {
    if (chains == 0 || draws == 0) throw Error("mcmc: chains and draws must be positive");
    if (!(target_acceptance > 0.0 && target_acceptance < 1.0)) throw Error("mcmc: target acceptance must be in (0,1)");
    if (!(prior_mu_sd > 0.0 && prior_sigma_scale > 0.0)) throw Error("mcmc: prior scales must be positive");
}

NormalSummary NormalSummary::of(std::span<const double> samples) {
    NormalSummary s;
    s.count = samples.size();
    if (samples.empty()) return s;
    double sum = 0.0;
    for (auto v : samples) sum += v;
    s.mean = sum / static_cast<double>(samples.size());
    for (auto v : samples) s.sum_sq_dev += (v - s.mean) * (v - s.mean);
    return s;
}

std::vector<double> PosteriorDraws::pooled_mu() const {
    std::vector<double> all;
    for (const auto& c : mu) all.insert(all.end(), c.begin(), c.end());
    return all;
}

double PosteriorDraws::mean_mu() const {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& c : mu)
        for (auto v : c) s += v, ++n;
    return n ? s / static_cast<double>(n) : 0.0;
}

double PosteriorDraws::sd_mu() const {
    const double m = mean_mu();
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& c : mu)
        for (auto v : c) s += (v - m) * (v - m), ++n;
    return n > 1 ? std::sqrt(s / static_cast<double>(n - 1)) : 0.0;
}

namespace {

class NormalPosterior {
public:
    NormalPosterior(const NormalSummary& s, const McmcConfig& cfg)
        : m_(static_cast<double>(s.count)),
          mean_(s.mean),
          ss_(s.sum_sq_dev),
          mu_var_(cfg.prior_mu_sd * cfg.prior_mu_sd),
          sigma_var_(cfg.prior_sigma_scale * cfg.prior_sigma_scale),
          log_floor_(std::log(1e-9 * (1.0 + std::abs(s.mean)))) {}

    /// Log density over (mu, eta = log sigma), up to a constant.
    double operator()(double mu, double eta) const {
        if (eta < log_floor_) return -std::numeric_limits<double>::infinity();
        const double sigma2 = std::exp(2.0 * eta);
        const double d = mu - mean_;
        return -mu * mu / (2.0 * mu_var_) - sigma2 / (2.0 * sigma_var_) + eta - m_ * eta -
               (ss_ + m_ * d * d) / (2.0 * sigma2);
    }

    double log_floor() const { return log_floor_; }

private:
    double m_, mean_, ss_, mu_var_, sigma_var_, log_floor_;
};

}  // namespace

PosteriorDraws fit_posterior(const NormalSummary& s, const McmcConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    if (s.count < 2) throw Error("fit_posterior needs at least 2 samples, got " + std::to_string(s.count));
    const NormalPosterior logp(s, cfg);
    const double m = static_cast<double>(s.count);
    const double sd = std::max(std::sqrt(s.sum_sq_dev / (m - 1.0)), 10.0 * std::exp(logp.log_floor()));
    // Proposal shape follows the approximate posterior sds of mu and log sigma.
    const double base_mu = sd / std::sqrt(m);
    const double base_eta = 1.0 / std::sqrt(2.0 * m);

    PosteriorDraws out;
    for (std::size_t c = 0; c < cfg.chains; ++c) {
        Rng rng(derive_seed(seed, {c}));
        double mu = s.mean + base_mu * rng.normal();
        double eta = std::log(sd) + base_eta * rng.normal();
        double lp = logp(mu, eta);
        double log_scale = std::log(2.38 / std::sqrt(2.0));
        std::vector<double> mus, sigmas;
        mus.reserve(cfg.draws);
        sigmas.reserve(cfg.draws);
        std::size_t accepted = 0;
        for (std::size_t t = 0; t < cfg.warmup + cfg.draws; ++t) {
            const double scale = std::exp(log_scale);
            const double mu_p = mu + scale * base_mu * rng.normal();
            const double eta_p = eta + scale * base_eta * rng.normal();
            const double lp_p = logp(mu_p, eta_p);
            const double a = lp_p - lp >= 0.0 ? 1.0 : std::exp(lp_p - lp);
            const bool accept = rng.uniform() < a;
            if (accept) mu = mu_p, eta = eta_p, lp = lp_p;
            if (t < cfg.warmup) {
                log_scale += (a - cfg.target_acceptance) / std::pow(static_cast<double>(t + 1), 0.6);
            } else {
                accepted += accept;
                mus.push_back(mu);
                sigmas.push_back(std::exp(eta));
            }
        }
        out.mu.push_back(std::move(mus));
        out.sigma.push_back(std::move(sigmas));
        out.acceptance.push_back(static_cast<double>(accepted) / static_cast<double>(cfg.draws));
    }
    return out;
}

PosteriorDraws fit_posterior(std::span<const double> samples, const McmcConfig& cfg, std::uint64_t seed) {
    if (samples.size() < 2) throw Error("fit_posterior needs at least 2 samples, got " + std::to_string(samples.size()));
    for (auto v : samples)
        if (!std::isfinite(v)) throw NonFiniteError("fit_posterior: non-finite sample");
    return fit_posterior(NormalSummary::of(samples), cfg, seed);
}

namespace {

void append_batch_means(std::span<const double> chain, std::vector<double>& means) {
    const std::size_t len = chain.size();
    if (len < 4) throw Error("mcse: chain of length " + std::to_string(len) + " is too short (need >= 4)");
    const auto batches = static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(len))));
    const std::size_t size = len / batches;
    for (std::size_t b = 0; b < batches; ++b) {
        double s = 0.0;
        for (std::size_t i = b * size; i < (b + 1) * size; ++i) s += chain[i];
        means.push_back(s / static_cast<double>(size));
    }
}

double se_of_means(const std::vector<double>& means) {
    // Deviations are taken from the first mean so identical means give exactly 0.
    const double ref = means.front();
    double s = 0.0;
    for (auto v : means) s += v - ref;
    const double centre = s / static_cast<double>(means.size());
    double ss = 0.0;
    for (auto v : means) {
        const double d = (v - ref) - centre;
        ss += d * d;
    }
    const double n = static_cast<double>(means.size());
    return std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
}

}  // namespace

double mcse(std::span<const double> chain) {
    std::vector<double> means;
    append_batch_means(chain, means);
    return se_of_means(means);
}

double mcse(const std::vector<std::vector<double>>& chains) {
    if (chains.empty()) throw Error("mcse: no chains");
    std::vector<double> means;
    for (const auto& c : chains) append_batch_means(c, means);
    return se_of_means(means);
}

}  // namespace themis
