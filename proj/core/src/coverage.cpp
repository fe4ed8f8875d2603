#include "themis/coverage.hpp"

#include <algorithm>
#include <numeric>

#include "themis/parallel.hpp"
#include "themis/rng.hpp"

namespace themis {

std::vector<std::size_t> CoverageReport::unconverged_ids() const {
    std::vector<std::size_t> ids;
    for (const auto& s : neurons)
        if (!s.converged) ids.push_back(s.neuron_id);
    return ids;
}

void CoverageConfig::validate() const {
    if (sample_size < 1) throw Error("coverage: sample size k must be >= 1");
    if (!(threshold >= 0.0)) throw Error("coverage: threshold must be non-negative");
    if (min_fit_samples < 2) throw Error("coverage: min_fit_samples must be >= 2");
    mcmc.validate();
}

double sample_variance(std::span<const double> xs) {
    if (xs.size() < 2) return 0.0;
    return NormalSummary::of(xs).sum_sq_dev / static_cast<double>(xs.size() - 1);
}

std::vector<double> neuron_variances(const SensitivityStore& store) {
    std::vector<double> v(store.num_neurons());
    for (std::size_t j = 0; j < v.size(); ++j) v[j] = sample_variance(store.samples(j));
    return v;
}

std::vector<std::size_t> sample_neurons(std::span<const double> variances, std::size_t k) {
    if (k < 1) throw Error("sample_neurons: k must be >= 1");
    const std::size_t n = variances.size();
    std::vector<std::size_t> sorted(n);
    std::iota(sorted.begin(), sorted.end(), std::size_t{0});
    std::stable_sort(sorted.begin(), sorted.end(),
                     [&](std::size_t a, std::size_t b) { return variances[a] < variances[b]; });
    std::vector<std::size_t> picked;
    picked.reserve(std::min(k, n));
    std::size_t last = 0;  // 1-based position of the previous pick
    for (std::size_t j = 1; j <= k && n > 0; ++j) {
        std::size_t pos = (j * n + k - 1) / k;
        pos = std::clamp<std::size_t>(pos, 1, n);
        if (pos == last) continue;  // positions are non-decreasing, so repeats are adjacent
        picked.push_back(sorted[pos - 1]);
        last = pos;
    }
    return picked;
}

NeuronStats fit_neuron(std::size_t neuron_id, std::span<const double> samples, const CoverageConfig& cfg,
                       std::size_t iteration) {
    NeuronStats s;
    s.neuron_id = neuron_id;
    s.sample_count = samples.size();
    s.variance = sample_variance(samples);
    if (samples.size() < cfg.min_fit_samples) return s;
    const auto draws = fit_posterior(samples, cfg.mcmc, derive_seed(cfg.seed, {0x636f76, iteration, neuron_id}));
    s.posterior_mean_mu = draws.mean_mu();
    s.posterior_sd_mu = draws.sd_mu();
    s.mcse = mcse(draws.mu);
    s.converged = *s.mcse <= cfg.threshold;
    return s;
}

CoverageReport summarize(std::size_t iteration, std::vector<NeuronStats> neurons) {
    CoverageReport r;
    r.iteration = iteration;
    for (const auto& s : neurons) {
        r.sampled_neuron_ids.push_back(s.neuron_id);
        r.converged_count += s.converged;
    }
    r.neurons = std::move(neurons);
    r.coverage = r.neurons.empty() ? 0.0
                                   : static_cast<double>(r.converged_count) / static_cast<double>(r.neurons.size());
    return r;
}

CoverageReport compute_coverage(const SensitivityStore& store, const CoverageConfig& cfg, std::size_t iteration,
                                const std::vector<std::size_t>* fixed_ids) {
    cfg.validate();
    if (store.empty()) throw Error("compute_coverage: sensitivity store is empty");
    std::vector<std::size_t> ids;
    if (fixed_ids) {
        ids = *fixed_ids;
        for (auto id : ids)
            if (id >= store.num_neurons()) throw Error("compute_coverage: fixed neuron id out of range");
    } else {
        ids = sample_neurons(neuron_variances(store), cfg.sample_size);
    }
    std::vector<NeuronStats> stats(ids.size());
    parallel_for(ids.size(), [&](std::size_t i) { stats[i] = fit_neuron(ids[i], store.samples(ids[i]), cfg, iteration); });
    return summarize(iteration, std::move(stats));
}

}  // namespace themis
