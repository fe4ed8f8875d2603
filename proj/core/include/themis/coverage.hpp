#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "themis/mcmc.hpp"
#include "themis/sensitivity.hpp"

namespace themis {

struct NeuronStats {
    std::size_t neuron_id = 0;
    std::size_t sample_count = 0;
    double variance = 0.0;
    // Unset when the neuron has too few samples to be fitted.
    std::optional<double> posterior_mean_mu;
    std::optional<double> posterior_sd_mu;
    std::optional<double> mcse;
    bool converged = false;
};

struct CoverageReport {
    std::size_t iteration = 0;
    std::vector<std::size_t> sampled_neuron_ids;
    std::vector<NeuronStats> neurons;  // parallel to sampled_neuron_ids
    std::size_t converged_count = 0;
    double coverage = 0.0;  // converged_count / sampled count

    std::vector<std::size_t> unconverged_ids() const;
};

struct CoverageConfig {
    std::size_t sample_size = 1000;  // k
    double threshold = 0.05;         // t: converged iff mcse <= t
    std::size_t min_fit_samples = 30;
    McmcConfig mcmc;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Unbiased (n - 1) sample variance; 0 for fewer than two samples.
double sample_variance(std::span<const double> xs);
std::vector<double> neuron_variances(const SensitivityStore& store);

/// Variance-stratified neuron sampler. Sorts neuron ids by (variance, id) and
/// keeps those at 1-based sorted positions ceil(j * n / k) for j = 1..k,
/// clamped to [1, n], dropping repeats. Returns min(k, n) ids.
std::vector<std::size_t> sample_neurons(std::span<const double> variances, std::size_t k);

/// Fits and scores one neuron. Neurons with fewer than cfg.min_fit_samples
/// samples are reported unfitted and unconverged.
NeuronStats fit_neuron(std::size_t neuron_id, std::span<const double> samples, const CoverageConfig& cfg,
                       std::size_t iteration);

/// Builds a report from already scored neurons.
CoverageReport summarize(std::size_t iteration, std::vector<NeuronStats> neurons);

/// Phase 2: sample neurons (or reuse `fixed_ids`), fit each in parallel with a
/// sub-stream derived from (cfg.seed, iteration, neuron_id), and report the
/// converged fraction.
CoverageReport compute_coverage(const SensitivityStore& store, const CoverageConfig& cfg, std::size_t iteration,
                                const std::vector<std::size_t>* fixed_ids = nullptr);

}  // namespace themis
