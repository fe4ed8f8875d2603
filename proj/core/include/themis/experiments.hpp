#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "themis/baselines.hpp"
#include "themis/fuzzer.hpp"

namespace themis {

/// Copy of `dataset` with every input perturbed by its own seed-derived
/// stream. Unset magnitude: drawn uniformly from the family's sweep range per item.
Dataset perturb_dataset(const Model& model, const Dataset& dataset, Family family, std::optional<double> magnitude,
                        std::uint64_t seed);

/// Fraction of perturbed inputs whose prediction differs from the ground-truth label.
double error_rate(const Model& model, const Dataset& dataset, const PerturbSpec& spec, std::uint64_t seed);

struct CorrelationRow {
    double magnitude = 0.0;
    double error_rate = 0.0;
    std::size_t faults = 0;
    std::size_t inputs = 0;
    std::size_t iterations = 0;
    double final_coverage = 0.0;
    Termination termination = Termination::budget_exhausted;
    double seconds = 0.0;  // wall clock, not part of deterministic output
};

struct ExperimentReport {
    Family family = Family::gaussian;
    std::string model_fingerprint;
    FuzzConfig config;
    std::vector<CorrelationRow> rows;  // sorted by magnitude
    std::optional<double> correlation;
    std::string correlation_error;  // set when the correlation is undefined
};

/// One campaign per sweep magnitude (fixed theta), each paired with the error
/// rate at that magnitude on the same dataset; Pearson over the pairs.
ExperimentReport correlate_experiment(const Model& model, const Dataset& dataset, Family family,
                                      const FuzzConfig& cfg);

/// Fills correlation / correlation_error from the rows.
void compute_correlation(ExperimentReport& report);

struct RetrainConfig {
    TrainConfig train{.epochs = 2, .learning_rate = 0.05, .batch_size = 32, .seed = 0};
    Family family = Family::gaussian;
    std::optional<double> magnitude;  // held-out perturbation; unset draws per item
    std::uint64_t seed = 0;
};

struct RetrainReport {
    std::size_t faults_used = 0;
    std::size_t train_size = 0;
    std::size_t heldout_size = 0;
    double perturbed_before = 0.0;
    double perturbed_after = 0.0;
    double clean_before = 0.0;
    double clean_after = 0.0;
    /// Same fine-tuning on the training set alone.
    double control_perturbed_after = 0.0;
    double control_clean_after = 0.0;

    double gain() const { return perturbed_after - perturbed_before; }
};

/// Fine-tunes on train + fault inputs (labeled with ground truth) and reports
/// accuracy on a perturbed copy of `heldout` before and after.
RetrainReport retrain_experiment(const Model& model, const Dataset& train, const Dataset& heldout,
                                 std::span<const FaultRecord> faults, const RetrainConfig& cfg);

/// Sensitivity samples from `iterations` batches of un-ascended seed candidates.
SensitivityStore collect_sensitivity(const Model& model, const Dataset& dataset, Family family,
                                     const FuzzConfig& cfg, std::size_t iterations);

struct SampleSizeRow {
    std::size_t k = 0;
    std::vector<double> coverage;   // per seed
    std::vector<double> abs_error;  // per seed, against that seed's ground truth
    double median_coverage = 0.0;
    double median_abs_error = 0.0;
};

struct SampleSizeStudy {
    std::size_t num_neurons = 0;
    std::size_t samples_per_neuron = 0;
    double threshold = 0.0;
    std::vector<double> ground_truth;  // all-neuron coverage per seed
    double median_ground_truth = 0.0;
    std::vector<SampleSizeRow> rows;
};

/// Coverage from k sampled neurons versus all neurons, per MCMC seed.
SampleSizeStudy sample_size_study(const SensitivityStore& store, std::span<const std::size_t> ks,
                                  const CoverageConfig& cfg, std::span<const std::uint64_t> seeds);

struct ThresholdRow {
    double threshold = 0.0;
    std::vector<double> coverage;  // per seed
    double median_coverage = 0.0;
};

/// All-neuron coverage as a function of the MCSE threshold.
std::vector<ThresholdRow> threshold_study(const SensitivityStore& store, std::span<const double> thresholds,
                                          const CoverageConfig& cfg, std::span<const std::uint64_t> seeds);

struct CapabilityRow {
    double accuracy = 0.0;
    std::size_t faults = 0;
};

/// Campaign fault counts across models of differing accuracy; `spearman` is the
/// rank correlation between error (1 - accuracy) and faults.
struct CapabilityStudy {
    std::vector<CapabilityRow> rows;
    std::optional<double> spearman;
};

CapabilityStudy capability_study(std::span<const Model> models, const Dataset& dataset, Family family,
                                 const FuzzConfig& cfg);

}  // namespace themis
