#include "themis/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "themis/parallel.hpp"
#include "themis/serialize.hpp"
#include "themis/stats.hpp"

namespace themis {

Dataset perturb_dataset(const Model& model, const Dataset& dataset, Family family, std::optional<double> magnitude,
                        std::uint64_t seed) {
    dataset.validate();
    if (magnitude) validate(PerturbSpec{family, *magnitude, 10, std::nullopt});
    const auto range = sweep_range(family);
    Dataset out = dataset;
    parallel_for(dataset.size(), [&](std::size_t i) {
        Rng rng(derive_seed(seed, {0x70657274, i}));
        const PerturbSpec spec{family, magnitude ? *magnitude : rng.uniform(range.lo, range.hi), 10, std::nullopt};
        out.inputs[i] = perturb(spec, model, dataset.inputs[i], dataset.labels[i], rng);
    });
    return out;
}

double error_rate(const Model& model, const Dataset& dataset, const PerturbSpec& spec, std::uint64_t seed) {
    if (dataset.empty()) throw Error("error_rate: empty dataset");
    dataset.validate();
    validate(spec);
    std::vector<char> wrong(dataset.size(), 0);
    parallel_for(dataset.size(), [&](std::size_t i) {
        Rng rng(derive_seed(seed, {0x657272, i}));
        wrong[i] = predict(model, perturb(spec, model, dataset.inputs[i], dataset.labels[i], rng)) != dataset.labels[i];
    });
    return static_cast<double>(std::count(wrong.begin(), wrong.end(), 1)) / static_cast<double>(dataset.size());
}

void compute_correlation(ExperimentReport& report) {
    std::vector<double> er, faults;
    for (const auto& r : report.rows) {
        er.push_back(r.error_rate);
        faults.push_back(static_cast<double>(r.faults));
    }
    report.correlation.reset();
    report.correlation_error.clear();
    try {
        report.correlation = pearson(er, faults);
    } catch (const Error& e) {
        report.correlation_error = e.what();
    }
}

ExperimentReport correlate_experiment(const Model& model, const Dataset& dataset, Family family,
                                      const FuzzConfig& cfg) {
    ExperimentReport report;
    report.family = family;
    report.model_fingerprint = model_fingerprint(model);
    report.config = cfg;
    auto magnitudes = magnitude_sweep(family);
    std::sort(magnitudes.begin(), magnitudes.end());
    for (std::size_t m = 0; m < magnitudes.size(); ++m) {
        const auto t0 = std::chrono::steady_clock::now();
        FuzzConfig run = cfg;
        run.magnitude = magnitudes[m];
        run.seed = derive_seed(cfg.seed, {0x636f7272, m});
        const auto campaign = run_campaign(model, dataset, family, run);
        CorrelationRow row;
        row.magnitude = magnitudes[m];
        row.error_rate = error_rate(model, dataset, PerturbSpec{family, magnitudes[m], cfg.pgd_steps, cfg.pgd_alpha},
                                    derive_seed(cfg.seed, {0x657272}));
        row.faults = campaign.faults.size();
        row.inputs = campaign.inputs_generated;
        row.iterations = campaign.iterations.size();
        row.final_coverage = campaign.final_coverage();
        row.termination = campaign.termination;
        row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        report.rows.push_back(row);
    }
    compute_correlation(report);
    return report;
}

RetrainReport retrain_experiment(const Model& model, const Dataset& train, const Dataset& heldout,
                                 std::span<const FaultRecord> faults, const RetrainConfig& cfg) {
    if (faults.empty()) throw Error("retrain_experiment: empty fault corpus");
    if (heldout.empty()) throw Error("retrain_experiment: empty held-out set");
    train.validate();
    heldout.validate();

    Dataset augmented = train;
    for (const auto& f : faults) {
        if (f.label >= model.num_classes()) throw Error("retrain_experiment: fault label out of range");
        augmented.inputs.push_back(f.perturbed_input);
        augmented.labels.push_back(f.label);
    }
    const Dataset perturbed = perturb_dataset(model, heldout, cfg.family, cfg.magnitude, cfg.seed);

    RetrainReport r;
    r.faults_used = faults.size();
    r.train_size = train.size();
    r.heldout_size = heldout.size();
    r.perturbed_before = accuracy(model, perturbed.inputs, perturbed.labels);
    r.clean_before = accuracy(model, heldout.inputs, heldout.labels);

    if (cfg.train.epochs == 0) {
        r.perturbed_after = r.control_perturbed_after = r.perturbed_before;
        r.clean_after = r.control_clean_after = r.clean_before;
        return r;
    }
    const Model tuned = sgd_train(model, augmented.inputs, augmented.labels, cfg.train);
    r.perturbed_after = accuracy(tuned, perturbed.inputs, perturbed.labels);
    r.clean_after = accuracy(tuned, heldout.inputs, heldout.labels);
    const Model control = sgd_train(model, train.inputs, train.labels, cfg.train);
    r.control_perturbed_after = accuracy(control, perturbed.inputs, perturbed.labels);
    r.control_clean_after = accuracy(control, heldout.inputs, heldout.labels);
    return r;
}

SensitivityStore collect_sensitivity(const Model& model, const Dataset& dataset, Family family,
                                     const FuzzConfig& cfg, std::size_t iterations) {
    cfg.validate();
    SensitivityStore store(model.num_neurons());
    std::vector<FaultRecord> faults;
    for (std::size_t it = 0; it < iterations; ++it)
        process_batch(model, seed_candidates(model, dataset, family, cfg, it), it, store, faults);
    return store;
}

namespace {

// Every neuron fitted once per seed; subsets and thresholds are read off these fits.
std::vector<NeuronStats> fit_all(const SensitivityStore& store, CoverageConfig cfg, std::uint64_t seed) {
    cfg.sample_size = store.num_neurons();
    cfg.seed = seed;
    auto report = compute_coverage(store, cfg, 0);
    std::vector<NeuronStats> by_id(store.num_neurons());
    for (auto& n : report.neurons) by_id[n.neuron_id] = std::move(n);
    return by_id;
}

double converged_fraction(const std::vector<NeuronStats>& fits, std::span<const std::size_t> ids, double t) {
    std::size_t c = 0;
    for (auto id : ids)
        if (fits[id].mcse && *fits[id].mcse <= t) ++c;
    return static_cast<double>(c) / static_cast<double>(ids.size());
}

}  // namespace

SampleSizeStudy sample_size_study(const SensitivityStore& store, std::span<const std::size_t> ks,
                                  const CoverageConfig& cfg, std::span<const std::uint64_t> seeds) {
    cfg.validate();
    if (store.empty()) throw Error("sample_size_study: empty store");
    if (seeds.empty() || ks.empty()) throw Error("sample_size_study: need sample sizes and seeds");
    SampleSizeStudy study;
    study.num_neurons = store.num_neurons();
    study.samples_per_neuron = store.inputs_processed();
    study.threshold = cfg.threshold;
    std::vector<std::size_t> all(store.num_neurons());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    const auto variances = neuron_variances(store);
    for (auto k : ks) {
        if (k == 0) throw Error("sample_size_study: k must be positive");
        SampleSizeRow row;
        row.k = k;
        study.rows.push_back(row);
    }
    for (auto seed : seeds) {
        const auto fits = fit_all(store, cfg, seed);
        const double truth = converged_fraction(fits, all, cfg.threshold);
        study.ground_truth.push_back(truth);
        for (auto& row : study.rows) {
            const auto ids = sample_neurons(variances, row.k);
            const double c = converged_fraction(fits, ids, cfg.threshold);
            row.coverage.push_back(c);
            row.abs_error.push_back(std::abs(c - truth));
        }
    }
    study.median_ground_truth = median(study.ground_truth);
    for (auto& row : study.rows) {
        row.median_coverage = median(row.coverage);
        row.median_abs_error = median(row.abs_error);
    }
    return study;
}

std::vector<ThresholdRow> threshold_study(const SensitivityStore& store, std::span<const double> thresholds,
                                          const CoverageConfig& cfg, std::span<const std::uint64_t> seeds) {
    cfg.validate();
    if (store.empty()) throw Error("threshold_study: empty store");
    if (seeds.empty() || thresholds.empty()) throw Error("threshold_study: need thresholds and seeds");
    std::vector<ThresholdRow> rows;
    for (double t : thresholds) {
        if (!(t >= 0.0)) throw Error("threshold_study: thresholds must be non-negative");
        ThresholdRow row;
        row.threshold = t;
        rows.push_back(row);
    }
    std::vector<std::size_t> all(store.num_neurons());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    for (auto seed : seeds) {
        const auto fits = fit_all(store, cfg, seed);
        for (auto& row : rows) row.coverage.push_back(converged_fraction(fits, all, row.threshold));
    }
    for (auto& row : rows) row.median_coverage = median(row.coverage);
    return rows;
}

CapabilityStudy capability_study(std::span<const Model> models, const Dataset& dataset, Family family,
                                 const FuzzConfig& cfg) {
    CapabilityStudy study;
    std::vector<double> err, faults;
    for (const auto& m : models) {
        CapabilityRow row;
        row.accuracy = accuracy(m, dataset.inputs, dataset.labels);
        row.faults = run_campaign(m, dataset, family, cfg).faults.size();
        err.push_back(1.0 - row.accuracy);
        faults.push_back(static_cast<double>(row.faults));
        study.rows.push_back(row);
    }
    try {
        study.spearman = spearman(err, faults);
    } catch (const Error&) {
        study.spearman.reset();
    }
    return study;
}

}  // namespace themis
