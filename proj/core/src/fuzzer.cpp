#include "themis/fuzzer.hpp"

#include <chrono>
#include <cmath>

#include "themis/parallel.hpp"
#include "themis/serialize.hpp"

namespace themis {

void FuzzConfig::validate() const {
    if (!(coverage_target >= 0.0 && coverage_target <= 1.0)) throw Error("fuzz: coverage target must be in [0, 1]");
    if (max_outer_iterations == 0) throw Error("fuzz: max_outer_iterations must be positive");
    if (inner_steps == 0) throw Error("fuzz: inner steps must be positive");
    if (!(step_size > 0.0)) throw Error("fuzz: step size must be positive");
    if (batch_size == 0) throw Error("fuzz: batch size must be positive");
    if (pgd_steps == 0) throw Error("fuzz: pgd steps must be positive");
    coverage.validate();
}

double perturbation_budget(Family family, const FuzzConfig& cfg) { return linf_budget(family, cfg.magnitude); }

std::string_view to_string(Termination t) {
    return t == Termination::coverage_reached ? "coverage_reached" : "budget_exhausted";
}

namespace {

void require_neurons(const Model& model, std::span<const std::size_t> neurons) {
    if (neurons.empty()) throw Error("objective: empty neuron set");
    for (auto i : neurons)
        if (i >= model.num_neurons()) throw Error("objective: neuron " + std::to_string(i) + " out of range");
}

}  // namespace

double objective(const Model& model, const ActivationTrace& clean, const Tensor& candidate,
                 std::span<const std::size_t> neurons) {
    require_neurons(model, neurons);
    const auto t = forward(model, candidate);
    double s = 0.0;
    for (auto i : neurons) s += std::abs(t.values[i] - clean.values[i]);
    return s;
}

double objective(const Model& model, const Tensor& clean, const Tensor& candidate,
                 std::span<const std::size_t> neurons) {
    return objective(model, forward(model, clean), candidate, neurons);
}

ValueAndGradient objective_gradient(const Model& model, const ActivationTrace& clean, const Tensor& candidate,
                                    std::span<const std::size_t> neurons) {
    require_neurons(model, neurons);
    return value_and_input_gradient(model, candidate, [&](const ActivationTrace& t, std::span<double> d) {
        double s = 0.0;
        for (auto i : neurons) {
            const double diff = t.values[i] - clean.values[i];
            s += std::abs(diff);
            d[i] += diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
        }
        return s;
    });
}

AscentResult maximize(const Model& model, const Tensor& clean, const Tensor& seed_candidate,
                      std::span<const std::size_t> neurons, const AscentConfig& cfg) {
    if (seed_candidate.shape() != clean.shape()) throw ShapeError("maximize: seed and clean shapes differ");
    const auto clean_trace = forward(model, clean);
    AscentResult best;
    Tensor x = seed_candidate;
    auto vg = objective_gradient(model, clean_trace, x, neurons);
    best.candidate = x;
    best.objective = best.seed_objective = vg.value;
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        for (std::size_t i = 0; i < x.size(); ++i) x[i] += cfg.step_size * vg.gradient[i];
        project_linf(x, clean, cfg.budget);
        clamp_unit(x);
        vg = objective_gradient(model, clean_trace, x, neurons);
        if (vg.value > best.objective) {
            best.objective = vg.value;
            best.candidate = x;
        }
    }
    return best;
}

std::vector<Candidate> seed_candidates(const Model& model, const Dataset& dataset, Family family,
                                       const FuzzConfig& cfg, std::size_t iteration) {
    if (dataset.empty()) throw Error("seed_candidates: empty dataset");
    const auto range = sweep_range(family);
    const double budget = perturbation_budget(family, cfg);
    const std::size_t n = dataset.size();
    std::vector<Candidate> batch(cfg.batch_size);
    parallel_for(batch.size(), [&](std::size_t b) {
        const std::size_t idx = (iteration * cfg.batch_size + b) % n;
        Rng rng(derive_seed(cfg.seed, {0x63616e64, iteration, b}));
        PerturbSpec spec{family, cfg.magnitude ? *cfg.magnitude : rng.uniform(range.lo, range.hi), cfg.pgd_steps,
                         cfg.pgd_alpha};
        Tensor x = perturb(spec, model, dataset.inputs[idx], dataset.labels[idx], rng);
        project_linf(x, dataset.inputs[idx], budget);
        clamp_unit(x);
        batch[b] = Candidate{idx, dataset.labels[idx], dataset.inputs[idx], std::move(x), spec};
    });
    return batch;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

}  // namespace

CampaignResult run_campaign(const Model& model, const Dataset& dataset, Family family, const FuzzConfig& cfg,
                            const IterationCallback& on_iteration) {
    cfg.validate();
    if (dataset.empty()) throw Error("run_campaign: empty dataset");
    dataset.validate();
    if (cfg.magnitude) validate(PerturbSpec{family, *cfg.magnitude, cfg.pgd_steps, cfg.pgd_alpha});
    const double budget = perturbation_budget(family, cfg);

    const auto t_start = Clock::now();
    CampaignResult result;
    result.config = cfg;
    result.family = family;
    result.model_fingerprint = model_fingerprint(model);
    result.num_neurons = model.num_neurons();

    CoverageConfig cov = cfg.coverage;
    cov.seed = derive_seed(cfg.seed, {0x636f76, cfg.coverage.seed});
    SensitivityStore store(model.num_neurons());
    std::vector<std::size_t> unconverged;
    std::vector<std::size_t> frozen_ids;

    for (std::size_t it = 0; it < cfg.max_outer_iterations; ++it) {
        auto t0 = Clock::now();
        std::vector<Candidate> batch = seed_candidates(model, dataset, family, cfg, it);
        result.timings.calculator += seconds_since(t0);

        if (it > 0) {
            t0 = Clock::now();
            const AscentConfig ascent{cfg.inner_steps, cfg.step_size, budget};
            parallel_for(batch.size(), [&](std::size_t b) {
                batch[b].perturbed = maximize(model, batch[b].clean, batch[b].perturbed, unconverged, ascent).candidate;
            });
            result.timings.fuzzer += seconds_since(t0);
        }

        t0 = Clock::now();
        IterationRecord rec;
        rec.iteration = it;
        rec.inputs = batch.size();
        const auto outcome = process_batch(model, batch, it, store, result.faults);
        rec.new_faults = outcome.new_faults;
        rec.total_sensitivity = outcome.total_sensitivity;
        result.inputs_generated += batch.size();
        result.timings.calculator += seconds_since(t0);

        t0 = Clock::now();
        const bool reuse = cfg.freeze_sampled_neurons && it > 0;
        rec.coverage = compute_coverage(store, cov, it, reuse ? &frozen_ids : nullptr);
        if (it == 0) frozen_ids = rec.coverage.sampled_neuron_ids;
        unconverged = rec.coverage.unconverged_ids();
        result.timings.coverage += seconds_since(t0);

        const bool reached = rec.coverage.coverage >= cfg.coverage_target;
        result.iterations.push_back(std::move(rec));
        result.termination = reached ? Termination::coverage_reached : Termination::budget_exhausted;
        result.timings.total = seconds_since(t_start);
        if (on_iteration) on_iteration(result);
        if (reached) break;
    }
    result.timings.total = seconds_since(t_start);
    return result;
}

}  // namespace themis
