#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "themis/coverage.hpp"
#include "themis/dataset.hpp"
#include "themis/perturb.hpp"
#include "themis/sensitivity.hpp"

namespace themis {

struct FuzzConfig {
    double coverage_target = 1.0;  // c, in (0, 1]; 0 is accepted as a vacuous target
    std::size_t max_outer_iterations = 50;
    std::size_t inner_steps = 10;
    double step_size = 0.01;
    std::size_t batch_size = 100;
    std::uint64_t seed = 0;
    /// Fixed theta for every candidate. Unset: each candidate draws theta
    /// uniformly from the family's sweep range.
    std::optional<double> magnitude;
    std::size_t pgd_steps = 10;
    std::optional<double> pgd_alpha;
    /// Keep the neurons sampled at iteration 0 instead of resampling each iteration.
    bool freeze_sampled_neurons = false;
    CoverageConfig coverage;

    void validate() const;
};

/// L-infinity radius every candidate is kept within: epsilon for fgsm/pgd and
/// three sigma for gaussian, using the fixed magnitude or else the largest in
/// the sweep range.
double perturbation_budget(Family family, const FuzzConfig& cfg);

/// Sum over `neurons` of |N_i(candidate) - N_i(clean)|.
double objective(const Model& model, const ActivationTrace& clean, const Tensor& candidate,
                 std::span<const std::size_t> neurons);
double objective(const Model& model, const Tensor& clean, const Tensor& candidate,
                 std::span<const std::size_t> neurons);

/// Objective value and its gradient with respect to the candidate
/// (|.| has derivative 0 at 0).
ValueAndGradient objective_gradient(const Model& model, const ActivationTrace& clean, const Tensor& candidate,
                                    std::span<const std::size_t> neurons);

struct AscentConfig {
    std::size_t steps = 10;
    double step_size = 0.01;
    double budget = 0.05;
};

struct AscentResult {
    Tensor candidate;
    double objective = 0.0;
    double seed_objective = 0.0;
};

/// Gradient ascent: candidate += step * grad, project onto the budget ball
/// around `clean`, clamp to [0, 1]. Returns the best iterate seen, seed included.
AscentResult maximize(const Model& model, const Tensor& clean, const Tensor& seed_candidate,
                      std::span<const std::size_t> neurons, const AscentConfig& cfg);

enum class Termination { coverage_reached, budget_exhausted };
std::string_view to_string(Termination t);

struct IterationRecord {
    std::size_t iteration = 0;
    std::size_t inputs = 0;
    std::size_t new_faults = 0;
    double total_sensitivity = 0.0;
    CoverageReport coverage;
};

/// Wall-clock seconds per phase. Not part of the deterministic campaign output.
struct PhaseTimings {
    double calculator = 0.0;
    double coverage = 0.0;
    double fuzzer = 0.0;
    double total = 0.0;
};

struct CampaignResult {
    FuzzConfig config;
    Family family = Family::gaussian;
    std::string model_fingerprint;
    std::size_t num_neurons = 0;
    std::vector<IterationRecord> iterations;
    std::vector<FaultRecord> faults;
    std::size_t inputs_generated = 0;
    PhaseTimings timings;
    Termination termination = Termination::budget_exhausted;

    double final_coverage() const { return iterations.empty() ? 0.0 : iterations.back().coverage.coverage; }
};

/// Iteration `iteration`'s un-ascended candidates: the next batch_size
/// dataset items (cycling), each perturbed with its own seed-derived stream
/// and kept inside the perturbation budget.
std::vector<Candidate> seed_candidates(const Model& model, const Dataset& dataset, Family family,
                                       const FuzzConfig& cfg, std::size_t iteration);

/// Called after every completed iteration with the campaign so far.
using IterationCallback = std::function<void(const CampaignResult&)>;

/// Runs Phase 1 (sensitivity), Phase 2 (coverage) and, while coverage < c,
/// Phase 3 (ascent on unconverged neurons) until the target is met or the
/// iteration budget runs out. Each iteration takes the next batch_size
/// dataset items, cycling through the dataset; iteration 0 uses random
/// perturbations directly, later iterations ascend them first.
CampaignResult run_campaign(const Model& model, const Dataset& dataset, Family family, const FuzzConfig& cfg,
                            const IterationCallback& on_iteration = {});

}  // namespace themis
