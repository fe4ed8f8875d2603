#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "themis/dataset.hpp"
#include "themis/perturb.hpp"
#include "themis/sensitivity.hpp"

namespace themis {

enum class MetricKind { nc, kmnc };
std::string_view to_string(MetricKind kind);
MetricKind parse_metric(std::string_view name);

/// Per-neuron activation bounds over a set of traces, split into k sections.
struct KmncProfile {
    std::vector<double> low;
    std::vector<double> high;
    std::size_t k = 1000;

    std::size_t num_neurons() const { return low.size(); }
    void validate() const;
};

KmncProfile build_kmnc_profile(const Model& model, std::span<const Tensor> inputs, std::size_t k = 1000);

/// Section hit by activation `a`, or nullopt when `a` lies outside [low, high].
std::optional<std::size_t> kmnc_section(double a, double low, double high, std::size_t k);

struct BaselineState {
    MetricKind kind = MetricKind::nc;
    std::vector<char> covered;  // nc: one per neuron; kmnc: k per neuron
    std::size_t covered_count = 0;
    std::size_t inputs_accepted = 0;
    std::size_t faults_found = 0;

    double coverage() const {
        return covered.empty() ? 0.0 : static_cast<double>(covered_count) / static_cast<double>(covered.size());
    }
};

BaselineState make_nc_state(std::size_t num_neurons);
BaselineState make_kmnc_state(const KmncProfile& profile);

/// Min-max normalizes each traced layer of `trace` (all-equal layers map to 0)
/// and marks neurons above `threshold`. Returns the number newly covered.
std::size_t nc_update(BaselineState& state, const Model& model, const ActivationTrace& trace, double threshold = 0.5);

/// Marks the section hit by every in-range activation. Returns the number newly covered.
std::size_t kmnc_update(BaselineState& state, const ActivationTrace& trace, const KmncProfile& profile);

enum class BaselineTermination { coverage_reached, budget_exhausted, saturated };
std::string_view to_string(BaselineTermination t);

struct BaselineConfig {
    MetricKind metric = MetricKind::nc;
    double nc_threshold = 0.5;
    std::size_t kmnc_k = 1000;
    std::size_t attempt_budget = 5000;
    /// Stop once this many consecutive attempts leave the metric unchanged.
    std::size_t patience = 500;
    std::uint64_t seed = 0;
    std::optional<double> magnitude;
    std::size_t pgd_steps = 10;
    std::optional<double> pgd_alpha;

    void validate() const;
};

struct AcceptedInput {
    std::size_t attempt = 0;
    std::size_t input_id = 0;
    PerturbSpec spec;
    double coverage = 0.0;
};

struct BaselineResult {
    BaselineConfig config;
    Family family = Family::gaussian;
    std::string model_fingerprint;
    std::size_t num_neurons = 0;
    std::vector<AcceptedInput> accepted;
    std::vector<FaultRecord> faults;
    std::size_t attempts = 0;
    double final_coverage = 0.0;
    double seconds = 0.0;  // wall clock, not part of deterministic output
    BaselineTermination termination = BaselineTermination::budget_exhausted;
};

/// Random-mutation selection loop: attempt i perturbs dataset item i mod N
/// with a magnitude drawn from the family's sweep range (or the fixed one)
/// and keeps the input iff the metric grows. Faults are recorded among the
/// kept inputs. `profile` is required for KMNC.
BaselineResult baseline_campaign(const Model& model, const Dataset& dataset, Family family, const BaselineConfig& cfg,
                                 const KmncProfile* profile = nullptr);

}  // namespace themis
