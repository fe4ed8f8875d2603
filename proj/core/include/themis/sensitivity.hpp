#pragma once

#include <span>
#include <vector>

#include "themis/engine.hpp"
#include "themis/perturb.hpp"

namespace themis {

/// Per-neuron sensitivity samples |N_j(I + E) - N_j(I)|, one value per
/// processed input, kept in full for the posterior fits.
class SensitivityStore {
public:
    SensitivityStore() = default;
    explicit SensitivityStore(std::size_t num_neurons) : samples_(num_neurons) {}

    /// Appends one diff vector; rejects wrong lengths and negative/non-finite values.
    void append(std::span<const double> diff);

    std::size_t num_neurons() const noexcept { return samples_.size(); }
    std::size_t inputs_processed() const noexcept { return processed_; }
    bool empty() const noexcept { return processed_ == 0; }
    std::span<const double> samples(std::size_t neuron) const { return samples_.at(neuron); }

private:
    std::vector<std::vector<double>> samples_;
    std::size_t processed_ = 0;
};

/// A perturbed input whose prediction differs from the clean prediction.
struct FaultRecord {
    std::size_t input_id = 0;
    PerturbSpec spec;
    ClassId clean_prediction = 0;
    ClassId perturbed_prediction = 0;
    std::size_t iteration = 0;
    ClassId label = 0;  // ground truth of the clean input
    Tensor perturbed_input;
};

struct PairSensitivity {
    std::vector<double> diff;
    ClassId clean_prediction = 0;
    ClassId perturbed_prediction = 0;

    bool is_fault() const noexcept { return clean_prediction != perturbed_prediction; }
};

PairSensitivity sensitivity_of_pair(const Model& model, const Tensor& clean, const Tensor& perturbed);
/// Same, reusing an already computed clean trace.
PairSensitivity sensitivity_of_pair(const Model& model, const ActivationTrace& clean, const Tensor& perturbed);

/// One clean input and its perturbed counterpart.
struct Candidate {
    std::size_t input_id = 0;
    ClassId label = 0;
    Tensor clean;
    Tensor perturbed;
    PerturbSpec spec;
};

struct BatchOutcome {
    std::size_t new_faults = 0;
    /// Sum over inputs of the summed per-neuron sensitivity.
    double total_sensitivity = 0.0;
};

/// Phase 1 over a batch: appends one diff vector per candidate (in candidate
/// order) and one FaultRecord per prediction change. Faults already present
/// with the same (input_id, spec, iteration) are not duplicated.
BatchOutcome process_batch(const Model& model, std::span<const Candidate> batch, std::size_t iteration,
                           SensitivityStore& store, std::vector<FaultRecord>& faults);

}  // namespace themis
