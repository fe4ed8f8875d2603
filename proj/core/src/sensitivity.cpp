#include "themis/sensitivity.hpp"

#include <cmath>
#include <set>
#include <tuple>

#include "themis/parallel.hpp"

namespace themis {

void SensitivityStore::append(std::span<const double> diff) {
    if (diff.size() != samples_.size())
        throw ShapeError("sensitivity vector has " + std::to_string(diff.size()) + " entries, store expects " +
                         std::to_string(samples_.size()));
    for (auto v : diff)
        if (!(v >= 0.0) || !std::isfinite(v)) throw Error("sensitivity samples must be finite and non-negative");
    for (std::size_t j = 0; j < diff.size(); ++j) samples_[j].push_back(diff[j]);
    ++processed_;
}

PairSensitivity sensitivity_of_pair(const Model& model, const ActivationTrace& clean, const Tensor& perturbed) {
    const auto pert = forward(model, perturbed);
    PairSensitivity out;
    out.diff.resize(clean.values.size());
    for (std::size_t j = 0; j < out.diff.size(); ++j) out.diff[j] = std::abs(pert.values[j] - clean.values[j]);
    out.clean_prediction = argmax(clean.output.values());
    out.perturbed_prediction = argmax(pert.output.values());
    return out;
}

PairSensitivity sensitivity_of_pair(const Model& model, const Tensor& clean, const Tensor& perturbed) {
    return sensitivity_of_pair(model, forward(model, clean), perturbed);
}

BatchOutcome process_batch(const Model& model, std::span<const Candidate> batch, std::size_t iteration,
                           SensitivityStore& store, std::vector<FaultRecord>& faults) {
    if (batch.empty()) throw Error("process_batch: empty batch");
    if (store.num_neurons() != model.num_neurons())
        throw ShapeError("process_batch: store tracks " + std::to_string(store.num_neurons()) +
                         " neurons, model has " + std::to_string(model.num_neurons()));

    std::vector<PairSensitivity> results(batch.size());
    parallel_for(batch.size(), [&](std::size_t i) {
        results[i] = sensitivity_of_pair(model, batch[i].clean, batch[i].perturbed);
    });

    using Key = std::tuple<std::size_t, std::string, std::size_t>;
    std::set<Key> seen;
    for (const auto& f : faults) seen.emplace(f.input_id, to_string(f.spec), f.iteration);

    BatchOutcome outcome;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& r = results[i];
        store.append(r.diff);
        for (auto d : r.diff) outcome.total_sensitivity += d;
        if (!r.is_fault()) continue;
        const auto& c = batch[i];
        if (!seen.emplace(c.input_id, to_string(c.spec), iteration).second) continue;
        faults.push_back(FaultRecord{c.input_id, c.spec, r.clean_prediction, r.perturbed_prediction, iteration,
                                     c.label, c.perturbed});
        ++outcome.new_faults;
    }
    return outcome;
}

}  // namespace themis
