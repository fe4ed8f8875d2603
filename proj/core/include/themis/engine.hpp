#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "themis/model.hpp"

namespace themis {

using ClassId = std::size_t;

/// Flattened post-activation values of one forward pass plus the final output.
struct ActivationTrace {
    std::vector<double> values;
    Tensor output;
};

/// Every layer's output from one forward pass. outputs[0] is the input,
/// outputs[i + 1] the output of layer i.
struct ForwardTape {
    std::vector<Tensor> outputs;
};

/// Parameter gradients, one entry per layer; parameterless layers hold empty tensors.
struct ParamGrads {
    std::vector<Tensor> weight;
    std::vector<Tensor> bias;
};

struct ValueAndGradient {
    double value = 0.0;
    Tensor gradient;
};

struct LossAndGrads {
    double loss = 0.0;
    ParamGrads grads;
};

/// Scalar objective over a trace. Must return the objective value and write
/// d(objective)/d(values[j]) into `dvalues` (pre-sized to num_neurons, zeroed).
using TraceObjective = std::function<double(const ActivationTrace& trace, std::span<double> dvalues)>;

ForwardTape record_forward(const Model& model, const Tensor& input);
ActivationTrace trace_from_tape(const Model& model, const ForwardTape& tape);
ActivationTrace forward(const Model& model, const Tensor& input);

/// Index of the largest value; ties go to the lowest index.
ClassId argmax(std::span<const double> values);
ClassId predict(const Model& model, const Tensor& input);

ValueAndGradient value_and_input_gradient(const Model& model, const Tensor& input, const TraceObjective& objective);
Tensor input_gradient(const Model& model, const Tensor& input, const TraceObjective& objective);

/// Cross-entropy of the softmax output against `label`, and its gradient with
/// respect to the input. Computed from the logits for stability.
ValueAndGradient loss_input_gradient(const Model& model, const Tensor& input, ClassId label);

/// Mean cross-entropy over the batch and its parameter gradients.
LossAndGrads param_gradients(const Model& model, std::span<const Tensor> inputs, std::span<const ClassId> labels);

ParamGrads zero_grads(const Model& model);

/// weight -= learning_rate * grad for every parameter.
void apply_sgd_step(Model& model, const ParamGrads& grads, double learning_rate);

struct TrainConfig {
    std::size_t epochs = 5;
    double learning_rate = 0.1;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
};

/// Minibatch SGD on mean cross-entropy. Shuffling is drawn from `cfg.seed`,
/// so a fixed seed reproduces the returned model bit-for-bit.
[[nodiscard]] Model sgd_train(Model model, std::span<const Tensor> inputs, std::span<const ClassId> labels, const TrainConfig& cfg);

/// Fraction of inputs whose prediction equals the label.
double accuracy(const Model& model, std::span<const Tensor> inputs, std::span<const ClassId> labels);

}  // namespace themis
