#include "themis/engine.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "themis/rng.hpp"

namespace themis {

namespace {

Tensor dense_forward(const Layer& l, const Tensor& x) {
    const auto out = l.weight.shape()[0];
    const auto in = l.weight.shape()[1];
    Tensor y({out});
    const double* w = l.weight.data().data();
    for (std::size_t o = 0; o < out; ++o) {
        double s = l.bias[o];
        const double* row = w + o * in;
        for (std::size_t i = 0; i < in; ++i) s += row[i] * x[i];
        y[o] = s;
    }
    return y;
}

Tensor conv_forward(const Layer& l, const Tensor& x) {
    const auto& ws = l.weight.shape();
    const auto f_n = ws[0], c_n = ws[1], kh = ws[2], kw = ws[3];
    const auto h = l.input_shape[1], w = l.input_shape[2];
    const auto oh = l.output_shape[1], ow = l.output_shape[2];
    const auto s = l.stride;
    Tensor y(l.output_shape);
    for (std::size_t f = 0; f < f_n; ++f)
        for (std::size_t r = 0; r < oh; ++r)
            for (std::size_t c = 0; c < ow; ++c) {
                double acc = l.bias[f];
                for (std::size_t ch = 0; ch < c_n; ++ch)
                    for (std::size_t i = 0; i < kh; ++i) {
                        const double* xrow = &x.data()[(ch * h + r * s + i) * w + c * s];
                        const double* krow = &l.weight.data()[((f * c_n + ch) * kh + i) * kw];
                        for (std::size_t j = 0; j < kw; ++j) acc += krow[j] * xrow[j];
                    }
                y[(f * oh + r) * ow + c] = acc;
            }
    return y;
}

Tensor maxpool_forward(const Layer& l, const Tensor& x) {
    const auto c_n = l.input_shape[0], h = l.input_shape[1], w = l.input_shape[2];
    const auto oh = l.output_shape[1], ow = l.output_shape[2];
    Tensor y(l.output_shape);
    for (std::size_t ch = 0; ch < c_n; ++ch)
        for (std::size_t r = 0; r < oh; ++r)
            for (std::size_t c = 0; c < ow; ++c) {
                const std::size_t base = (ch * h + 2 * r) * w + 2 * c;
                y[(ch * oh + r) * ow + c] =
                    std::max(std::max(x[base], x[base + 1]), std::max(x[base + w], x[base + w + 1]));
            }
    return y;
}

Tensor softmax_forward(const Tensor& x) {
    Tensor y(x.shape());
    const double m = *std::max_element(x.data().begin(), x.data().end());
    double z = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) z += (y[i] = std::exp(x[i] - m));
    for (auto& v : y.values()) v /= z;
    return y;
}

Tensor layer_forward(const Layer& l, const Tensor& x) {
    switch (l.kind) {
        case LayerKind::dense: return dense_forward(l, x);
        case LayerKind::conv2d: return conv_forward(l, x);
        case LayerKind::relu: {
            Tensor y = x;
            for (auto& v : y.values()) v = v > 0.0 ? v : 0.0;
            return y;
        }
        case LayerKind::maxpool2x2: return maxpool_forward(l, x);
        case LayerKind::flatten: return x.reshaped(l.output_shape);
        case LayerKind::softmax: return softmax_forward(x);
    }
    return x;
}

/// Gradient with respect to the layer input given the gradient at its output.
/// Accumulates parameter gradients into gw/gb when they are non-null.
Tensor layer_backward(const Layer& l, const Tensor& x, const Tensor& y, const Tensor& gy, Tensor* gw, Tensor* gb) {
    Tensor gx(l.input_shape);
    switch (l.kind) {
        case LayerKind::dense: {
            const auto out = l.weight.shape()[0], in = l.weight.shape()[1];
            const double* w = l.weight.data().data();
            for (std::size_t o = 0; o < out; ++o) {
                const double g = gy[o];
                if (g == 0.0) continue;
                const double* row = w + o * in;
                for (std::size_t i = 0; i < in; ++i) gx[i] += g * row[i];
                if (gw) {
                    double* grow = gw->data().data() + o * in;
                    for (std::size_t i = 0; i < in; ++i) grow[i] += g * x[i];
                }
                if (gb) (*gb)[o] += g;
            }
            break;
        }
        case LayerKind::conv2d: {
            const auto& ws = l.weight.shape();
            const auto f_n = ws[0], c_n = ws[1], kh = ws[2], kw = ws[3];
            const auto h = l.input_shape[1], w = l.input_shape[2];
            const auto oh = l.output_shape[1], ow = l.output_shape[2];
            const auto s = l.stride;
            for (std::size_t f = 0; f < f_n; ++f)
                for (std::size_t r = 0; r < oh; ++r)
                    for (std::size_t c = 0; c < ow; ++c) {
                        const double g = gy[(f * oh + r) * ow + c];
                        if (g == 0.0) continue;
                        if (gb) (*gb)[f] += g;
                        for (std::size_t ch = 0; ch < c_n; ++ch)
                            for (std::size_t i = 0; i < kh; ++i) {
                                const std::size_t xoff = (ch * h + r * s + i) * w + c * s;
                                const std::size_t koff = ((f * c_n + ch) * kh + i) * kw;
                                for (std::size_t j = 0; j < kw; ++j) {
                                    gx[xoff + j] += g * l.weight[koff + j];
                                    if (gw) (*gw)[koff + j] += g * x[xoff + j];
                                }
                            }
                    }
            break;
        }
        case LayerKind::relu:
            // Derivative at the kink (x == 0) is taken as 0.
            for (std::size_t i = 0; i < x.size(); ++i) gx[i] = x[i] > 0.0 ? gy[i] : 0.0;
            break;
        case LayerKind::maxpool2x2: {
            const auto c_n = l.input_shape[0], h = l.input_shape[1], w = l.input_shape[2];
            const auto oh = l.output_shape[1], ow = l.output_shape[2];
            for (std::size_t ch = 0; ch < c_n; ++ch)
                for (std::size_t r = 0; r < oh; ++r)
                    for (std::size_t c = 0; c < ow; ++c) {
                        const std::size_t base = (ch * h + 2 * r) * w + 2 * c;
                        const std::size_t cand[4] = {base, base + 1, base + w, base + w + 1};
                        std::size_t best = cand[0];
                        for (auto k : cand)
                            if (x[k] > x[best]) best = k;
                        gx[best] += gy[(ch * oh + r) * ow + c];
                    }
            break;
        }
        case LayerKind::flatten: gx = gy.reshaped(l.input_shape); break;
        case LayerKind::softmax: {
            double dot = 0.0;
            for (std::size_t i = 0; i < y.size(); ++i) dot += gy[i] * y[i];
            for (std::size_t i = 0; i < y.size(); ++i) gx[i] = y[i] * (gy[i] - dot);
            break;
        }
    }
    return gx;
}

/// Reverse pass from the output of layer `top` down to the input. `injected[i]`
/// (possibly empty) is added to the gradient flowing out of layer i.
Tensor backward(const Model& model, const ForwardTape& tape, std::vector<Tensor>& injected, std::size_t top,
                ParamGrads* pgrads) {
    const auto& layers = model.layers();
    Tensor g;
    for (std::size_t k = top + 1; k-- > 0;) {
        const Tensor& inj = injected[k];
        if (g.empty())
            g = inj.empty() ? Tensor(layers[k].output_shape) : inj;
        else if (!inj.empty())
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += inj[i];
        Tensor* gw = pgrads && layers[k].has_params() ? &pgrads->weight[k] : nullptr;
        Tensor* gb = pgrads && layers[k].has_params() ? &pgrads->bias[k] : nullptr;
        g = layer_backward(layers[k], tape.outputs[k], tape.outputs[k + 1], g, gw, gb);
    }
    return g;
}

void require_input_shape(const Model& model, const Tensor& input) {
    if (input.shape() != model.input_shape())
        throw ShapeError("input shape " + shape_to_string(input.shape()) + " does not match model input " +
                         shape_to_string(model.input_shape()));
}

void require_softmax_head(const Model& model) {
    if (!model.ends_with_softmax() || model.layers().size() < 2)
        throw Error("cross-entropy requires a model whose final layer is softmax");
}

/// Cross-entropy and its gradient at the logits (the softmax layer's input).
double logits_ce(const ForwardTape& tape, ClassId label, Tensor& glogits) {
    const Tensor& logits = tape.outputs[tape.outputs.size() - 2];
    const Tensor& p = tape.outputs.back();
    if (label >= p.size())
        throw Error("label " + std::to_string(label) + " out of range for " + std::to_string(p.size()) + " classes");
    const double m = *std::max_element(logits.data().begin(), logits.data().end());
    double z = 0.0;
    for (auto v : logits.values()) z += std::exp(v - m);
    glogits = p;
    glogits[label] -= 1.0;
    return std::log(z) + m - logits[label];
}

}  // namespace

ForwardTape record_forward(const Model& model, const Tensor& input) {
    require_input_shape(model, input);
    input.require_finite("model input");
    ForwardTape tape;
    tape.outputs.reserve(model.layers().size() + 1);
    tape.outputs.push_back(input);
    for (std::size_t i = 0; i < model.layers().size(); ++i) {
        tape.outputs.push_back(layer_forward(model.layers()[i], tape.outputs.back()));
        if (!tape.outputs.back().all_finite())
            throw NonFiniteError("non-finite activation at layer " + std::to_string(i));
    }
    return tape;
}

ActivationTrace trace_from_tape(const Model& model, const ForwardTape& tape) {
    ActivationTrace t;
    t.values.resize(model.num_neurons());
    for (const auto& slot : model.trace_layout()) {
        const auto& out = tape.outputs[slot.layer + 1];
        std::copy(out.data().begin(), out.data().end(), t.values.begin() + static_cast<std::ptrdiff_t>(slot.offset));
    }
    t.output = tape.outputs.back();
    return t;
}

ActivationTrace forward(const Model& model, const Tensor& input) {
    return trace_from_tape(model, record_forward(model, input));
}

ClassId argmax(std::span<const double> values) {
    if (values.empty()) throw Error("argmax of empty vector");
    ClassId best = 0;
    for (std::size_t i = 1; i < values.size(); ++i)
        if (values[i] > values[best]) best = i;
    return best;
}

ClassId predict(const Model& model, const Tensor& input) {
    Tensor x = input;
    for (const auto& l : model.layers()) x = layer_forward(l, x);
    return argmax(x.values());
}

ValueAndGradient value_and_input_gradient(const Model& model, const Tensor& input, const TraceObjective& objective) {
    const ForwardTape tape = record_forward(model, input);
    const ActivationTrace trace = trace_from_tape(model, tape);
    std::vector<double> dvalues(model.num_neurons(), 0.0);
    ValueAndGradient out;
    out.value = objective(trace, dvalues);

    std::vector<Tensor> injected(model.layers().size());
    for (const auto& slot : model.trace_layout()) {
        Tensor g(model.layers()[slot.layer].output_shape);
        std::copy_n(dvalues.begin() + static_cast<std::ptrdiff_t>(slot.offset), slot.size, g.data().begin());
        injected[slot.layer] = std::move(g);
    }
    out.gradient = backward(model, tape, injected, model.layers().size() - 1, nullptr);
    return out;
}

Tensor input_gradient(const Model& model, const Tensor& input, const TraceObjective& objective) {
    return value_and_input_gradient(model, input, objective).gradient;
}

ValueAndGradient loss_input_gradient(const Model& model, const Tensor& input, ClassId label) {
    require_softmax_head(model);
    const ForwardTape tape = record_forward(model, input);
    std::vector<Tensor> injected(model.layers().size());
    const std::size_t logits_layer = model.layers().size() - 2;
    ValueAndGradient out;
    out.value = logits_ce(tape, label, injected[logits_layer]);
    out.gradient = backward(model, tape, injected, logits_layer, nullptr);
    return out;
}

ParamGrads zero_grads(const Model& model) {
    ParamGrads g;
    for (const auto& l : model.layers()) {
        g.weight.push_back(l.has_params() ? Tensor(l.weight.shape()) : Tensor());
        g.bias.push_back(l.has_params() ? Tensor(l.bias.shape()) : Tensor());
    }
    return g;
}

namespace {

/// Adds one example's scaled loss and parameter gradients into `out`.
void accumulate_example(const Model& model, const Tensor& input, ClassId label, double scale, LossAndGrads& out) {
    const std::size_t logits_layer = model.layers().size() - 2;
    const ForwardTape tape = record_forward(model, input);
    std::vector<Tensor> injected(model.layers().size());
    out.loss += logits_ce(tape, label, injected[logits_layer]) * scale;
    for (auto& v : injected[logits_layer].values()) v *= scale;
    backward(model, tape, injected, logits_layer, &out.grads);
}

}  // namespace

LossAndGrads param_gradients(const Model& model, std::span<const Tensor> inputs, std::span<const ClassId> labels) {
    require_softmax_head(model);
    if (inputs.size() != labels.size()) throw Error("param_gradients: inputs and labels differ in length");
    if (inputs.empty()) throw Error("param_gradients: empty batch");
    LossAndGrads out;
    out.grads = zero_grads(model);
    const double inv = 1.0 / static_cast<double>(inputs.size());
    for (std::size_t b = 0; b < inputs.size(); ++b) accumulate_example(model, inputs[b], labels[b], inv, out);
    return out;
}

void apply_sgd_step(Model& model, const ParamGrads& grads, double learning_rate) {
    auto& layers = model.mutable_layers();
    for (std::size_t k = 0; k < layers.size(); ++k) {
        if (!layers[k].has_params()) continue;
        auto& w = layers[k].weight;
        auto& b = layers[k].bias;
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= learning_rate * grads.weight[k][i];
        for (std::size_t i = 0; i < b.size(); ++i) b[i] -= learning_rate * grads.bias[k][i];
    }
}

Model sgd_train(Model model, std::span<const Tensor> inputs, std::span<const ClassId> labels,
                const TrainConfig& cfg) {
    if (inputs.empty()) throw Error("sgd_train: empty dataset");
    if (inputs.size() != labels.size()) throw Error("sgd_train: inputs and labels differ in length");
    if (!(cfg.learning_rate > 0.0)) throw Error("sgd_train: learning rate must be positive");
    if (cfg.batch_size == 0) throw Error("sgd_train: batch size must be positive");

    require_softmax_head(model);
    std::vector<std::size_t> order(inputs.size());
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(derive_seed(cfg.seed, {0x747261696e, epoch}));
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            LossAndGrads step;
            step.grads = zero_grads(model);
            const double inv = 1.0 / static_cast<double>(end - start);
            for (std::size_t i = start; i < end; ++i) {
                if (labels[order[i]] >= model.num_classes()) throw Error("sgd_train: label out of range");
                accumulate_example(model, inputs[order[i]], labels[order[i]], inv, step);
            }
            apply_sgd_step(model, step.grads, cfg.learning_rate);
        }
    }
    return model;
}

double accuracy(const Model& model, std::span<const Tensor> inputs, std::span<const ClassId> labels) {
    if (inputs.empty()) return 0.0;
    std::size_t hit = 0;
    for (std::size_t i = 0; i < inputs.size(); ++i) hit += predict(model, inputs[i]) == labels[i];
    return static_cast<double>(hit) / static_cast<double>(inputs.size());
}

}  // namespace themis
