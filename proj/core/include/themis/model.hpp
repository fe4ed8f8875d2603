#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "themis/tensor.hpp"

namespace themis {

enum class LayerKind { dense, conv2d, relu, maxpool2x2, flatten, softmax };

std::string_view to_string(LayerKind kind);
std::optional<LayerKind> parse_layer_kind(std::string_view name);

/// One layer of a sequential network.
///
/// dense:   weight [out, in], bias [out]; input must hold `in` values.
/// conv2d:  weight [filters, channels, kh, kw], bias [filters], `stride`,
///          valid padding; input is [channels, height, width].
/// Other kinds carry no parameters.
struct Layer {
    LayerKind kind = LayerKind::relu;
    Tensor weight;
    Tensor bias;
    std::size_t stride = 1;

    Shape input_shape;
    Shape output_shape;

    bool has_params() const noexcept { return kind == LayerKind::dense || kind == LayerKind::conv2d; }
};

/// Where a traced layer's activations live inside ActivationTrace::values.
struct TraceSlot {
    std::size_t layer = 0;
    std::size_t offset = 0;
    std::size_t size = 0;
};

/// Sequential classifier.
///
/// A "neuron" is one scalar of a post-activation layer output. Layer i is
/// traced unless it is a flatten (a pure relabeling) or its output is the
/// pre-activation input of a following relu/softmax. Under that rule the
/// softmax probabilities are neurons, and a dense layer with no activation
/// after it is traced as-is.
class Model {
public:
    Model() = default;
    /// Validates shapes layer-to-layer and builds the trace layout.
    Model(std::string arch_name, Shape input_shape, std::vector<Layer> layers);

    const std::string& arch_name() const noexcept { return arch_name_; }
    const Shape& input_shape() const noexcept { return input_shape_; }
    const Shape& output_shape() const noexcept { return layers_.back().output_shape; }
    const std::vector<Layer>& layers() const noexcept { return layers_; }
    std::vector<Layer>& mutable_layers() noexcept { return layers_; }
    std::size_t num_neurons() const noexcept { return num_neurons_; }
    const std::vector<TraceSlot>& trace_layout() const noexcept { return layout_; }
    std::size_t num_classes() const { return shape_size(output_shape()); }
    std::size_t num_parameters() const;

    /// Layer index and in-layer offset of a neuron.
    std::pair<std::size_t, std::size_t> locate_neuron(std::size_t neuron) const;

    bool ends_with_softmax() const noexcept {
        return !layers_.empty() && layers_.back().kind == LayerKind::softmax;
    }

    friend bool operator==(const Model& a, const Model& b);

private:
    std::string arch_name_;
    Shape input_shape_;
    std::vector<Layer> layers_;
    std::vector<TraceSlot> layout_;
    std::size_t num_neurons_ = 0;
};

// Layer constructors. Shapes are filled in by Model's constructor.
Layer dense_layer(Tensor weight, Tensor bias);
Layer conv2d_layer(Tensor weight, Tensor bias, std::size_t stride = 1);
Layer relu_layer();
Layer maxpool_layer();
Layer flatten_layer();
Layer softmax_layer();

/// Fully connected ReLU network with a softmax head, e.g. widths {784, 64, 10}.
/// Weights use He-uniform initialization from `seed`.
Model make_mlp(const std::vector<std::size_t>& widths, std::uint64_t seed);

/// LeNet-1 style network for 1x28x28 inputs: conv5x5(4) relu pool,
/// conv5x5(12) relu pool, dense(10) softmax.
Model make_lenet1(std::uint64_t seed);

/// Parses "mlp:784-64-10" or "lenet1".
Model make_architecture(std::string_view spec, std::uint64_t seed);

}  // namespace themis
