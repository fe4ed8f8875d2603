#include "themis/model.hpp"

#include <cmath>
#include <charconv>

#include "themis/rng.hpp"

namespace themis {

std::string_view to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::dense: return "dense";
        case LayerKind::conv2d: return "conv2d";
        case LayerKind::relu: return "relu";
        case LayerKind::maxpool2x2: return "maxpool2x2";
        case LayerKind::flatten: return "flatten";
        case LayerKind::softmax: return "softmax";
    }
    return "?";
}

std::optional<LayerKind> parse_layer_kind(std::string_view name) {
    for (auto k : {LayerKind::dense, LayerKind::conv2d, LayerKind::relu, LayerKind::maxpool2x2, LayerKind::flatten,
                   LayerKind::softmax})
        if (to_string(k) == name) return k;
    return std::nullopt;
}

namespace {

Shape infer_output(const Layer& layer, const Shape& in, std::size_t index) {
    auto fail = [&](const std::string& why) {
        return ShapeError("layer " + std::to_string(index) + " (" + std::string(to_string(layer.kind)) + "): " + why +
                          ", input " + shape_to_string(in));
    };
    switch (layer.kind) {
        case LayerKind::dense: {
            const auto& w = layer.weight.shape();
            if (w.size() != 2) throw fail("weight must be [out, in]");
            if (layer.bias.shape() != Shape{w[0]}) throw fail("bias must be [out]");
            if (shape_size(in) != w[1]) throw fail("expects " + std::to_string(w[1]) + " inputs");
            return {w[0]};
        }
        case LayerKind::conv2d: {
            const auto& w = layer.weight.shape();
            if (w.size() != 4) throw fail("kernel must be [filters, channels, kh, kw]");
            if (layer.bias.shape() != Shape{w[0]}) throw fail("bias must be [filters]");
            if (in.size() != 3 || in[0] != w[1]) throw fail("expects [channels, h, w] with " + std::to_string(w[1]) +
                                                            " channels");
            if (layer.stride == 0) throw fail("stride must be positive");
            if (in[1] < w[2] || in[2] < w[3]) throw fail("kernel larger than input");
            return {w[0], (in[1] - w[2]) / layer.stride + 1, (in[2] - w[3]) / layer.stride + 1};
        }
        case LayerKind::relu: return in;
        case LayerKind::maxpool2x2:
            if (in.size() != 3 || in[1] < 2 || in[2] < 2) throw fail("expects [channels, h>=2, w>=2]");
            return {in[0], in[1] / 2, in[2] / 2};
        case LayerKind::flatten: return {shape_size(in)};
        case LayerKind::softmax:
            if (in.size() != 1) throw fail("expects a vector");
            return in;
    }
    throw fail("unknown kind");
}

}  // namespace

Model::Model(std::string arch_name, Shape input_shape, std::vector<Layer> layers)
    : arch_name_(std::move(arch_name)), input_shape_(std::move(input_shape)), layers_(std::move(layers)) {
    if (layers_.empty()) throw ShapeError("model has no layers");
    if (input_shape_.empty() || shape_size(input_shape_) == 0) throw ShapeError("model input shape is empty");
    Shape cur = input_shape_;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        auto& l = layers_[i];
        l.input_shape = cur;
        l.output_shape = infer_output(l, cur, i);
        cur = l.output_shape;
    }
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const bool pre_activation =
            i + 1 < layers_.size() &&
            (layers_[i + 1].kind == LayerKind::relu || layers_[i + 1].kind == LayerKind::softmax);
        if (layers_[i].kind == LayerKind::flatten || pre_activation) continue;
        const auto n = shape_size(layers_[i].output_shape);
        layout_.push_back({i, num_neurons_, n});
        num_neurons_ += n;
    }
}

std::size_t Model::num_parameters() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
    return n;
}

std::pair<std::size_t, std::size_t> Model::locate_neuron(std::size_t neuron) const {
    for (const auto& s : layout_)
        if (neuron < s.offset + s.size) return {s.layer, neuron - s.offset};
    throw Error("neuron index " + std::to_string(neuron) + " out of range");
}

bool operator==(const Model& a, const Model& b) {
    if (a.arch_name_ != b.arch_name_ || a.input_shape_ != b.input_shape_ || a.layers_.size() != b.layers_.size())
        return false;
    for (std::size_t i = 0; i < a.layers_.size(); ++i) {
        const auto& x = a.layers_[i];
        const auto& y = b.layers_[i];
        if (x.kind != y.kind || x.stride != y.stride || !(x.weight == y.weight) || !(x.bias == y.bias)) return false;
    }
    return true;
}

Layer dense_layer(Tensor weight, Tensor bias) {
    Layer l;
    l.kind = LayerKind::dense;
    l.weight = std::move(weight);
    l.bias = std::move(bias);
    return l;
}

Layer conv2d_layer(Tensor weight, Tensor bias, std::size_t stride) {
    Layer l;
    l.kind = LayerKind::conv2d;
    l.weight = std::move(weight);
    l.bias = std::move(bias);
    l.stride = stride;
    return l;
}

namespace {

Layer plain_layer(LayerKind kind) {
    Layer l;
    l.kind = kind;
    return l;
}

}  // namespace

Layer relu_layer() { return plain_layer(LayerKind::relu); }
Layer maxpool_layer() { return plain_layer(LayerKind::maxpool2x2); }
Layer flatten_layer() { return plain_layer(LayerKind::flatten); }
Layer softmax_layer() { return plain_layer(LayerKind::softmax); }

namespace {

Tensor he_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
    Tensor t(std::move(shape));
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (auto& v : t.values()) v = rng.uniform(-limit, limit);
    return t;
}

}  // namespace

Model make_mlp(const std::vector<std::size_t>& widths, std::uint64_t seed) {
    if (widths.size() < 2) throw Error("mlp needs at least input and output widths");
    Rng rng(derive_seed(seed, {0x6d6c70}));
    std::vector<Layer> layers;
    std::string name = "mlp:";
    for (std::size_t i = 0; i < widths.size(); ++i) name += (i ? "-" : "") + std::to_string(widths[i]);
    for (std::size_t i = 1; i < widths.size(); ++i) {
        layers.push_back(dense_layer(he_uniform({widths[i], widths[i - 1]}, widths[i - 1], rng), Tensor({widths[i]})));
        layers.push_back(i + 1 < widths.size() ? relu_layer() : softmax_layer());
    }
    return Model(name, {widths.front()}, std::move(layers));
}

Model make_lenet1(std::uint64_t seed) {
    Rng rng(derive_seed(seed, {0x6c656e6574}));
    std::vector<Layer> layers;
    layers.push_back(conv2d_layer(he_uniform({4, 1, 5, 5}, 25, rng), Tensor({4})));
    layers.push_back(relu_layer());
    layers.push_back(maxpool_layer());
    layers.push_back(conv2d_layer(he_uniform({12, 4, 5, 5}, 100, rng), Tensor({12})));
    layers.push_back(relu_layer());
    layers.push_back(maxpool_layer());
    layers.push_back(flatten_layer());
    layers.push_back(dense_layer(he_uniform({10, 192}, 192, rng), Tensor({10})));
    layers.push_back(softmax_layer());
    return Model("lenet1", {1, 28, 28}, std::move(layers));
}

Model make_architecture(std::string_view spec, std::uint64_t seed) {
    if (spec == "lenet1") return make_lenet1(seed);
    if (spec.starts_with("mlp:")) {
        std::vector<std::size_t> widths;
        auto rest = spec.substr(4);
        while (!rest.empty()) {
            auto dash = rest.find('-');
            auto tok = rest.substr(0, dash);
            std::size_t w = 0;
            auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), w);
            if (ec != std::errc{} || p != tok.data() + tok.size() || w == 0)
                throw Error("bad mlp width '" + std::string(tok) + "'");
            widths.push_back(w);
            if (dash == std::string_view::npos) break;
            rest = rest.substr(dash + 1);
        }
        return make_mlp(widths, seed);
    }
    throw Error("unknown architecture '" + std::string(spec) + "' (expected mlp:W0-W1-... or lenet1)");
}

}  // namespace themis
