#pragma once

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "themis/dataset.hpp"
#include "themis/engine.hpp"
#include "themis/model.hpp"
#include "themis/rng.hpp"

namespace themis::test {

inline Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(shape);
    for (auto& v : t.values()) v = rng.uniform(lo, hi);
    return t;
}

/// Single dense layer with identity weights and zero bias.
inline Model identity_dense(std::size_t n) {
    Tensor w({n, n});
    for (std::size_t i = 0; i < n; ++i) w[i * n + i] = 1.0;
    return Model("identity", {n}, {dense_layer(w, Tensor({n}))});
}

/// Central differences of f at x, one coordinate at a time.
inline Tensor fd_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double h = 1e-5) {
    Tensor g(x.shape());
    Tensor y = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        y[i] = x[i] + h;
        const double up = f(y);
        y[i] = x[i] - h;
        const double down = f(y);
        y[i] = x[i];
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

/// ||a - b|| / max(||a||, ||b||, floor).
inline double relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-10) {
    double d = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        d += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return std::sqrt(d) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

/// Fixed random linear functional of the trace: sum_j c_j * values_j.
struct LinearObjective {
    std::vector<double> c;

    LinearObjective(std::size_t n, Rng& rng) : c(n) {
        for (auto& v : c) v = rng.uniform(-1.0, 1.0);
    }

    double value(const ActivationTrace& t) const {
        double s = 0.0;
        for (std::size_t j = 0; j < c.size(); ++j) s += c[j] * t.values[j];
        return s;
    }

    TraceObjective objective() const {
        return [this](const ActivationTrace& t, std::span<double> d) {
            for (std::size_t j = 0; j < c.size(); ++j) d[j] += c[j];
            return value(t);
        };
    }
};

/// Smallest |pre-activation| feeding any relu or maxpool tie gap; used to keep
/// finite differences away from kinks.
inline double kink_margin(const Model& model, const Tensor& input) {
    const auto tape = record_forward(model, input);
    double margin = 1e9;
    for (std::size_t i = 0; i < model.layers().size(); ++i) {
        const auto& in = tape.outputs[i];
        if (model.layers()[i].kind == LayerKind::relu) {
            for (double v : in.values()) margin = std::min(margin, std::abs(v));
        } else if (model.layers()[i].kind == LayerKind::maxpool2x2) {
            const auto& s = in.shape();
            for (std::size_t c = 0; c < s[0]; ++c)
                for (std::size_t y = 0; y + 1 < s[1]; y += 2)
                    for (std::size_t x = 0; x + 1 < s[2]; x += 2) {
                        std::vector<double> w;
                        for (std::size_t dy = 0; dy < 2; ++dy)
                            for (std::size_t dx = 0; dx < 2; ++dx) w.push_back(in[(c * s[1] + y + dy) * s[2] + x + dx]);
                        std::sort(w.begin(), w.end());
                        margin = std::min(margin, w[3] - w[2]);
                    }
        }
    }
    return margin;
}

/// Fresh directory under the system temp dir, removed on destruction.
class ScratchDir {
public:
    explicit ScratchDir(const std::string& tag)
        : path_(std::filesystem::temp_directory_path() / ("themis-" + tag + "-" + std::to_string(::getpid()))) {
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~ScratchDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    ScratchDir(const ScratchDir&) = delete;
    ScratchDir& operator=(const ScratchDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& data) {
    std::ofstream out(p, std::ios::binary);
    out << data;
}

inline Dataset mnist_all() {
    return load_idx(std::string(THEMIS_TEST_DATA_DIR) + "/mnist5k-images-idx3-ubyte",
                    std::string(THEMIS_TEST_DATA_DIR) + "/mnist5k-labels-idx1-ubyte");
}

/// The desk-scale reference split: 2000 train, 1500 campaign pool, 1500 held out.
inline DataSplits mnist_splits() { return split_dataset(mnist_all(), 2000, 1500); }

/// MLP 784-64-10 trained for 5 epochs on the 2000-image training split.
inline Model reference_mlp(const Dataset& train_flat, std::uint64_t seed = 1) {
    TrainConfig tc;
    tc.seed = seed;
    return sgd_train(make_mlp({784, 64, 10}, seed), train_flat.inputs, train_flat.labels, tc);
}

}  // namespace themis::test
