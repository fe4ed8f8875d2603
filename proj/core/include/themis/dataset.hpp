#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "themis/engine.hpp"

namespace themis {

/// Labeled inputs with values in [0, 1].
struct Dataset {
    std::vector<Tensor> inputs;
    std::vector<ClassId> labels;
    std::size_t num_classes = 0;

    std::size_t size() const noexcept { return inputs.size(); }
    bool empty() const noexcept { return inputs.empty(); }

    /// Items [begin, end).
    Dataset slice(std::size_t begin, std::size_t end) const;
    /// Reshapes every input; element counts must match.
    Dataset reshaped(const Shape& shape) const;
    /// Checks |inputs| == |labels| and labels < num_classes.
    void validate() const;
};

/// Concatenation; class counts must agree.
Dataset concat(const Dataset& a, const Dataset& b);

/// Big-endian IDX files: images magic 0x00000803 (u8, [count, rows, cols]),
/// labels magic 0x00000801 (u8, [count]). Pixels are scaled by 1/255 and
/// images are shaped [1, rows, cols].
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

/// Numeric CSV whose last column is the integer label. Features are min-max
/// scaled per column to [0, 1]; constant columns become 0.
Dataset load_csv(const std::filesystem::path& path, std::size_t num_classes, bool has_header = false);

/// Disjoint partition of a dataset: train, campaign pool, held-out.
struct DataSplits {
    Dataset train;
    Dataset pool;
    Dataset heldout;
};

/// First `train` items, next `pool` items, the rest held out.
DataSplits split_dataset(const Dataset& all, std::size_t train, std::size_t pool);

}  // namespace themis
