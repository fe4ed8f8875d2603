#include "themis/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "themis/serialize.hpp"

namespace themis {

Dataset Dataset::slice(std::size_t begin, std::size_t end) const {
    end = std::min(end, size());
    begin = std::min(begin, end);
    Dataset d;
    d.num_classes = num_classes;
    d.inputs.assign(inputs.begin() + static_cast<std::ptrdiff_t>(begin), inputs.begin() + static_cast<std::ptrdiff_t>(end));
    d.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(begin), labels.begin() + static_cast<std::ptrdiff_t>(end));
    return d;
}

Dataset Dataset::reshaped(const Shape& shape) const {
    Dataset d;
    d.num_classes = num_classes;
    d.labels = labels;
    d.inputs.reserve(inputs.size());
    for (const auto& x : inputs) d.inputs.push_back(x.reshaped(shape));
    return d;
}

void Dataset::validate() const {
    if (inputs.size() != labels.size()) throw Error("dataset: inputs and labels differ in count");
    for (auto l : labels)
        if (l >= num_classes) throw Error("dataset: label " + std::to_string(l) + " >= num_classes");
}

Dataset concat(const Dataset& a, const Dataset& b) {
    if (a.num_classes != b.num_classes) throw Error("concat: class counts differ");
    Dataset d = a;
    d.inputs.insert(d.inputs.end(), b.inputs.begin(), b.inputs.end());
    d.labels.insert(d.labels.end(), b.labels.begin(), b.labels.end());
    return d;
}

namespace {

std::uint32_t read_be32(const std::string& bytes, std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(bytes[at + i]);
    return v;
}

void require_bytes(const std::string& bytes, std::size_t need, const std::filesystem::path& path) {
    if (bytes.size() != need)
        throw Error("IDX file " + path.string() + ": expected " + std::to_string(need) + " bytes, found " +
                    std::to_string(bytes.size()));
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
    const std::string img = read_file(images);
    const std::string lab = read_file(labels);
    if (img.size() < 16) require_bytes(img, 16, images);
    if (lab.size() < 8) require_bytes(lab, 8, labels);
    if (read_be32(img, 0) != 0x00000803) throw Error("IDX file " + images.string() + ": bad image magic");
    if (read_be32(lab, 0) != 0x00000801) throw Error("IDX file " + labels.string() + ": bad label magic");
    const std::size_t count = read_be32(img, 4), rows = read_be32(img, 8), cols = read_be32(img, 12);
    const std::size_t label_count = read_be32(lab, 4);
    if (count != label_count)
        throw Error("IDX count mismatch: " + std::to_string(count) + " images vs " + std::to_string(label_count) +
                    " labels");
    if (rows == 0 || cols == 0) throw Error("IDX file " + images.string() + ": zero image dimension");
    require_bytes(img, 16 + count * rows * cols, images);
    require_bytes(lab, 8 + count, labels);

    Dataset d;
    d.inputs.reserve(count);
    const std::size_t px = rows * cols;
    for (std::size_t i = 0; i < count; ++i) {
        std::vector<double> v(px);
        for (std::size_t p = 0; p < px; ++p) v[p] = static_cast<unsigned char>(img[16 + i * px + p]) / 255.0;
        d.inputs.emplace_back(Shape{1, rows, cols}, std::move(v));
        d.labels.push_back(static_cast<unsigned char>(lab[8 + i]));
    }
    d.num_classes = d.labels.empty() ? 0 : *std::max_element(d.labels.begin(), d.labels.end()) + 1;
    return d;
}

Dataset load_csv(const std::filesystem::path& path, std::size_t num_classes, bool has_header) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    std::vector<std::vector<double>> rows;
    std::vector<ClassId> labels;
    std::string line;
    std::size_t line_no = 0, width = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || (has_header && line_no == 1)) continue;
        std::vector<double> cells;
        std::string_view rest = line;
        while (true) {
            const auto comma = rest.find(',');
            auto cell = rest.substr(0, comma);
            while (!cell.empty() && cell.front() == ' ') cell.remove_prefix(1);
            while (!cell.empty() && cell.back() == ' ') cell.remove_suffix(1);
            double v = 0.0;
            auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
            if (cell.empty() || ec != std::errc{} || p != cell.data() + cell.size() || !std::isfinite(v))
                throw Error(path.string() + ":" + std::to_string(line_no) + ": non-numeric cell '" +
                            std::string(cell) + "'");
            cells.push_back(v);
            if (comma == std::string_view::npos) break;
            rest = rest.substr(comma + 1);
        }
        if (cells.size() < 2) throw Error(path.string() + ":" + std::to_string(line_no) + ": need features and a label");
        if (width == 0) width = cells.size();
        if (cells.size() != width)
            throw Error(path.string() + ":" + std::to_string(line_no) + ": ragged row (" + std::to_string(cells.size()) +
                        " cells, expected " + std::to_string(width) + ")");
        const double lab = cells.back();
        if (lab < 0 || lab != std::floor(lab) || lab >= static_cast<double>(num_classes))
            throw Error(path.string() + ":" + std::to_string(line_no) + ": label " + std::to_string(lab) +
                        " not an integer in [0, " + std::to_string(num_classes) + ")");
        labels.push_back(static_cast<ClassId>(lab));
        cells.pop_back();
        rows.push_back(std::move(cells));
    }
    Dataset d;
    d.num_classes = num_classes;
    d.labels = std::move(labels);
    if (rows.empty()) return d;
    const std::size_t f = rows.front().size();
    for (std::size_t c = 0; c < f; ++c) {
        double lo = rows[0][c], hi = rows[0][c];
        for (const auto& r : rows) lo = std::min(lo, r[c]), hi = std::max(hi, r[c]);
        for (auto& r : rows) r[c] = hi > lo ? (r[c] - lo) / (hi - lo) : 0.0;
    }
    for (auto& r : rows) d.inputs.push_back(Tensor::vector(std::move(r)));
    return d;
}

DataSplits split_dataset(const Dataset& all, std::size_t train, std::size_t pool) {
    if (train + pool > all.size())
        throw Error("split_dataset: " + std::to_string(train + pool) + " items requested from " +
                    std::to_string(all.size()));
    return {all.slice(0, train), all.slice(train, train + pool), all.slice(train + pool, all.size())};
}

}  // namespace themis
