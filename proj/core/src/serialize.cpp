#include "themis/serialize.hpp"

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace themis {

namespace {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "THM1 blobs are written in native little-endian order");

void append_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void append_blob(std::string& out, const Tensor& t) {
    const auto* p = reinterpret_cast<const char*>(t.data().data());
    out.append(p, t.size() * sizeof(double));
}

std::string pack(const json& manifest, const std::vector<const Tensor*>& blobs) {
    const std::string text = manifest.dump();
    std::string out(kThm1Magic, 5);
    append_u32(out, static_cast<std::uint32_t>(text.size()));
    out += text;
    for (const auto* t : blobs) append_blob(out, *t);
    return out;
}

struct Unpacked {
    json manifest;
    std::size_t blob_offset = 0;
};

Unpacked unpack(const std::string& bytes) {
    if (bytes.size() < 9 || bytes.compare(0, 5, kThm1Magic, 5) != 0) throw FormatError("THM1: bad magic");
    std::uint32_t len = 0;
    for (int i = 0; i < 4; ++i) len |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[5 + i])) << (8 * i);
    if (bytes.size() < 9 + static_cast<std::size_t>(len))
        throw FormatError("THM1: truncated manifest (need " + std::to_string(len) + " bytes, have " +
                          std::to_string(bytes.size() - 9) + ")");
    Unpacked u;
    try {
        u.manifest = json::parse(bytes.begin() + 9, bytes.begin() + 9 + len);
    } catch (const json::exception& e) {
        throw FormatError(std::string("THM1: manifest is not valid JSON: ") + e.what());
    }
    u.blob_offset = 9 + len;
    return u;
}

Shape shape_from_json(const json& j) {
    if (!j.is_array()) throw FormatError("THM1: shape must be an array");
    Shape s;
    for (const auto& d : j) {
        if (!d.is_number_unsigned() || d.get<std::size_t>() == 0) throw FormatError("THM1: bad dimension in shape");
        s.push_back(d.get<std::size_t>());
    }
    return s;
}

/// Reads sequential blobs and checks that their total matches the payload exactly.
class BlobReader {
public:
    BlobReader(const std::string& bytes, std::size_t offset) : bytes_(bytes), pos_(offset) {}

    Tensor take(Shape shape) {
        const std::size_t n = shape_size(shape);
        const std::size_t need = n * sizeof(double);
        if (bytes_.size() - pos_ < need)
            throw FormatError("THM1: truncated blob (manifest declares more parameters than the file holds)");
        std::vector<double> data(n);
        std::memcpy(data.data(), bytes_.data() + pos_, need);
        pos_ += need;
        Tensor t(std::move(shape), std::move(data));
        t.require_finite("THM1 blob");
        return t;
    }

    void finish() const {
        if (pos_ != bytes_.size())
            throw FormatError("THM1: " + std::to_string(bytes_.size() - pos_) +
                              " trailing bytes beyond the blobs the manifest declares");
    }

private:
    const std::string& bytes_;
    std::size_t pos_;
};

}  // namespace

std::string serialize_model(const Model& model) {
    json layers = json::array();
    std::vector<const Tensor*> blobs;
    for (const auto& l : model.layers()) {
        json d{{"kind", std::string(to_string(l.kind))}};
        if (l.has_params()) {
            d["weight_shape"] = l.weight.shape();
            d["bias_shape"] = l.bias.shape();
            blobs.push_back(&l.weight);
            blobs.push_back(&l.bias);
        }
        if (l.kind == LayerKind::conv2d) d["stride"] = l.stride;
        layers.push_back(std::move(d));
    }
    json manifest{{"format", "themis-model"},
                  {"arch_name", model.arch_name()},
                  {"input_shape", model.input_shape()},
                  {"layers", std::move(layers)}};
    return pack(manifest, blobs);
}

Model deserialize_model(const std::string& bytes) {
    auto u = unpack(bytes);
    const auto& m = u.manifest;
    try {
        if (m.value("format", "") != "themis-model") throw FormatError("THM1: not a model file");
        BlobReader reader(bytes, u.blob_offset);
        std::vector<Layer> layers;
        for (const auto& d : m.at("layers")) {
            auto kind = parse_layer_kind(d.at("kind").get<std::string>());
            if (!kind) throw FormatError("THM1: unknown layer kind " + d.at("kind").dump());
            Layer l;
            l.kind = *kind;
            if (l.has_params()) {
                l.weight = reader.take(shape_from_json(d.at("weight_shape")));
                l.bias = reader.take(shape_from_json(d.at("bias_shape")));
            }
            if (l.kind == LayerKind::conv2d) l.stride = d.at("stride").get<std::size_t>();
            layers.push_back(std::move(l));
        }
        reader.finish();
        return Model(m.at("arch_name").get<std::string>(), shape_from_json(m.at("input_shape")), std::move(layers));
    } catch (const json::exception& e) {
        throw FormatError(std::string("THM1: malformed manifest: ") + e.what());
    } catch (const ShapeError& e) {
        throw FormatError(std::string("THM1: inconsistent layer shapes: ") + e.what());
    }
}

std::string serialize_tensors(const std::vector<Tensor>& tensors) {
    json shapes = json::array();
    std::vector<const Tensor*> blobs;
    for (const auto& t : tensors) {
        shapes.push_back(t.shape());
        blobs.push_back(&t);
    }
    return pack(json{{"format", "themis-tensors"}, {"shapes", std::move(shapes)}}, blobs);
}

std::vector<Tensor> deserialize_tensors(const std::string& bytes) {
    auto u = unpack(bytes);
    try {
        if (u.manifest.value("format", "") != "themis-tensors") throw FormatError("THM1: not a tensor bundle");
        BlobReader reader(bytes, u.blob_offset);
        std::vector<Tensor> out;
        for (const auto& s : u.manifest.at("shapes")) out.push_back(reader.take(shape_from_json(s)));
        reader.finish();
        return out;
    } catch (const json::exception& e) {
        throw FormatError(std::string("THM1: malformed manifest: ") + e.what());
    }
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw Error("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

void save_model(const Model& model, const std::filesystem::path& path) { write_file(path, serialize_model(model)); }
Model load_model(const std::filesystem::path& path) { return deserialize_model(read_file(path)); }

void save_tensors(const std::vector<Tensor>& tensors, const std::filesystem::path& path) {
    write_file(path, serialize_tensors(tensors));
}
std::vector<Tensor> load_tensors(const std::filesystem::path& path) { return deserialize_tensors(read_file(path)); }

std::string model_fingerprint(const Model& model) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : serialize_model(model)) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace themis
