#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "themis/model.hpp"

namespace themis {

class FormatError : public Error {
public:
    using Error::Error;
};

/// THM1 container:
///   bytes 0..4   ASCII "THM1\n"
///   next 4       u32 little-endian manifest length L
///   next L       UTF-8 JSON manifest
///   remainder    little-endian f64 blobs, concatenated in manifest order
/// There is no padding anywhere.
inline constexpr char kThm1Magic[] = "THM1\n";

std::string serialize_model(const Model& model);
Model deserialize_model(const std::string& bytes);

void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

/// A list of tensors in the same THM1 layout; the manifest lists shapes.
std::string serialize_tensors(const std::vector<Tensor>& tensors);
std::vector<Tensor> deserialize_tensors(const std::string& bytes);

void save_tensors(const std::vector<Tensor>& tensors, const std::filesystem::path& path);
std::vector<Tensor> load_tensors(const std::filesystem::path& path);

/// FNV-1a 64 of the serialized model, hex encoded; used to tag reports.
std::string model_fingerprint(const Model& model);

std::string read_file(const std::filesystem::path& path);
/// Writes via a temporary file and rename so readers never see partial output.
void write_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace themis
