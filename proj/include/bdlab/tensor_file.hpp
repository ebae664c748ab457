#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "bdlab/model.hpp"

namespace bdlab {

/// Named f32 tensors plus a free-form JSON metadata document.
///
/// Layout: u64 LE header length, JSON manifest
/// {name: {dtype: "f32", shape, byte_offset, byte_len}, "__metadata__": {...}},
/// then the payload. Offsets are relative to the payload start.
struct TensorFile {
    std::map<std::string, Tensor> tensors;
    std::string metadata_json = "{}";
};

inline const std::string kMetadataKey = "__metadata__";

std::string encode_tensor_file(const TensorFile& file);
TensorFile decode_tensor_file(std::string_view bytes);

void save_tensor_file(const TensorFile& file, const std::filesystem::path& path);
TensorFile load_tensor_file(const std::filesystem::path& path);

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Rounds every tensor value through f32, matching what a save/load cycle yields.
Checkpoint round_to_f32(const Checkpoint& ckpt);

}  // namespace bdlab
