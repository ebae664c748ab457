#include "bdlab/tensor_file.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <limits>

#include "bdlab/config.hpp"
#include "bdlab/io.hpp"

namespace bdlab {

namespace {

constexpr std::size_t kHeaderPrefix = 8;

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(std::string_view in) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(in[static_cast<std::size_t>(i)]);
    return v;
}

void put_f32(std::string& out, double x) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(x));
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

double get_f32(const char* p) {
    std::uint32_t bits = 0;
    for (int i = 3; i >= 0; --i) bits = (bits << 8) | static_cast<unsigned char>(p[i]);
    return static_cast<double>(std::bit_cast<float>(bits));
}

struct Entry {
    std::string name;
    std::vector<std::size_t> shape;
    std::uint64_t offset = 0;
    std::uint64_t length = 0;
};

Entry parse_entry(const std::string& name, const Json& e) {
    const auto fail = [&](const std::string& msg) -> Error {
        return Error("tensor file: manifest entry '" + name + "': " + msg);
    };
    if (!e.is_object()) throw fail("not an object");
    if (!e.contains("dtype") || e["dtype"] != "f32") throw fail("dtype must be \"f32\"");
    for (const char* key : {"shape", "byte_offset", "byte_len"})
        if (!e.contains(key)) throw fail(std::string("missing ") + key);
    const auto& shape = e["shape"];
    if (!shape.is_array() || shape.empty() || shape.size() > 2) throw fail("shape must have rank 1 or 2");
    if (!e["byte_offset"].is_number_unsigned() && !(e["byte_offset"].is_number_integer() && e["byte_offset"] == 0))
        throw fail("byte_offset must be a non-negative integer");
    if (!e["byte_len"].is_number_unsigned() && !(e["byte_len"].is_number_integer() && e["byte_len"] == 0))
        throw fail("byte_len must be a non-negative integer");
    Entry out;
    out.name = name;
    std::uint64_t count = 1;
    for (const auto& d : shape) {
        if (!d.is_number_unsigned()) throw fail("shape entries must be positive integers");
        const auto v = d.get<std::uint64_t>();
        if (v == 0 || count > std::numeric_limits<std::uint64_t>::max() / 4 / v) throw fail("invalid shape");
        count *= v;
        out.shape.push_back(static_cast<std::size_t>(v));
    }
    out.offset = e["byte_offset"].get<std::uint64_t>();
    out.length = e["byte_len"].get<std::uint64_t>();
    if (count * 4 != out.length)
        throw fail("byte_len " + std::to_string(out.length) + " at offset " + std::to_string(out.offset) +
                   " does not match shape (" + std::to_string(count * 4) + " bytes)");
    return out;
}

}  // namespace

std::string encode_tensor_file(const TensorFile& file) {
    Json manifest = Json::object();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : file.tensors) {
        if (name == kMetadataKey) throw Error("tensor file: reserved tensor name " + name);
        std::size_t count = 1;
        for (auto d : t.shape) count *= d;
        if (t.shape.empty() || count != t.values.size())
            throw Error("tensor file: tensor '" + name + "' shape " + t.shape_string() + " does not match " +
                        std::to_string(t.values.size()) + " values");
        const std::uint64_t len = 4 * static_cast<std::uint64_t>(count);
        manifest[name] = Json{{"dtype", "f32"}, {"shape", t.shape}, {"byte_offset", offset}, {"byte_len", len}};
        offset += len;
    }
    Json meta;
    try {
        meta = Json::parse(file.metadata_json);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(std::string("tensor file: metadata is not valid JSON: ") + e.what());
    }
    manifest[kMetadataKey] = meta;
    const std::string header = manifest.dump();
    std::string out;
    out.reserve(kHeaderPrefix + header.size() + offset);
    put_u64(out, header.size());
    out += header;
    for (const auto& [name, t] : file.tensors)
        for (double v : t.values) put_f32(out, v);
    return out;
}

TensorFile decode_tensor_file(std::string_view bytes) {
    if (bytes.size() < kHeaderPrefix)
        throw Error("tensor file: truncated header length at offset 0 (" + std::to_string(bytes.size()) + " bytes)");
    const std::uint64_t header_len = get_u64(bytes.substr(0, kHeaderPrefix));
    if (header_len > bytes.size() - kHeaderPrefix)
        throw Error("tensor file: header length " + std::to_string(header_len) + " at offset 0 exceeds file size " +
                    std::to_string(bytes.size()));
    Json manifest;
    try {
        manifest = Json::parse(bytes.substr(kHeaderPrefix, header_len));
    } catch (const nlohmann::json::parse_error& e) {
        throw Error("tensor file: malformed manifest at offset " + std::to_string(kHeaderPrefix) + ": " + e.what());
    }
    if (!manifest.is_object()) throw Error("tensor file: manifest at offset 8 is not an object");

    const std::size_t payload_start = kHeaderPrefix + header_len;
    const std::uint64_t payload_size = bytes.size() - payload_start;
    TensorFile file;
    std::vector<Entry> entries;
    for (const auto& [name, e] : manifest.items()) {
        if (name == kMetadataKey) {
            file.metadata_json = e.dump();
            continue;
        }
        entries.push_back(parse_entry(name, e));
    }
    for (const auto& e : entries) {
        if (e.offset > payload_size || e.length > payload_size - e.offset)
            throw Error("tensor file: tensor '" + e.name + "' range at offset " + std::to_string(e.offset) + " (+" +
                        std::to_string(e.length) + ") exceeds payload of " + std::to_string(payload_size) +
                        " bytes (truncated?)");
    }
    auto sorted = entries;
    std::sort(sorted.begin(), sorted.end(), [](const Entry& a, const Entry& b) { return a.offset < b.offset; });
    for (std::size_t i = 1; i < sorted.size(); ++i) {
        if (sorted[i].offset < sorted[i - 1].offset + sorted[i - 1].length)
            throw Error("tensor file: tensor '" + sorted[i].name + "' at offset " + std::to_string(sorted[i].offset) +
                        " overlaps '" + sorted[i - 1].name + "'");
    }
    for (const auto& e : entries) {
        Tensor t;
        t.shape = e.shape;
        t.values.resize(static_cast<std::size_t>(e.length / 4));
        const char* p = bytes.data() + payload_start + e.offset;
        for (std::size_t i = 0; i < t.values.size(); ++i) t.values[i] = get_f32(p + 4 * i);
        file.tensors.emplace(e.name, std::move(t));
    }
    return file;
}

void save_tensor_file(const TensorFile& file, const std::filesystem::path& path) {
    write_file_atomic(path, encode_tensor_file(file));
}

TensorFile load_tensor_file(const std::filesystem::path& path) {
    try {
        return decode_tensor_file(read_file(path));
    } catch (const Error& e) {
        throw Error(path.string() + ": " + e.what());
    }
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
    ckpt.validate();
    TensorFile f;
    f.tensors = ckpt.tensors;
    f.metadata_json = Json{{"format", "bdlab-checkpoint"}, {"config", to_json(ckpt.config)}}.dump();
    return encode_tensor_file(f);
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
    TensorFile f = decode_tensor_file(bytes);
    const Json meta = Json::parse(f.metadata_json);
    if (!meta.is_object() || !meta.contains("config") || meta.value("format", "") != "bdlab-checkpoint")
        throw Error("tensor file: metadata does not describe a checkpoint");
    Checkpoint ckpt;
    ckpt.config = model_config_from_json(meta["config"]);
    ckpt.tensors = std::move(f.tensors);
    ckpt.validate();
    return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    write_file_atomic(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    try {
        return deserialize_checkpoint(read_file(path));
    } catch (const Error& e) {
        throw Error(path.string() + ": " + e.what());
    }
}

Checkpoint round_to_f32(const Checkpoint& ckpt) {
    Checkpoint out = ckpt;
    for (auto& [name, t] : out.tensors)
        for (double& v : t.values) v = static_cast<double>(static_cast<float>(v));
    return out;
}

}  // namespace bdlab
