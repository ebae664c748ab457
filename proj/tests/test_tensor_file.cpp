#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>

#include "bdlab/config.hpp"
#include "bdlab/io.hpp"
#include "bdlab/tensor_file.hpp"

using namespace bdlab;

namespace {

std::string le64(std::uint64_t v) {
    std::string s(8, '\0');
    for (int i = 0; i < 8; ++i) s[static_cast<std::size_t>(i)] = static_cast<char>((v >> (8 * i)) & 0xff);
    return s;
}

std::string raw_file(const std::string& manifest, std::size_t payload_bytes) {
    return le64(manifest.size()) + manifest + std::string(payload_bytes, '\0');
}

ModelConfig small() {
    ModelConfig c;
    c.d_model = 8;
    c.n_heads = 2;
    c.n_layers = 2;
    c.d_ffn = 8;
    return c;
}

std::string error_of(std::string_view bytes) {
    try {
        decode_tensor_file(bytes);
    } catch (const Error& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST(TensorFile, LayoutIsLittleEndianF32WithSortedManifest) {
    TensorFile f;
    f.tensors["b"] = Tensor{{2}, {1.5, -2.0}};
    f.tensors["a"] = Tensor{{1, 1}, {0.25}};
    f.metadata_json = R"({"k":1})";
    const std::string bytes = encode_tensor_file(f);
    std::uint64_t header_len = 0;
    for (int i = 7; i >= 0; --i) header_len = (header_len << 8) | static_cast<unsigned char>(bytes[static_cast<std::size_t>(i)]);
    const auto manifest = nlohmann::json::parse(bytes.substr(8, header_len));
    EXPECT_EQ(manifest["a"]["dtype"], "f32");
    EXPECT_EQ(manifest["a"]["byte_offset"], 0);
    EXPECT_EQ(manifest["a"]["byte_len"], 4);
    EXPECT_EQ(manifest["b"]["byte_offset"], 4);
    EXPECT_EQ(manifest["b"]["shape"], nlohmann::json::array({2}));
    EXPECT_EQ(manifest["__metadata__"]["k"], 1);
    ASSERT_EQ(bytes.size(), 8 + header_len + 12);
    float v[3];
    std::memcpy(v, bytes.data() + 8 + header_len, 12);
    EXPECT_EQ(v[0], 0.25f);
    EXPECT_EQ(v[1], 1.5f);
    EXPECT_EQ(v[2], -2.0f);
    const auto back = decode_tensor_file(bytes);
    EXPECT_EQ(back.tensors, f.tensors);
}

TEST(TensorFile, CheckpointRoundTripIsF32StableAndBitIdentical) {
    const Checkpoint ck = init_model(small(), 3);
    const std::string first = serialize_checkpoint(ck);
    const Checkpoint back = deserialize_checkpoint(first);
    EXPECT_EQ(back.config, ck.config);
    EXPECT_EQ(back, round_to_f32(ck));
    for (const auto& [name, t] : ck.tensors)
        for (std::size_t i = 0; i < t.size(); ++i)
            EXPECT_NEAR(back.at(name).values[i], t.values[i], 1e-7 * std::max(1.0, std::abs(t.values[i])));
    EXPECT_EQ(serialize_checkpoint(back), first);

    const auto path = std::filesystem::temp_directory_path() / "bdlab_tensor_file_roundtrip.bdt";
    save_checkpoint(ck, path);
    EXPECT_EQ(read_file(path), first);
    EXPECT_EQ(load_checkpoint(path), back);
    std::filesystem::remove(path);
}

TEST(TensorFile, TruncationRejected) {
    const std::string bytes = serialize_checkpoint(init_model(small(), 4));
    EXPECT_NE(error_of(bytes.substr(0, 5)).find("offset 0"), std::string::npos);
    EXPECT_NE(error_of(bytes.substr(0, 40)).find("offset 0"), std::string::npos);
    const std::string cut = error_of(bytes.substr(0, bytes.size() - 4));
    EXPECT_NE(cut.find("exceeds payload"), std::string::npos) << cut;
    EXPECT_NE(cut.find("offset"), std::string::npos);
    EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, bytes.size() - 1)), Error);
}

TEST(TensorFile, OverlapRejected) {
    const std::string m =
        R"({"a":{"dtype":"f32","shape":[2],"byte_offset":0,"byte_len":8},"b":{"dtype":"f32","shape":[2],"byte_offset":4,"byte_len":8}})";
    const std::string e = error_of(raw_file(m, 12));
    EXPECT_NE(e.find("overlaps"), std::string::npos) << e;
    EXPECT_NE(e.find("offset 4"), std::string::npos) << e;
}

TEST(TensorFile, ManifestValidation) {
    EXPECT_NE(error_of(raw_file(R"({"a":{"dtype":"f64","shape":[1],"byte_offset":0,"byte_len":8}})", 8)), "");
    EXPECT_NE(error_of(raw_file(R"({"a":{"dtype":"f32","shape":[3],"byte_offset":0,"byte_len":8}})", 12)), "");
    EXPECT_NE(error_of(raw_file(R"({"a":{"dtype":"f32","shape":[0],"byte_offset":0,"byte_len":0}})", 0)), "");
    EXPECT_NE(error_of(raw_file(R"({"a":{"dtype":"f32","shape":[1],"byte_offset":100,"byte_len":4}})", 8)), "");
    EXPECT_NE(error_of(raw_file(R"([1,2])", 0)), "");
    EXPECT_NE(error_of(raw_file(R"({"a":)", 0)).find("offset 8"), std::string::npos);
    EXPECT_EQ(error_of(raw_file(R"({"a":{"dtype":"f32","shape":[1],"byte_offset":4,"byte_len":4}})", 8)), "");
}

TEST(TensorFile, CheckpointMetadataRequired) {
    TensorFile f;
    f.tensors["x"] = Tensor{{1}, {1.0}};
    EXPECT_THROW(deserialize_checkpoint(encode_tensor_file(f)), Error);
    Checkpoint ck = init_model(small(), 5);
    ck.tensors.erase("head.bias");
    EXPECT_THROW(serialize_checkpoint(ck), Error);
    EXPECT_THROW(load_checkpoint("/nonexistent/x.bdt"), Error);
}

TEST(TensorFile, EncodeRejectsInconsistentTensors) {
    TensorFile f;
    f.tensors["x"] = Tensor{{2, 2}, {1.0}};
    EXPECT_THROW(encode_tensor_file(f), Error);
    TensorFile g;
    g.tensors["__metadata__"] = Tensor{{1}, {1.0}};
    EXPECT_THROW(encode_tensor_file(g), Error);
    TensorFile h;
    h.metadata_json = "{nope";
    EXPECT_THROW(encode_tensor_file(h), Error);
}

TEST(Io, Sha256KnownVectors) {
    EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Io, AtomicWriteCreatesParents) {
    const auto dir = std::filesystem::temp_directory_path() / "bdlab_io_test";
    std::filesystem::remove_all(dir);
    write_file_atomic(dir / "a" / "b.txt", "hello");
    EXPECT_EQ(read_file(dir / "a" / "b.txt"), "hello");
    write_file_atomic(dir / "a" / "b.txt", "bye");
    EXPECT_EQ(read_file(dir / "a" / "b.txt"), "bye");
    EXPECT_EQ(sha256_file(dir / "a" / "b.txt"), sha256_hex("bye"));
    std::filesystem::remove_all(dir);
}
